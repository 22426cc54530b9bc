"""Binary snapshots, CSV time series and the run manifest.

Field snapshot layout: 16-byte header (8-byte magic "KINFLOWF", uint32
version, uint32 kind: 1 = cell scalar, 2 = staggered vector), two
little-endian int64 grid dims, then row-major float64 data per component
(u block then v block for vectors).

Particle snapshot: header (magic "KINFLOWP", uint32 version, uint32
reserved, int64 count) then (x, y, vx, vy, w) as float64 per particle.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .fields import GridSpec, ScalarField, VectorField
from .particles import ParticleEnsemble

FIELD_MAGIC = b"KINFLOWF"
PARTICLE_MAGIC = b"KINFLOWP"
VERSION = 1


def write_field_snapshot(path, obj):
    kind = 1 if isinstance(obj, ScalarField) else 2
    g = obj.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II", VERSION, kind))
        fh.write(struct.pack("<qq", g.nx, g.ny))
        if kind == 1:
            fh.write(np.ascontiguousarray(obj.data, dtype="<f8").tobytes())
        else:
            fh.write(np.ascontiguousarray(obj.u, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(obj.v, dtype="<f8").tobytes())


def read_field_snapshot(path, grid: GridSpec = None):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FIELD_MAGIC:
            raise ValueError("not a field snapshot: %r" % (path,))
        version, kind = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError("unsupported snapshot version %d" % version)
        nx, ny = struct.unpack("<qq", fh.read(16))
        if grid is None:
            grid = GridSpec(nx=nx, ny=ny, dt=1.0, T=1.0)
        elif (grid.nx, grid.ny) != (nx, ny):
            raise ValueError("snapshot dims %s do not match the grid" % ((nx, ny),))
        if kind == 1:
            data = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8").reshape(nx, ny)
            return ScalarField(grid, data.copy())
        u = np.frombuffer(fh.read(8 * (nx + 1) * ny), dtype="<f8").reshape(nx + 1, ny)
        v = np.frombuffer(fh.read(8 * nx * (ny + 1)), dtype="<f8").reshape(nx, ny + 1)
        return VectorField(grid, u.copy(), v.copy())


def write_particle_snapshot(path, ens: ParticleEnsemble):
    with open(path, "wb") as fh:
        fh.write(PARTICLE_MAGIC)
        fh.write(struct.pack("<II", VERSION, 0))
        fh.write(struct.pack("<q", ens.count))
        table = np.column_stack([ens.x, ens.v, ens.w])
        fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())


def read_particle_snapshot(path) -> ParticleEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != PARTICLE_MAGIC:
            raise ValueError("not a particle snapshot: %r" % (path,))
        version, _ = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError("unsupported snapshot version %d" % version)
        (count,) = struct.unpack("<q", fh.read(8))
        table = np.frombuffer(fh.read(8 * 5 * count), dtype="<f8").reshape(count, 5)
        return ParticleEnsemble(table[:, 0:2].copy(), table[:, 2:4].copy(),
                                table[:, 4].copy())


def write_timeseries(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["%.17g" % v if isinstance(v, float) else v for v in row])


def write_tensor_csv(path, tensors, times=None):
    """Flattened fourth-order tensors, one per row (time column if given)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        labels = ["c%d%d%d%d" % (i, j, k, l) for i in (0, 1) for j in (0, 1)
                  for k in (0, 1) for l in (0, 1)]
        if times is None:
            writer.writerow(labels)
            writer.writerow(["%.17g" % v for v in np.asarray(tensors).ravel()])
        else:
            writer.writerow(["t"] + labels)
            for t, tensor in zip(times, tensors):
                writer.writerow(["%.17g" % t] + ["%.17g" % v for v in np.asarray(tensor).ravel()])


def read_tensor_csv(path):
    """Inverse of write_tensor_csv: (tensor,) or (times, sequence)."""
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] == "t":
        times = np.array([float(r[0]) for r in body])
        seq = np.array([[float(v) for v in r[1:]] for r in body]).reshape(-1, 2, 2, 2, 2)
        return times, seq
    return np.array([float(v) for v in body[0]]).reshape(2, 2, 2, 2)


class Manifest:
    """Tracks every artifact written under one output directory."""

    def __init__(self, out_dir, config_hash=""):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.entries = []

    def path(self, name):
        return self.out_dir / name

    def register(self, name):
        p = self.path(name)
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        self.entries.append({"name": str(name), "sha256": digest})
        return p

    def write(self, name, writer):
        """writer(path) produces the file; it is then checksummed."""
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        writer(p)
        return self.register(name)

    def finalize(self):
        payload = {"config_hash": self.config_hash, "files": self.entries}
        with open(self.out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        return self.out_dir / "manifest.json"
