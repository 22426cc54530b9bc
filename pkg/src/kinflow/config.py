"""Flat key = value run configuration.

One assignment per line, '#' starts a comment.  Unknown keys are
rejected, missing required keys are reported together, and the epsilon
list must be strictly decreasing reciprocals of integers resolved by at
least 8 cells per period on the configured grid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .fields import GridSpec, _is_reciprocal_of_integer


class ConfigError(ValueError):
    pass


def _parse_eps_list(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "/" in item:
            num, den = item.split("/")
            out.append(float(num) / float(den))
        else:
            out.append(float(item))
    return out


def _parse_int_list(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


@dataclass
class RunConfig:
    scenario: str
    nx: int
    ny: int
    dt: float
    T: float
    eps_list: list
    out_dir: str
    vmax: float = None
    lam: float = 0.0
    snapshot_stride: int = 0
    ny_cell: int = 64
    workers: int = 1
    lattice: tuple = (16, 16, 12, 12)
    coefficient_a0: str = ""
    coefficient_a1: str = ""
    tol_fixed_point: float = 1e-8
    max_iter: int = 30

    def validate(self):
        errors = []
        try:
            GridSpec(nx=self.nx, ny=self.ny, dt=self.dt, T=self.T)
        except ValueError as exc:
            errors.append(str(exc))
        if not self.eps_list:
            errors.append("eps_list must not be empty")
        for eps in self.eps_list:
            if not _is_reciprocal_of_integer(eps):
                errors.append(
                    "eps = %g violates the reciprocal-of-integer constraint" % eps)
            elif self.nx * eps < 8 or self.ny * eps < 8:
                errors.append(
                    "eps = %g under-resolved: nx*eps = %g < 8" % (eps, self.nx * eps))
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            errors.append("eps_list must be strictly decreasing")
        if not 0.0 <= self.lam <= 1.0:
            errors.append("lambda must lie in [0, 1]")
        if self.workers < 1:
            errors.append("workers must be >= 1")
        if len(self.lattice) != 4 or min(self.lattice) < 2:
            errors.append("lattice needs 4 entries >= 2")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return self

    def grid(self, eps=1.0):
        return GridSpec(nx=self.nx, ny=self.ny, dt=self.dt, T=self.T, eps=eps)

    def scenario_obj(self):
        from .scenarios import get_scenario

        return get_scenario(self.scenario, a0_id=self.coefficient_a0 or None,
                            a1_id=self.coefficient_a1 if self.coefficient_a1 else None,
                            vmax=self.vmax, lattice=self.lattice)

    # -- serialization

    def to_text(self):
        lines = ["# kinflow run configuration"]
        lines.append("scenario = %s" % self.scenario)
        lines.append("nx = %d" % self.nx)
        lines.append("ny = %d" % self.ny)
        lines.append("dt = %.17g" % self.dt)
        lines.append("T = %.17g" % self.T)
        lines.append("eps_list = %s" % ", ".join("%.17g" % e for e in self.eps_list))
        lines.append("out_dir = %s" % self.out_dir)
        if self.vmax is not None:
            lines.append("vmax = %.17g" % self.vmax)
        lines.append("lambda = %.17g" % self.lam)
        lines.append("snapshot_stride = %d" % self.snapshot_stride)
        lines.append("ny_cell = %d" % self.ny_cell)
        lines.append("workers = %d" % self.workers)
        lines.append("lattice = %s" % ", ".join(str(v) for v in self.lattice))
        if self.coefficient_a0:
            lines.append("coefficient_a0 = %s" % self.coefficient_a0)
        if self.coefficient_a1:
            lines.append("coefficient_a1 = %s" % self.coefficient_a1)
        lines.append("tol_fixed_point = %.17g" % self.tol_fixed_point)
        lines.append("max_iter = %d" % self.max_iter)
        return "\n".join(lines) + "\n"

    def content_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()


_SCHEMA = {
    "scenario": ("scenario", str, True),
    "nx": ("nx", int, True),
    "ny": ("ny", int, True),
    "dt": ("dt", float, True),
    "T": ("T", float, True),
    "eps_list": ("eps_list", _parse_eps_list, True),
    "out_dir": ("out_dir", str, True),
    "vmax": ("vmax", float, False),
    "lambda": ("lam", float, False),
    "snapshot_stride": ("snapshot_stride", int, False),
    "ny_cell": ("ny_cell", int, False),
    "workers": ("workers", int, False),
    "lattice": ("lattice", _parse_int_list, False),
    "coefficient_a0": ("coefficient_a0", str, False),
    "coefficient_a1": ("coefficient_a1", str, False),
    "tol_fixed_point": ("tol_fixed_point", float, False),
    "max_iter": ("max_iter", int, False),
}


def parse_config(text: str) -> RunConfig:
    values = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append("line %d: expected 'key = value', got %r" % (lineno, raw.strip()))
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            errors.append("line %d: unknown key %r" % (lineno, key))
            continue
        attr, conv, _ = _SCHEMA[key]
        try:
            values[attr] = conv(val)
        except Exception as exc:
            errors.append("line %d: bad value for %s: %s" % (lineno, key, exc))
    missing = [key for key, (attr, _, req) in _SCHEMA.items() if req and attr not in values]
    if missing:
        errors.append("missing required keys: " + ", ".join(sorted(missing)))
    if errors:
        raise ConfigError("configuration errors:\n  " + "\n  ".join(errors))
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
