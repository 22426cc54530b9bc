"""Configuration parsing, snapshot formats, manifest, CLI plumbing."""

import json

import numpy as np
import pytest

from kinflow.config import ConfigError, parse_config
from kinflow.fields import GridSpec, ScalarField, VectorField, cavity_stream_field
from kinflow.io import (
    Manifest,
    read_field_snapshot,
    read_particle_snapshot,
    read_tensor_csv,
    write_field_snapshot,
    write_particle_snapshot,
    write_tensor_csv,
    write_timeseries,
)
from kinflow.particles import ParticleEnsemble

GOOD = """
# sample configuration
scenario = coupled-cloud
nx = 64
ny = 64
dt = 0.01
T = 0.1
eps_list = 1/4, 1/8
out_dir = /tmp/kinflow-test
vmax = 2.0
lambda = 0.25
lattice = 8, 8, 6, 6
"""


class TestConfig:
    def test_parse_good(self):
        cfg = parse_config(GOOD)
        assert cfg.scenario == "coupled-cloud"
        assert cfg.eps_list == [0.25, 0.125]
        assert cfg.lam == 0.25
        assert cfg.lattice == (8, 8, 6, 6)

    def test_empty_file_lists_required_keys(self):
        with pytest.raises(ConfigError) as err:
            parse_config("")
        msg = str(err.value)
        for key in ("scenario", "nx", "ny", "dt", "T", "eps_list", "out_dir"):
            assert key in msg

    def test_unknown_key_rejected_with_line_number(self):
        with pytest.raises(ConfigError) as err:
            parse_config(GOOD + "\nwhatever = 3\n")
        assert "unknown key" in str(err.value)
        assert "whatever" in str(err.value)

    def test_bad_eps_names_constraint(self):
        bad = GOOD.replace("eps_list = 1/4, 1/8", "eps_list = 0.3")
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert "reciprocal" in str(err.value)

    def test_under_resolved_eps_rejected(self):
        bad = GOOD.replace("eps_list = 1/4, 1/8", "eps_list = 1/16")
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert "under-resolved" in str(err.value)

    def test_increasing_eps_rejected(self):
        bad = GOOD.replace("eps_list = 1/4, 1/8", "eps_list = 1/8, 1/4")
        with pytest.raises(ConfigError):
            parse_config(bad)

    def test_round_trip(self):
        cfg = parse_config(GOOD)
        again = parse_config(cfg.to_text())
        assert again == cfg
        assert again.content_hash() == cfg.content_hash()

    def test_parse_error_line_numbers(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario = constant\nnx 32\n")
        assert "line 2" in str(err.value)


class TestSnapshots:
    def test_vector_round_trip(self, tmp_path):
        g = GridSpec(nx=12, ny=20, dt=0.1, T=1.0)
        vec = cavity_stream_field(g, 0.7)
        path = tmp_path / "vel.bin"
        write_field_snapshot(path, vec)
        back = read_field_snapshot(path, g)
        assert np.array_equal(back.u, vec.u)
        assert np.array_equal(back.v, vec.v)

    def test_scalar_round_trip(self, tmp_path):
        g = GridSpec(nx=8, ny=8, dt=0.1, T=1.0)
        phi = ScalarField(g, np.random.default_rng(0).normal(size=(8, 8)))
        path = tmp_path / "p.bin"
        write_field_snapshot(path, phi)
        back = read_field_snapshot(path)
        assert np.array_equal(back.data, phi.data)

    def test_particle_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        ens = ParticleEnsemble(rng.uniform(0, 1, (37, 2)), rng.normal(size=(37, 2)),
                               rng.uniform(0, 1, 37))
        path = tmp_path / "cloud.bin"
        write_particle_snapshot(path, ens)
        back = read_particle_snapshot(path)
        assert np.array_equal(back.x, ens.x)
        assert np.array_equal(back.v, ens.v)
        assert np.array_equal(back.w, ens.w)

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTAFILE" + b"\0" * 64)
        with pytest.raises(ValueError):
            read_field_snapshot(path)

    def test_tensor_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        C0 = rng.normal(size=(2, 2, 2, 2))
        path = tmp_path / "C0.csv"
        write_tensor_csv(path, C0)
        back = read_tensor_csv(path)
        assert np.allclose(back, C0, atol=0)
        seq = rng.normal(size=(3, 2, 2, 2, 2))
        times = np.array([0.0, 0.1, 0.2])
        path2 = tmp_path / "C1.csv"
        write_tensor_csv(path2, seq, times=times)
        t_back, s_back = read_tensor_csv(path2)
        assert np.allclose(t_back, times)
        assert np.allclose(s_back, seq, atol=0)


class TestManifest:
    def test_every_artifact_checksummed(self, tmp_path):
        man = Manifest(tmp_path / "out", config_hash="abc123")
        man.write("series.csv", lambda p: write_timeseries(p, ["t", "x"], [[0.0, 1.0]]))
        g = GridSpec(nx=8, ny=8, dt=0.1, T=1.0)
        man.write("vel.bin", lambda p: write_field_snapshot(p, VectorField(g)))
        man.finalize()
        payload = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert payload["config_hash"] == "abc123"
        names = {e["name"] for e in payload["files"]}
        assert names == {"series.csv", "vel.bin"}
        assert all(len(e["sha256"]) == 64 for e in payload["files"])


class TestCli:
    def test_cell_subcommand(self, tmp_path):
        from kinflow.cli import main

        cfg = tmp_path / "run.cfg"
        cfg.write_text(GOOD.replace("/tmp/kinflow-test", str(tmp_path / "out"))
                       .replace("scenario = coupled-cloud", "scenario = sinusoidal-A0")
                       + "ny_cell = 16\n")
        code = main(["cell", "--config", str(cfg)])
        assert code == 0
        assert (tmp_path / "out" / "C0.csv").exists()
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_simulate_subcommand_writes_series(self, tmp_path):
        from kinflow.cli import main

        text = GOOD.replace("/tmp/kinflow-test", str(tmp_path / "out"))
        text = text.replace("T = 0.1", "T = 0.03").replace("nx = 64", "nx = 16")
        text = text.replace("ny = 64", "ny = 16").replace("eps_list = 1/4, 1/8",
                                                          "eps_list = 1/2")
        text = text.replace("lambda = 0.25", "lambda = 0")
        cfg = tmp_path / "run.cfg"
        cfg.write_text(text + "lattice = 4, 4, 4, 4\n")
        code = main(["simulate", "--config", str(cfg)])
        assert code == 0
        assert (tmp_path / "out" / "eps0.5_energy.csv").exists()
        assert (tmp_path / "out" / "eps0.5_moments.csv").exists()

    def test_bad_config_exit_code(self, tmp_path):
        from kinflow.cli import main

        cfg = tmp_path / "bad.cfg"
        cfg.write_text("scenario = constant\n")
        assert main(["simulate", "--config", str(cfg)]) == 1

    def test_check_unknown_criterion(self, capsys):
        from kinflow.cli import main

        assert main(["check", "not-a-criterion"]) == 2
