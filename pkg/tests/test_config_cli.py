import json
import math
from pathlib import Path

import numpy as np
import pytest

from brw2.cli import main
from brw2.config import (ConfigError, config_hash, parse_config, preset,
                         serialize_config)
from brw2.simulate import run, snapshot

MINIMAL = """
model:
  dim: 1
  kernel1: [[[1], 0.5], [[-1], 0.5]]
"""

CRITICAL_1D = """
model:
  dim: 1
  kappa1: 1.0
  kappa2: 4.0
  kernel1: [[[1], 0.5], [[-1], 0.5]]
  kernel2: [[[1], 0.166666666667], [[-1], 0.166666666667],
            [[2], 0.166666666667], [[-2], 0.166666666667],
            [[3], 0.166666666667], [[-3], 0.166666666667]]
  law:
    mu1: 0.25
    mu2: 0.375
    beta1: [[2, 0, 0.125], [1, 1, 0.125]]
    beta2: [[0, 2, 0.125], [1, 1, 0.25]]
experiment:
  t_list: [1.0, 2.0]
  replicas: 2
  seed: 7
"""


class TestParsing:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.dim == 1 and cfg.kappa1 == 1.0 and cfg.kappa2 == 1.0
        assert cfg.kernel2 == cfg.kernel1
        assert cfg.experiment.replicas == 1
        assert cfg.experiment.t_list == (1.0,)
        assert cfg.initial_or_default() == ((1, (0,)),)

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match=r"model\.frobnicate"):
            parse_config(MINIMAL + "  frobnicate: 1\n")

    def test_asymmetric_kernel_names_vector(self):
        bad = """
model:
  dim: 1
  kernel1: [[[1], 0.6], [[-1], 0.4]]
"""
        with pytest.raises(ConfigError, match="not symmetric at displacement"):
            parse_config(bad)

    def test_low_offspring_pair_rejected(self):
        bad = MINIMAL + """  law:
    beta1: [[0, 1, 0.5]]
"""
        with pytest.raises(ConfigError, match="k\\+l < 2"):
            parse_config(bad)

    def test_horizon_below_t_list_rejected(self):
        bad = MINIMAL + """experiment:
  horizon: 0.5
  t_list: [1.0]
"""
        with pytest.raises(ConfigError, match="horizon"):
            parse_config(bad)

    def test_syntax_error_carries_location(self):
        with pytest.raises(ConfigError, match="YAML error"):
            parse_config("model: [unclosed")

    def test_round_trip(self):
        cfg = parse_config(CRITICAL_1D)
        assert parse_config(serialize_config(cfg)) == cfg
        assert config_hash(cfg) == config_hash(parse_config(serialize_config(cfg)))

    def test_presets_round_trip_and_parameters(self):
        z1 = preset("fig-z1")
        assert parse_config(serialize_config(z1)) == z1
        assert len(z1.experiment.initial) == 300
        assert z1.kappa2 == 4.0
        z2 = preset("fig-z2")
        assert z2.dim == 2 and len(z2.experiment.initial) == 200
        law = z2.build_epidemic_law()
        assert law.growth == 0.0 and law.conversion_rate == 0.45
        assert len(z2.experiment.t_list) == 6 and len(z1.experiment.t_list) == 6
        with pytest.raises(ConfigError, match="unknown preset"):
            preset("fig-z9")

    def test_epidemic_law_requires_type1_only(self):
        cfg = parse_config(CRITICAL_1D)
        with pytest.raises(ConfigError, match="beta2"):
            cfg.build_epidemic_law()

    def test_model_builds(self):
        model = parse_config(CRITICAL_1D).build_model()
        assert model.derived.perron_root == pytest.approx(0.0, abs=1e-12)


class TestCli:
    def _run(self, argv):
        return main(argv)

    def test_simulate_outputs_and_library_agreement(self, tmp_path):
        out = tmp_path / "sim"
        rc = self._run(["simulate", "--preset", "fig-z1", "--replicas", "2",
                        "--seed", "7", "--t", "1,2", "--out", str(out)])
        assert rc == 0
        assert (out / "history_0000.csv").exists()
        assert (out / "history_0001.csv").exists()
        assert (out / "manifest.json").exists()
        snap_lines = (out / "snapshot.csv").read_text().strip().splitlines()
        assert snap_lines[0] == "replica,t,type,x1,count"
        # replica 0 snapshot rows must equal the library's snapshot
        cfg = preset("fig-z1").with_overrides(t_list=[1.0, 2.0])
        sim = run(cfg.build_model(), 2.0, cfg.experiment.initial, 7, replica_id=0)
        expect = snapshot(sim, 1.0)
        got = {}
        for line in snap_lines[1:]:
            rid, t, ptype, x, cnt = line.split(",")
            if rid == "0" and float(t) == 1.0:
                got[(int(ptype), (int(x),))] = int(cnt)
        assert got == expect

    def test_simulate_determinism_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            rc = self._run(["simulate", "--preset", "fig-z1", "--replicas", "1",
                            "--seed", "3", "--t", "1", "--out", str(out)])
            assert rc == 0
        assert (a / "history_0000.csv").read_bytes() == (b / "history_0000.csv").read_bytes()
        assert (a / "snapshot.csv").read_bytes() == (b / "snapshot.csv").read_bytes()

    def test_moments_command(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(CRITICAL_1D.replace("kappa2: 4.0", "kappa2: 1.0")
                       + "  box_radius: 10\n")
        out = tmp_path / "mom"
        rc = self._run(["moments", "--config", str(cfg), "--out", str(out),
                        "--t", "1"])
        assert rc == 0
        lines = (out / "moments.csv").read_text().strip().splitlines()
        assert lines[0].startswith("t,x1,m11_1,m12_1,m21_1,m22_1,m11_2")
        assert "parity_1" in lines[0] and "boundary_mass" in lines[0]
        assert len(lines) == 1 + 21   # box radius 10 -> 21 sites
        # parity column stays tiny
        for line in lines[1:]:
            assert float(line.split(",")[-2]) < 1e-5

    def test_epidemic_command(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("""
model:
  dim: 1
  kernel1: [[[1], 0.5], [[-1], 0.5]]
  law:
    mu1: 0.05
    conversion_rate: 0.2
    beta1: [[2, 0, 0.5]]
experiment:
  t_list: [1.0]
  box_radius: 12
  corr_box_radius: 6
""")
        out = tmp_path / "epi"
        rc = self._run(["epidemic", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        epi = (out / "epidemic.csv").read_text().strip().splitlines()
        assert epi[0] == "t,x1,R1,R2,M2_diag,ratio"
        corr = (out / "corr.csv").read_text().strip().splitlines()
        assert corr[0] == "t,u1,R11,R12,R22"
        assert len(corr) == 1 + 13

    def test_clusters_command_1d(self, tmp_path):
        out = tmp_path / "clu"
        rc = self._run(["clusters", "--preset", "fig-z1", "--replicas", "2",
                        "--seed", "5", "--t", "5,10", "--out", str(out)])
        assert rc == 0
        lines = (out / "clusters.csv").read_text().strip().splitlines()
        assert lines[0] == "replica,t,kind,length"
        kinds = {line.split(",")[2] for line in lines[1:]}
        assert "cluster" in kinds

    def test_config_error_exit_code_and_json(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("model:\n  dim: 1\n")   # kernel1 missing
        rc = self._run(["simulate", "--config", str(cfg)])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "config"
        assert "kernel1" in err["path"]

    def test_flag_exclusivity(self, capsys):
        assert self._run(["simulate"]) == 2
        assert self._run(["moments", "--preset", "fig-z1", "--config", "x.yaml"]) == 2
