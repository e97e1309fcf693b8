import json
import subprocess
import sys

import numpy as np
import pytest

from gppi.cli import main as cli_main
from gppi.errors import ConfigError
from gppi.harness import (fill_defaults, load_config, run_baseline,
                          run_compose, run_learn)
from gppi.records import load_record, save_manifest
from gppi.rng import RngHub


def _linear_config(tmp_path, seed=0, trials=2):
    return {
        "plant": {"name": "linear",
                  "params": {"A": [[-0.4]], "Bc": [[1.0]], "B": [[0.08]],
                             "sigma_omega": [[1.0]]}},
        "cost": {"Q_diag": [1.0], "x_d": [0.5], "lambda": 0.5,
                 "horizon_steps": 10},
        "protocol": {"trials": trials, "seed": seed, "init_rollouts": 1,
                     "u_max": 2.0, "inner_max_iters": 2, "max_points": 60,
                     "baseline_samples": 200, "baseline_iterations": 3},
        "output_dir": str(tmp_path / "run"),
    }


class TestConfig:
    def test_defaults_filled(self):
        cfg = fill_defaults({"cost": {"Q_diag": [1.0, 1.0, 1.0, 1.0],
                                      "x_d": [0, 0, 3.14, 0]}})
        assert cfg["protocol"]["init_rollouts"] == 2      # cartpole default
        assert cfg["cost"]["horizon_steps"] == 60

    def test_dpc_defaults(self):
        cfg = fill_defaults({"plant": {"name": "dpc"},
                             "cost": {"Q_diag": [1] * 6, "x_d": [0] * 6}})
        assert cfg["protocol"]["init_rollouts"] == 6

    def test_arm_defaults(self):
        cfg = fill_defaults({"plant": {"name": "two-link-arm"},
                             "cost": {"Q_diag": [1] * 4, "x_d": [0] * 4}})
        assert cfg["protocol"]["init_rollouts"] == 3
        assert cfg["cost"]["horizon_steps"] == 100

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            fill_defaults({"costs": {}})
        with pytest.raises(ConfigError):
            fill_defaults({"cost": {"Qdiag": [1.0]}})

    def test_missing_required_rejected(self):
        with pytest.raises(ConfigError):
            fill_defaults({})

    def test_round_trip_identity(self, tmp_path):
        cfg = fill_defaults({"cost": {"Q_diag": [1, 1, 1, 1],
                                      "x_d": [0, 0, 3.14159, 0]}})
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert load_config(p) == cfg


class TestRunLearn:
    def test_artifacts_written(self, tmp_path):
        out = run_learn(_linear_config(tmp_path))["out_dir"]
        for name in ("metrics.csv", "timing.csv", "model.json",
                     "controller.json", "trace.csv", "config_snapshot.json",
                     "version.json"):
            assert (out / name).exists(), name
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "trial,terminal_log_psi,terminal_cost"
        trace_header = (out / "trace.csv").read_text().splitlines()[0]
        assert trace_header.startswith("step,t,mu_0,sigma_diag_0,u_0")
        assert trace_header.endswith("log_psi")

    def test_byte_identical_metrics_under_fixed_seed(self, tmp_path):
        cfg1 = _linear_config(tmp_path / "a", seed=3)
        cfg2 = _linear_config(tmp_path / "b", seed=3)
        out1 = run_learn(cfg1)["out_dir"]
        out2 = run_learn(cfg2)["out_dir"]
        assert (out1 / "metrics.csv").read_bytes() \
            == (out2 / "metrics.csv").read_bytes()
        assert (out1 / "trace.csv").read_bytes() \
            == (out2 / "trace.csv").read_bytes()
        assert (out1 / "controller.json").read_bytes() \
            == (out2 / "controller.json").read_bytes()

    def test_different_seed_changes_outcome(self, tmp_path):
        out1 = run_learn(_linear_config(tmp_path / "a", seed=0))["out_dir"]
        out2 = run_learn(_linear_config(tmp_path / "b", seed=1))["out_dir"]
        assert (out1 / "metrics.csv").read_bytes() \
            != (out2 / "metrics.csv").read_bytes()

    def test_record_schema(self, tmp_path):
        out = run_learn(_linear_config(tmp_path))["out_dir"]
        doc = json.loads((out / "controller.json").read_text())
        assert set(doc) == {"task_id", "x_d", "cost", "controls", "log_psi",
                            "grad_psi_over_psi", "model_ref"}
        assert set(doc["cost"]) == {"Q_diag", "lambda", "dt", "horizon_steps"}
        assert len(doc["controls"]) == 10
        assert len(doc["log_psi"]) == 11

    def test_unwritable_output_dir(self, tmp_path):
        cfg = _linear_config(tmp_path)
        blocker = tmp_path / "blocked"
        blocker.write_text("")
        cfg["output_dir"] = str(blocker / "sub")
        with pytest.raises(ConfigError):
            run_learn(cfg)


class TestRunCompose:
    def _make_library(self, tmp_path, targets=(0.3, 0.6)):
        paths = []
        for k, t in enumerate(targets):
            cfg = _linear_config(tmp_path / f"task{k}", trials=2)
            cfg["cost"]["x_d"] = [t]
            out = run_learn(cfg)["out_dir"]
            paths.append(out / "controller.json")
        manifest = tmp_path / "manifest.json"
        save_manifest(manifest, paths, [2.0])
        doc = json.loads(manifest.read_text())
        doc["plant"] = {"name": "linear",
                        "params": {"A": [[-0.4]], "Bc": [[1.0]],
                                   "B": [[0.08]], "sigma_omega": [[1.0]]}}
        manifest.write_text(json.dumps(doc))
        return manifest

    def test_single_task_manifest_reproduces_record(self, tmp_path):
        manifest = self._make_library(tmp_path, targets=(0.3,))
        res = run_compose(manifest, [0.3],
                          output_dir=tmp_path / "composite")
        rec = load_record(json.loads(manifest.read_text())["records"][0])
        assert np.array_equal(res["record"].controls, rec.controls)
        assert np.allclose(res["record"].log_psi, rec.log_psi)

    def test_two_task_compose_writes_metrics(self, tmp_path):
        manifest = self._make_library(tmp_path)
        res = run_compose(manifest, [0.45],
                          output_dir=tmp_path / "composite")
        out = res["out_dir"]
        rows = (out / "metrics.csv").read_text().splitlines()
        assert rows[0] == "task,terminal_log_psi"
        assert len(rows) == 4  # composite + two tasks
        assert (out / "trace.csv").exists()

    def test_malformed_manifest_distinct_exit(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"records": []}))
        code = cli_main(["compose", str(bad), "--target", "0.1"])
        assert code == 2

    def test_misaligned_records_error(self, tmp_path):
        paths = []
        for k, lam in enumerate((0.5, 0.7)):
            cfg = _linear_config(tmp_path / f"t{k}", trials=1)
            cfg["cost"]["lambda"] = lam
            out = run_learn(cfg)["out_dir"]
            paths.append(out / "controller.json")
        manifest = tmp_path / "m.json"
        save_manifest(manifest, paths, [1.0])
        with pytest.raises(ConfigError):
            run_compose(manifest, [0.4])


class TestRunBaseline:
    def test_baseline_trace_schema_matches(self, tmp_path):
        cfg = _linear_config(tmp_path)
        res = run_baseline(cfg)
        header = (res["out_dir"] / "trace.csv").read_text().splitlines()[0]
        assert header == "step,t,mu_0,sigma_diag_0,u_0,log_psi"


class TestCli:
    def test_learn_and_exit_codes(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_linear_config(tmp_path)))
        assert cli_main(["learn", str(cfg_path)]) == 0

    def test_config_error_exit_2(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert cli_main(["learn", str(p)]) == 2
        assert cli_main(["learn", str(tmp_path / "missing.json")]) == 2

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "gppi.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("learn", "compose", "baseline-pi", "check"):
            assert sub in proc.stdout


class TestRng:
    def test_named_streams_independent_and_stable(self):
        hub = RngHub(5)
        a1 = hub.stream("plant-noise").standard_normal(4)
        b1 = hub.stream("init-controls").standard_normal(4)
        a2 = hub.stream("plant-noise").standard_normal(4)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b1)

    def test_adding_component_does_not_shift_existing(self):
        hub = RngHub(9)
        before = hub.stream("plant-noise").standard_normal(8)
        hub.stream("a-new-component").standard_normal(8)
        after = hub.stream("plant-noise").standard_normal(8)
        assert np.array_equal(before, after)
