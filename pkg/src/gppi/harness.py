"""Experiment orchestration: configs, run directories, CSV/JSON artifacts.

A run directory always receives a config snapshot and a version stamp.  The
metric CSVs contain only seed-deterministic columns; wall-clock timings go to
a separate timing.csv so repeated runs with the same seed produce
byte-identical metrics.
"""

from __future__ import annotations

import copy
import json
import logging
import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__
from .compose import (CompositeWeights, TaskLibrary,
                      composite_control_sequence,
                      composite_terminal_log_desirability, task_weights)
from .control import (ControlSequence, CostSpec, mpc_learning_loop,
                      terminal_log_desirability)
from .baselines import PathCostSample, sampling_pi_control
from .errors import ConfigError
from .gp import save_model
from .plants import make_plant
from .records import (ControllerRecord, CostFields, export_trace_csv,
                      load_manifest, load_record, save_record)
from .rng import RngHub

logger = logging.getLogger(__name__)

_PLANT_PROTOCOLS = {
    "cartpole": dict(init_rollouts=2, horizon_steps=60),
    "double-pendulum-cart": dict(init_rollouts=6, horizon_steps=60),
    "two-link-arm": dict(init_rollouts=3, horizon_steps=100),
    "linear": dict(init_rollouts=2, horizon_steps=50),
}

_DEFAULT_CONFIG = {
    "plant": {"name": "cartpole", "dt": 0.02, "substeps": 10,
              "noise_std": 0.01, "params": {}},
    "cost": {"Q_diag": None, "x_d": None, "lambda": 0.2,
             "horizon_steps": None, "terminal_scale": 1.0},
    "protocol": {"init_rollouts": None, "rollouts_per_trial": 1, "trials": 10,
                 "inner_max_iters": 3, "inner_tol": 1e-3, "seed": 0,
                 "u_max": 10.0, "max_points": 250, "x0": None,
                 "baseline_samples": 1000, "baseline_iterations": 50},
    "output_dir": "runs/out",
}


def fill_defaults(config: dict) -> dict:
    """Deep-merge a user config over the defaults and resolve plant fields."""
    out = copy.deepcopy(_DEFAULT_CONFIG)
    for section, value in (config or {}).items():
        if section not in out:
            raise ConfigError(f"unknown config section '{section}'")
        if isinstance(out[section], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"section '{section}' must be an object")
            for key, v in value.items():
                if key not in out[section]:
                    raise ConfigError(f"unknown key '{section}.{key}'")
                out[section][key] = v
        else:
            out[section] = value
    name = out["plant"]["name"].lower().replace("_", "-")
    proto = _PLANT_PROTOCOLS.get(name, _PLANT_PROTOCOLS["linear"])
    if out["protocol"]["init_rollouts"] is None:
        out["protocol"]["init_rollouts"] = proto["init_rollouts"]
    if out["cost"]["horizon_steps"] is None:
        out["cost"]["horizon_steps"] = proto["horizon_steps"]
    if out["cost"]["Q_diag"] is None or out["cost"]["x_d"] is None:
        raise ConfigError("cost.Q_diag and cost.x_d are required")
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return fill_defaults(raw)


def build_plant(plant_cfg: dict):
    return make_plant(plant_cfg["name"], dt=plant_cfg["dt"],
                      substeps=plant_cfg["substeps"],
                      params=plant_cfg["params"] or {},
                      noise_std=plant_cfg["noise_std"])


def build_cost(cost_cfg: dict, dt: float) -> CostSpec:
    q = np.diag(np.asarray(cost_cfg["Q_diag"], dtype=float))
    q_term = cost_cfg["terminal_scale"] * q
    return CostSpec(q, np.asarray(cost_cfg["x_d"], dtype=float),
                    float(cost_cfg["lambda"]), dt,
                    int(cost_cfg["horizon_steps"]), q_term)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _prepare_run_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output dir not writable: {exc}") from exc
    with open(out / "config_snapshot.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    with open(out / "version.json", "w", encoding="utf-8") as fh:
        json.dump({"package_version": __version__,
                   "git": _git_describe()}, fh)
    return out


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(c) if isinstance(c, float) else str(c)
                              for c in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _flush_failure(out_dir: Path, exc: Exception) -> None:
    with open(out_dir / "FAILED", "w", encoding="utf-8") as fh:
        fh.write(f"{type(exc).__name__}: {exc}\n")


def run_learn(config: dict, early_stop=None, on_trial=None) -> dict:
    """Execute the learning protocol and write all run artifacts."""
    config = fill_defaults(config)
    out = _prepare_run_dir(config)
    plant = build_plant(config["plant"])
    cost = build_cost(config["cost"], config["plant"]["dt"])
    proto = config["protocol"]
    x0 = np.zeros(plant.spec.n) if proto["x0"] is None \
        else np.asarray(proto["x0"], dtype=float)
    try:
        result = mpc_learning_loop(
            plant, cost, trials=int(proto["trials"]), seed=int(proto["seed"]),
            init_rollouts=int(proto["init_rollouts"]),
            rollouts_per_trial=int(proto["rollouts_per_trial"]),
            u_max=float(proto["u_max"]),
            inner_max_iters=int(proto["inner_max_iters"]),
            inner_tol=float(proto["inner_tol"]),
            max_points=proto["max_points"], x0=x0,
            early_stop=early_stop, on_trial=on_trial)
    except Exception as exc:
        _flush_failure(out, exc)
        raise

    _write_csv(out / "metrics.csv",
               ["trial", "terminal_log_psi", "terminal_cost"],
               [(m.trial, float(m.terminal_log_psi), float(m.terminal_cost))
                for m in result.metrics])
    _write_csv(out / "timing.csv", ["trial", "wall_seconds"],
               [(m.trial, float(m.wall_seconds)) for m in result.metrics])
    save_model(result.model, out / "model.json")
    record = ControllerRecord(
        task_id=out.name,
        x_d=cost.target_at(cost.horizon_steps),
        cost_fields=CostFields(np.diag(cost.Q), cost.lam, cost.dt,
                               cost.horizon_steps),
        controls=result.controls,
        log_psi=result.log_psi,
        grad_psi_over_psi=result.grad_psi_over_psi,
        model_ref=str(out / "model.json"))
    save_record(record, out / "controller.json")
    export_trace_csv(out / "trace.csv", cost.dt, result.states,
                     np.zeros_like(result.states), result.controls,
                     result.log_psi)
    return {"metrics": result.metrics, "record": record,
            "model": result.model, "out_dir": out, "states": result.states}


def run_compose(manifest_path, new_target, output_dir=None, seed: int = 0) -> dict:
    """Build and execute a composite controller from a record library."""
    doc = load_manifest(manifest_path)
    records = [load_record(p) for p in doc["records"]]
    plant_cfg = {**_DEFAULT_CONFIG["plant"], **(doc.get("plant") or {})}
    plant = build_plant(plant_cfg)
    new_target = np.asarray(new_target, dtype=float)
    if new_target.shape[0] != plant.spec.n:
        raise ConfigError("target dimension does not match plant state")
    p_diag = doc.get("P_diag")
    if p_diag is None:
        p_diag = TaskLibrary.default_kernel_width(records, new_target)
    library = TaskLibrary(records, np.asarray(p_diag, dtype=float))
    weights = task_weights(library, new_target)
    controls = composite_control_sequence(library, weights)

    out = None
    if output_dir is not None:
        cfg = {"output_dir": str(output_dir)}
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "version.json", "w", encoding="utf-8") as fh:
            json.dump({"package_version": __version__,
                       "git": _git_describe()}, fh)

    hub = RngHub(seed)
    ref = records[0].cost_fields
    x0 = doc.get("x0")
    x0 = np.zeros(plant.spec.n) if x0 is None else np.asarray(x0, dtype=float)
    rng = hub.stream("compose-noise")
    states = [x0]
    x = x0
    for t in range(ref.horizon_steps):
        x = plant.step(x, controls.u[t], rng)
        states.append(x)
    states = np.array(states)
    term = composite_terminal_log_desirability(library, weights, states[-1])

    log_psi = np.zeros(ref.horizon_steps + 1)
    for t in range(ref.horizon_steps + 1):
        parts = np.array([w * np.exp(r.log_psi[t]) for w, r in
                          zip(weights.omega_tilde, records)])
        log_psi[t] = np.log(max(parts.sum(), 1e-300))
    record = ControllerRecord(
        task_id="composite",
        x_d=new_target,
        cost_fields=ref,
        controls=controls.u,
        log_psi=log_psi,
        grad_psi_over_psi=np.zeros((ref.horizon_steps + 1, plant.spec.n)),
        model_ref=records[0].model_ref)
    if out is not None:
        save_record(record, out / "controller.json")
        export_trace_csv(out / "trace.csv", ref.dt, states,
                         np.zeros_like(states), controls.u, log_psi)
        _write_csv(out / "metrics.csv",
                   ["task", "terminal_log_psi"],
                   [("composite", float(term))]
                   + [(r.task_id, float(r.log_psi[-1])) for r in records])
    return {"record": record, "states": states, "terminal_log_psi": term,
            "weights": weights, "library": library, "out_dir": out}


def run_baseline(config: dict) -> dict:
    """Sampling-PI baseline on the true plant; same trace schema as learn."""
    config = fill_defaults(config)
    out = _prepare_run_dir(config)
    plant = build_plant(config["plant"])
    cost = build_cost(config["cost"], config["plant"]["dt"])
    proto = config["protocol"]
    hub = RngHub(int(proto["seed"]))
    x0 = np.zeros(plant.spec.n) if proto["x0"] is None \
        else np.asarray(proto["x0"], dtype=float)
    try:
        res = sampling_pi_control(
            plant, x0, np.zeros((cost.horizon_steps, plant.spec.m)), cost,
            n_samples=int(proto["baseline_samples"]),
            rng=hub.stream("baseline-sampling"),
            n_iterations=int(proto["baseline_iterations"]))
    except Exception as exc:
        _flush_failure(out, exc)
        raise
    # executed trace under the final controls
    rng = hub.stream("baseline-exec")
    x = x0
    states = [x0]
    for t in range(cost.horizon_steps):
        x = plant.step(x, res.controls[t], rng)
        states.append(x)
    states = np.array(states)
    # per-step log-desirability surrogate: minus cost-to-go over lambda
    log_psi = np.zeros(cost.horizon_steps + 1)
    for t in range(cost.horizon_steps + 1):
        tail = PathCostSample.path_cost(states[t:], cost.tail(t)) \
            if t < cost.horizon_steps else cost.terminal_cost(states[-1])
        log_psi[t] = -tail / cost.lam
    export_trace_csv(out / "trace.csv", cost.dt, states,
                     np.zeros_like(states), res.controls, log_psi)
    _write_csv(out / "metrics.csv",
               ["terminal_log_psi", "terminal_cost", "ess"],
               [(float(log_psi[-1]), float(cost.terminal_cost(states[-1])),
                 float(res.ess))])
    return {"controls": res.controls, "states": states, "ess": res.ess,
            "status": res.status, "out_dir": out}
