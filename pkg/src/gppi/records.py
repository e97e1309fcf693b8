"""Persisted controller artifacts and trace export.

A ControllerRecord is the unit the composition module consumes: the executed
control sequence of a learned task, its desirability trace along the visited
states, the target, and the cost fields that must align across a library.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class CostFields:
    """The persisted subset of a cost specification (diagonal Q only)."""

    Q_diag: np.ndarray
    lam: float
    dt: float
    horizon_steps: int

    def __post_init__(self):
        self.Q_diag = np.atleast_1d(np.asarray(self.Q_diag, dtype=float))


@dataclass
class ControllerRecord:
    task_id: str
    x_d: np.ndarray
    cost_fields: CostFields
    controls: np.ndarray            # (T, m)
    log_psi: np.ndarray             # (T+1,)
    grad_psi_over_psi: np.ndarray   # (T+1, n)
    model_ref: str = ""

    def __post_init__(self):
        self.x_d = np.atleast_1d(np.asarray(self.x_d, dtype=float))
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        self.log_psi = np.atleast_1d(np.asarray(self.log_psi, dtype=float))
        self.grad_psi_over_psi = np.atleast_2d(
            np.asarray(self.grad_psi_over_psi, dtype=float))


def save_record(record: ControllerRecord, path) -> None:
    doc = {
        "task_id": record.task_id,
        "x_d": record.x_d.tolist(),
        "cost": {
            "Q_diag": record.cost_fields.Q_diag.tolist(),
            "lambda": record.cost_fields.lam,
            "dt": record.cost_fields.dt,
            "horizon_steps": record.cost_fields.horizon_steps,
        },
        "controls": record.controls.tolist(),
        "log_psi": record.log_psi.tolist(),
        "grad_psi_over_psi": record.grad_psi_over_psi.tolist(),
        "model_ref": record.model_ref,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_record(path) -> ControllerRecord:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        cost = CostFields(np.asarray(doc["cost"]["Q_diag"], dtype=float),
                          float(doc["cost"]["lambda"]),
                          float(doc["cost"]["dt"]),
                          int(doc["cost"]["horizon_steps"]))
        return ControllerRecord(
            str(doc["task_id"]),
            np.asarray(doc["x_d"], dtype=float),
            cost,
            np.asarray(doc["controls"], dtype=float),
            np.asarray(doc["log_psi"], dtype=float),
            np.asarray(doc["grad_psi_over_psi"], dtype=float),
            str(doc.get("model_ref", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed controller record: {exc}") from exc


def export_trace_csv(path, dt, mus, sigma_diags, controls, log_psis) -> None:
    """Write the per-step trace: step,t,mu_*,sigma_diag_*,u_*,log_psi.

    Rows cover steps 0..T; the control columns repeat the last control at the
    terminal row so every row has the same arity.
    """
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    sig = np.atleast_2d(np.asarray(sigma_diags, dtype=float))
    us = np.atleast_2d(np.asarray(controls, dtype=float))
    lp = np.atleast_1d(np.asarray(log_psis, dtype=float))
    n = mus.shape[1]
    m = us.shape[1]
    header = ["step", "t"]
    header += [f"mu_{i}" for i in range(n)]
    header += [f"sigma_diag_{i}" for i in range(n)]
    header += [f"u_{j}" for j in range(m)]
    header += ["log_psi"]
    lines = [",".join(header)]
    for step in range(mus.shape[0]):
        u_row = us[min(step, us.shape[0] - 1)]
        cells = [str(step), repr(step * dt)]
        cells += [repr(v) for v in mus[step]]
        cells += [repr(v) for v in sig[step]]
        cells += [repr(v) for v in u_row]
        cells += [repr(float(lp[step]))]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_manifest(path, record_paths, p_diag, default_mode: str = "stored") -> None:
    doc = {"records": [str(p) for p in record_paths],
           "P_diag": [float(v) for v in np.atleast_1d(p_diag)],
           "default_mode": default_mode}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "records" not in doc or not doc["records"]:
        raise ConfigError("manifest must list at least one record")
    return doc
