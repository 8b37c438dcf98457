"""Python bindings for the iccl-bench retention harness."""

import csv
import io
import json

from . import _core
from ._core import (
    ConfigError,
    DegenerateReference,
    SchemaError,
    TransportError,
    aggregate,
    bhattacharyya,
    hrs_score,
    normalized_performance,
    practice_times,
    sign_test_p,
)

__version__ = _core.__version__

__all__ = [
    "ConfigError",
    "DegenerateReference",
    "SchemaError",
    "TransportError",
    "activation",
    "aggregate",
    "bhattacharyya",
    "build_sequence",
    "fit_actr",
    "fit_curves",
    "generate_task",
    "hrs_md",
    "hrs_score",
    "normalized_performance",
    "practice_times",
    "render_prompt",
    "report",
    "retention_hat",
    "run_experiment",
    "sign_test_p",
]


def _reference_text(reference):
    if reference is None:
        return ""
    if isinstance(reference, dict):
        return json.dumps(reference)
    with open(reference, encoding="utf-8") as fh:
        return fh.read()


def generate_task(n_states, task_id, label, seed):
    return json.loads(_core.generate_task(n_states, task_id, label, seed))


def build_sequence(kind, phi, k, phi_i, target, interference, phi_d, seed, with_identifiers=True,
                   trailing_interference=False):
    return json.loads(
        _core.build_sequence(kind, phi, k, phi_i, with_identifiers, trailing_interference, json.dumps(target),
                             json.dumps(interference), phi_d, seed))


def render_prompt(sequence, query_state, target_label="TARGET_TASK"):
    return _core.render_prompt(json.dumps(sequence), query_state, target_label)


def activation(params, times, t):
    return _core.activation(json.dumps(params), list(times), t)


def retention_hat(params, times, t):
    return _core.retention_hat(json.dumps(params), list(times), t)


def hrs_md(d, s, gamma, reference=None):
    return _core.hrs_md(d, s, gamma, _reference_text(reference))


def fit_curves(curves, starts=32, seed=None):
    """Fits one ACT-R parameter set to [{"times": [...], "points": [[t, r], ...]}, ...]."""
    payload = json.dumps(curves)
    raw = _core.fit_curves(payload, starts) if seed is None else _core.fit_curves(payload, starts, seed)
    return json.loads(raw)


def run_experiment(config, jobs=1, write_files=False):
    """Runs an experiment described by a config dict; returns (rows, manifest)."""
    out = json.loads(_core.run_experiment(json.dumps(config), jobs, write_files))
    rows = list(csv.DictReader(io.StringIO(out["results_csv"])))
    return rows, out["manifest"]


def fit_actr(results, method="", reference=None):
    return json.loads(_core.fit_actr([str(p) for p in results], method, _reference_text(reference)))


def report(results, out, fits=(), clamp=False):
    _core.report([str(p) for p in results], [str(p) for p in fits], str(out), clamp)
