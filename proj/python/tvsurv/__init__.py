"""Counterfactual survival under time-varying treatments.

Thin layer over the compiled ``_tvsurv`` module. Cohorts come from ``simulate``
or ``load_cohort``; configuration overrides use the same dotted keys as the
command-line tool (``train.alpha``, ``grid.m``, ...).
"""

from ._tvsurv import (
    Cohort,
    ConfigError,
    DataError,
    Error,
    Model,
    NumericalError,
    ShapeError,
    TimeGrid,
    build_grid,
    c_index,
    evaluate,
    fit_weights,
    load_cohort,
    mmd2,
    simulate,
    tv_pehe,
)
from . import _tvsurv

__all__ = [
    "Cohort", "ConfigError", "DataError", "Error", "Model", "NumericalError", "ShapeError", "TimeGrid",
    "build_grid", "c_index", "evaluate", "fit_weights", "load_cohort", "mmd2", "simulate", "tv_pehe",
    "train", "run_experiment",
]


def _overrides(settings):
    out = {}
    for key, value in (settings or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        out[key] = str(value)
    return out


def train(cohort, weights=None, variant="full", **settings):
    """Train on ``cohort``; returns ``(model, epoch_log)``.

    Keyword settings use underscores for dots, e.g. ``train__epochs=5`` or pass
    ``settings={"train.epochs": 5}``.
    """
    flat = dict(settings.pop("settings", {}) or {})
    flat.update({k.replace("__", "."): v for k, v in settings.items()})
    if weights is not None:
        weights = [float(w) for w in weights]
    return _tvsurv.train(cohort, weights, variant, _overrides(flat))


def run_experiment(settings=None, kind="experiment", out_dir=""):
    """Replicated experiment (``kind`` is experiment, ablation or sweep); returns summary rows."""
    return _tvsurv.run_experiment(_overrides(settings), kind, out_dir)
