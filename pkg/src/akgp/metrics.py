"""Regression and uncertainty metrics used to score a fitted model."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class DegenerateMetricError(ValueError):
    pass


@dataclass
class MetricsRecord:
    num_samples: int
    smse: float
    msll: float
    nlpd: float
    rmse: float
    mae: float
    wall_time_s: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


FIELDS = ("num_samples", "smse", "msll", "nlpd", "rmse", "mae", "wall_time_s")


def _pair(y_true, mu):
    y_true = np.asarray(y_true, dtype=float).ravel()
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y_true.shape)
    if y_true.size == 0:
        raise DegenerateMetricError("metrics need at least one test point")
    return y_true, mu


def smse(y_true, mu) -> float:
    """Mean squared error over the population variance of the targets."""
    y_true, mu = _pair(y_true, mu)
    var = np.var(y_true)
    if y_true.size < 2 or var == 0.0:
        raise DegenerateMetricError("SMSE undefined for constant test targets")
    return float(np.mean((y_true - mu) ** 2) / var)


def nlpd(y_true, mu, var) -> float:
    """Mean Gaussian negative log predictive density."""
    y_true, mu = _pair(y_true, mu)
    var = np.broadcast_to(np.asarray(var, dtype=float), y_true.shape)
    if np.any(var <= 0):
        raise DegenerateMetricError("predictive variance must be positive")
    return float(np.mean(0.5 * np.log(2.0 * np.pi * var) + (y_true - mu) ** 2 / (2.0 * var)))


def msll(y_true, mu, var, train_mean: float, train_var: float) -> float:
    """Log loss relative to a Gaussian with the training targets' moments."""
    if train_var <= 0:
        raise DegenerateMetricError("trivial model needs positive training variance")
    return nlpd(y_true, mu, var) - nlpd(y_true, train_mean, train_var)


def rmse(y_true, mu) -> float:
    y_true, mu = _pair(y_true, mu)
    return float(np.sqrt(np.mean((y_true - mu) ** 2)))


def mae(y_true, mu) -> float:
    y_true, mu = _pair(y_true, mu)
    return float(np.mean(np.abs(y_true - mu)))


def evaluate(y_true, mu, var, train_mean, train_var, num_samples, wall_time_s=0.0,
             y_scale: float = 1.0) -> MetricsRecord:
    """All metrics at once.

    ``y_true``, ``mu``, ``var`` and the train moments are in standardized
    units; ``y_scale`` converts errors back to original units for RMSE/MAE.
    """
    return MetricsRecord(
        num_samples=int(num_samples),
        smse=smse(y_true, mu),
        msll=msll(y_true, mu, var, train_mean, train_var),
        nlpd=nlpd(y_true, mu, var),
        rmse=rmse(y_true, mu) * y_scale,
        mae=mae(y_true, mu) * y_scale,
        wall_time_s=float(wall_time_s),
    )


def curve_average(records: list[MetricsRecord], field: str) -> float:
    """Mean of one metric over the sample-count axis of a learning curve."""
    if not records:
        raise DegenerateMetricError("empty curve")
    return float(np.mean([getattr(r, field) for r in records]))
