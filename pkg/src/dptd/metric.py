"""Stationarity metric for the constrained saddle problem.

    M = ||theta_tilde - theta|| / kappa + ||grad_theta F(theta, omega) - p|| + L_F ||omega - omega*(theta)||

L_F is not known for the models used here, so it is a configured constant and
the three components are always reported separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objective


@dataclass(frozen=True)
class MetricSample:
    m1: float
    m2: float
    m3: float
    l_f: float = 1.0

    @property
    def combined(self) -> float:
        return self.m1 + self.m2 + self.l_f * self.m3


def evaluate_metric(
    state,
    theta_tilde,
    model,
    data,
    gamma: float,
    kappa: float,
    l_f: float = 1.0,
    ridge: float = objective.DEFAULT_RIDGE,
    radius: float | None = None,
) -> MetricSample:
    """Metric at ``state`` (needs ``theta``, ``omega``, ``p``) given the step's theta_tilde."""
    m1 = float(np.linalg.norm(np.asarray(theta_tilde) - state.theta)) / kappa
    full = objective.full_gradients(model, state.theta, state.omega, data, gamma)
    m2 = float(np.linalg.norm(full.primal - state.p))
    star = objective.dual_maximizer(model, state.theta, data, gamma, ridge=ridge, radius=radius)
    m3 = float(np.linalg.norm(state.omega - star.omega))
    return MetricSample(m1, m2, m3, l_f)


def average_metric(log, l_f: float = 1.0) -> float:
    """Mean combined metric over the rows of a RunLog that carry metric values."""
    vals = [
        r["metric_m1"] + r["metric_m2"] + l_f * r["metric_m3"]
        for r in log.rows
        if r.get("metric_m1") is not None
    ]
    if not vals:
        raise ValueError("run log holds no metric samples")
    return float(np.mean(vals))
