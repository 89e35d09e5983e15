"""The MSPBE saddle objective and its gradients.

Per-sample loss, for Psi = grad_theta V(s) and TD error delta:

    f(theta, omega; xi) = delta * <Psi, omega> - 0.5 * <Psi, omega>**2

Every function accepts either a single :class:`~dptd.mdp.Transition` or a batch
(anything with ``s``, ``sp``, ``r`` arrays). Dataset-level quantities take a
``TrajectoryDataset`` or a ``WeightedTransitions`` distribution, the latter
covering exact oracles built from an MDP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .mdp import Transition, TrajectoryDataset, WeightedTransitions

DEFAULT_RIDGE = 1e-8


class SingularGram(np.linalg.LinAlgError):
    """The Gram matrix (plus ridge) is not positive definite."""


@dataclass(frozen=True)
class SampleGrad:
    primal: np.ndarray
    dual: np.ndarray


@dataclass(frozen=True)
class DualSolution:
    omega: np.ndarray
    on_boundary: bool


def _cols(xi):
    if isinstance(xi, Transition):
        return xi.state, xi.next_state, xi.reward
    return xi.s, xi.sp, xi.r


def as_weighted(data) -> WeightedTransitions:
    if isinstance(data, WeightedTransitions):
        return data
    if isinstance(data, TrajectoryDataset):
        if data.n_transitions == 0:
            raise ValueError("empty dataset")
        cached = getattr(data, "_weighted", None)
        if cached is None:
            cached = data.arrays().compressed()
            data._weighted = cached
        return cached
    raise TypeError(f"cannot interpret {type(data).__name__} as a transition distribution")


def _rowdot(a, b):
    return np.einsum("...i,...i->...", a, b)


def td_error(model, theta, xi, gamma: float):
    s, sp, r = _cols(xi)
    return r + gamma * model.value(theta, sp) - model.value(theta, s)


def loss(model, theta, omega, xi, gamma: float):
    s, _, _ = _cols(xi)
    psi_w = _rowdot(model.grad(theta, s), omega)
    return td_error(model, theta, xi, gamma) * psi_w - 0.5 * psi_w**2


def grad_dual(model, theta, omega, xi, gamma: float):
    s, _, _ = _cols(xi)
    psi = model.grad(theta, s)
    coef = td_error(model, theta, xi, gamma) - _rowdot(psi, omega)
    return np.asarray(coef)[..., None] * psi


def grad_primal(model, theta, omega, xi, gamma: float):
    """(gamma Psi(s') - Psi(s)) <Psi(s), omega> + (delta - <Psi(s), omega>) H(s) omega."""
    return sample_grads(model, theta, omega, xi, gamma).primal


def sample_grads(model, theta, omega, xi, gamma: float) -> SampleGrad:
    s, sp, _ = _cols(xi)
    psi = model.grad(theta, s)
    psi_next = model.grad(theta, sp)
    delta = td_error(model, theta, xi, gamma)
    psi_w = np.asarray(_rowdot(psi, omega))
    resid = np.asarray(delta - psi_w)
    primal = (gamma * psi_next - psi) * psi_w[..., None]
    if model.curved:
        primal = primal + resid[..., None] * model.hvp(theta, s, omega)
    dual = resid[..., None] * psi
    return SampleGrad(primal, dual)


def clip(g, bound: float):
    """Scale ``g`` (or each row of a batch) down to norm at most ``bound``."""
    if bound <= 0:
        raise ValueError("clip bound must be positive")
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    scale = np.minimum(1.0, bound / np.maximum(norm, np.finfo(float).tiny))
    return g * scale


def empirical_F(model, theta, omega, data, gamma: float) -> float:
    w = as_weighted(data)
    return float(w.weight @ loss(model, theta, omega, w, gamma))


def full_gradients(model, theta, omega, data, gamma: float) -> SampleGrad:
    """Dataset-mean (unclipped) primal and dual gradients."""
    w = as_weighted(data)
    g = sample_grads(model, theta, omega, w, gamma)
    return SampleGrad(w.weight @ g.primal, w.weight @ g.dual)


def gram(model, theta, data) -> np.ndarray:
    w = as_weighted(data)
    psi = model.grad(theta, w.s)
    G = (psi * w.weight[:, None]).T @ psi
    return 0.5 * (G + G.T)


def td_correlation(model, theta, data, gamma: float) -> np.ndarray:
    """Mean of delta * Psi(s)."""
    w = as_weighted(data)
    psi = model.grad(theta, w.s)
    return (w.weight * td_error(model, theta, w, gamma)) @ psi


def _factor(G, ridge):
    A = G + ridge * np.eye(G.shape[0])
    evals = np.linalg.eigvalsh(A)
    if evals[0] <= 1e-14 * max(1.0, evals[-1]):
        hint = " (use a nonzero ridge)" if ridge == 0 else ""
        raise SingularGram(f"Gram matrix is singular: min eigenvalue {evals[0]:.3e}{hint}")
    return linalg.cho_factor(A)


def dual_maximizer(model, theta, data, gamma: float, ridge: float = DEFAULT_RIDGE, radius: float | None = None) -> DualSolution:
    """omega*(theta) solving (G + ridge I) omega = E[delta Psi].

    With ``radius`` set the solution is clamped into the box and
    ``on_boundary`` reports whether the clamp was active.
    """
    b = td_correlation(model, theta, data, gamma)
    omega = linalg.cho_solve(_factor(gram(model, theta, data), ridge), b)
    if radius is None:
        return DualSolution(omega, False)
    clamped = np.clip(omega, -radius, radius)
    return DualSolution(clamped, bool(np.any(clamped != omega)))


def mspbe(model, theta, data, gamma: float, ridge: float = DEFAULT_RIDGE) -> float:
    b = td_correlation(model, theta, data, gamma)
    x = linalg.cho_solve(_factor(gram(model, theta, data), ridge), b)
    return max(0.0, 0.5 * float(b @ x))


def lstd_solution(model, data, gamma: float) -> np.ndarray:
    """Linear TD fixed point: E[Psi (Psi - gamma Psi')^T] theta = E[r Psi].

    Only meaningful for models whose features do not depend on theta.
    Falls back to least squares when the system is singular.
    """
    if model.curved:
        raise TypeError("LSTD needs a linear model")
    w = as_weighted(data)
    zero = np.zeros(model.dim)
    psi, psi_next = model.grad(zero, w.s), model.grad(zero, w.sp)
    A = (psi * w.weight[:, None]).T @ (psi - gamma * psi_next)
    b = (w.weight * w.r) @ psi
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


def reference_mspbe(model, data, gamma: float, ridge: float = DEFAULT_RIDGE) -> float:
    """Smallest attainable MSPBE used as the zero of optimality gaps.

    Linear models use the LSTD fixed point; nonlinear models use 0, which is a
    lower bound.
    """
    if model.curved:
        return 0.0
    return mspbe(model, lstd_solution(model, data, gamma), data, gamma, ridge)
