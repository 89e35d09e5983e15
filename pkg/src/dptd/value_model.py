"""Value functions V_theta(s) with exact gradients and Hessian-vector products.

All methods accept either a single state index or an integer array of states;
batched calls return arrays with a leading sample axis.

MLP parameter layout (flat vector, in this order):

    W1  hidden x k, row-major    input weights
    b1  hidden                   input biases
    w2  hidden                   output weights
    b2  1                        output bias
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_prime(z):
    # e^0 = 1, so both branches agree at 0
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def elu_second(z):
    # right limit (0) at z == 0
    return np.where(z < 0, np.exp(np.minimum(z, 0.0)), 0.0)


def one_hot_features(n_states: int) -> np.ndarray:
    return np.eye(n_states)


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"parameter vector has shape {theta.shape}, expected ({dim},)")
    return theta


@dataclass(frozen=True)
class LinearModel:
    """V(s) = phi(s) . theta."""

    features: np.ndarray
    curved = False  # Hessian is identically zero

    def __post_init__(self):
        phi = np.asarray(self.features, dtype=float)
        if phi.ndim != 2 or not np.all(np.isfinite(phi)):
            raise ValueError("feature map must be a finite 2-d table")
        object.__setattr__(self, "features", phi)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def describe(self) -> dict:
        return {"kind": "linear", "dim": self.dim, "layout": ["theta"]}

    def value(self, theta, s):
        return self.features[s] @ _check_theta(theta, self.dim)

    def grad(self, theta, s):
        _check_theta(theta, self.dim)
        return self.features[s].copy()

    def hvp(self, theta, s, v):
        _check_theta(theta, self.dim)
        _check_theta(v, self.dim)
        return np.zeros(np.shape(self.features[s]))

    def init_params(self, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
        bound = 1.0 / np.sqrt(self.dim)
        return np.clip(rng.uniform(-bound, bound, self.dim), -radius, radius)


@dataclass(frozen=True)
class MlpModel:
    """Two-layer network V(s) = w2 . ELU(W1 phi(s) + b1) + b2."""

    features: np.ndarray
    hidden: int = 50
    curved = True

    def __post_init__(self):
        phi = np.asarray(self.features, dtype=float)
        if phi.ndim != 2 or not np.all(np.isfinite(phi)):
            raise ValueError("feature map must be a finite 2-d table")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")
        object.__setattr__(self, "features", phi)

    @property
    def n_inputs(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.hidden * self.n_inputs + 2 * self.hidden + 1

    def describe(self) -> dict:
        h, k = self.hidden, self.n_inputs
        return {
            "kind": "mlp",
            "activation": "elu",
            "dim": self.dim,
            "layout": [["W1", [h, k]], ["b1", [h]], ["w2", [h]], ["b2", [1]]],
        }

    def unpack(self, theta):
        theta = _check_theta(theta, self.dim)
        h, k = self.hidden, self.n_inputs
        W1 = theta[: h * k].reshape(h, k)
        b1 = theta[h * k : h * k + h]
        w2 = theta[h * k + h : h * k + 2 * h]
        return W1, b1, w2, theta[-1]

    def pack(self, W1, b1, w2, b2) -> np.ndarray:
        return np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(w2), np.atleast_1d(b2)]).astype(float)

    def _pre(self, W1, b1, s):
        x = self.features[s]
        return x, x @ W1.T + b1

    def value(self, theta, s):
        W1, b1, w2, b2 = self.unpack(theta)
        _, z = self._pre(W1, b1, s)
        return elu(z) @ w2 + b2

    def grad(self, theta, s):
        W1, b1, w2, _ = self.unpack(theta)
        x, z = self._pre(W1, b1, s)
        g_b1 = w2 * elu_prime(z)
        g_W1 = g_b1[..., :, None] * x[..., None, :]
        ones = np.ones(z.shape[:-1] + (1,))
        return np.concatenate(
            [g_W1.reshape(z.shape[:-1] + (-1,)), g_b1, elu(z), ones], axis=-1
        )

    def hvp(self, theta, s, v):
        W1, b1, w2, _ = self.unpack(theta)
        vW1, vb1, vw2, _ = self.unpack(v)
        x, z = self._pre(W1, b1, s)
        dz = x @ vW1.T + vb1  # directional derivative of the pre-activation
        h_w2 = elu_prime(z) * dz
        h_b1 = vw2 * elu_prime(z) + w2 * elu_second(z) * dz
        h_W1 = h_b1[..., :, None] * x[..., None, :]
        zeros = np.zeros(z.shape[:-1] + (1,))
        return np.concatenate(
            [h_W1.reshape(z.shape[:-1] + (-1,)), h_b1, h_w2, zeros], axis=-1
        )

    def init_params(self, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
        h, k = self.hidden, self.n_inputs
        b_in, b_out = 1.0 / np.sqrt(k), 1.0 / np.sqrt(h)
        theta = self.pack(
            rng.uniform(-b_in, b_in, (h, k)),
            rng.uniform(-b_in, b_in, h),
            rng.uniform(-b_out, b_out, h),
            rng.uniform(-b_out, b_out),
        )
        return np.clip(theta, -radius, radius)


def build_model(kind: str, features: np.ndarray, hidden: int = 50):
    if kind == "linear":
        return LinearModel(features)
    if kind == "mlp":
        return MlpModel(features, hidden)
    raise ValueError(f"unknown model kind {kind!r}")
