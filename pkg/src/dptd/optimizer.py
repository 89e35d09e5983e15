"""Projected momentum stochastic gradient descent-ascent with Gaussian perturbation.

One iteration, for step size nu_t = a / sqrt(t + b):

    theta_tilde = P(theta - kappa p)          omega_tilde = P(omega + eta d)
    theta      += nu_t (theta_tilde - theta)  omega      += nu_t (omega_tilde - omega)
    p = (1 - alpha nu_t) p + alpha nu_t g_theta + u_p
    d = (1 - beta nu_t)  d + beta nu_t  g_omega + u_d

with g evaluated at the updated (theta, omega) on a freshly sampled transition
(or trajectory), clipped per sample when ``clip_G`` is set, and u_p, u_d
independent Gaussians.

In trajectory mode the sampled gradient is the trajectory sum divided by n_max
and the noise std is sigma / n_max. That is the summed-query mechanism followed
by a fixed rescaling, so the privacy guarantee of the summed release carries over.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from . import objective
from .mdp import DatasetMode, TrajectoryDataset
from .metric import evaluate_metric
from .privacy import NoiseCalibration
from .runlog import RunLog


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DptdConfig:
    kappa: float = 2.0
    eta: float = 2.0
    alpha: float = 3.0
    beta: float = 3.0
    nu_a: float = 0.25
    nu_b: float = 3.0
    T: int = 1000
    box_radius: float = 1.0
    clip_G: float | None = None
    noise: NoiseCalibration | None = None
    seed: int = 0
    init_seed: int | None = None
    sampling: str = "uniform"  # or "sweep" (debugging only, no privacy claim)
    metric_interval: int = 10
    l_f: float = 1.0
    ridge: float = objective.DEFAULT_RIDGE
    dual_noise: bool = True

    def __post_init__(self):
        for name in ("kappa", "eta", "alpha", "beta", "nu_a", "box_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.nu_b < 0:
            raise ConfigError("nu_b must be nonnegative")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        # nu_t is decreasing, so checking t = 0 covers every t
        nu0 = self.nu(0)
        if self.alpha * nu0 > 1 or self.beta * nu0 > 1:
            raise ConfigError(
                f"momentum weights exceed 1 at t=0: alpha*nu_0={self.alpha * nu0:.4g}, beta*nu_0={self.beta * nu0:.4g}"
            )
        if self.clip_G is not None and not self.clip_G > 0:
            raise ConfigError("clip_G must be positive when set")
        if self.sampling not in ("uniform", "sweep"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.noise is not None:
            if self.clip_G is None:
                raise ConfigError("private runs need a clip bound clip_G")
            if self.noise.T != self.T:
                raise ConfigError(f"calibration is for T={self.noise.T}, config has T={self.T}")
            self.noise.require_valid()
            if self.sampling != "uniform":
                raise ConfigError("private runs require uniform sampling")
        if self.metric_interval < 1:
            raise ConfigError("metric_interval must be at least 1")

    def nu(self, t: int) -> float:
        return self.nu_a / math.sqrt(t + self.nu_b)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["noise"] = None if self.noise is None else self.noise.report()
        return out


class IterState(NamedTuple):
    theta: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    d: np.ndarray
    t: int


@dataclass(frozen=True)
class StepRecord:
    t: int
    nu: float
    theta_tilde: np.ndarray
    omega_tilde: np.ndarray
    sample: int


class BaselineKind(str, Enum):
    NON_PRIVATE_TD = "nonprivate_td"
    PLAIN_SGDA = "plain_sgda"
    PRIVATE_PLAIN_SGDA = "private_plain_sgda"


@dataclass(frozen=True)
class RunResult:
    theta: np.ndarray
    omega: np.ndarray
    output_index: int
    final: IterState
    log: RunLog


def project_box(x, radius: float) -> np.ndarray:
    if not radius > 0:
        raise ValueError("radius must be positive")
    return np.clip(x, -radius, radius)


class _Batch(NamedTuple):
    s: np.ndarray
    sp: np.ndarray
    r: np.ndarray


class Streams:
    """Independent generators derived from one seed.

    ``init`` (model and dual initialization) can be reseeded separately.
    """

    names = ("sample", "noise_primal", "noise_dual", "output", "init")

    def __init__(self, seed: int, init_seed: int | None = None):
        children = np.random.SeedSequence(seed).spawn(len(self.names))
        for name, child in zip(self.names, children):
            setattr(self, name, np.random.default_rng(child))
        if init_seed is not None:
            self.init = np.random.default_rng(np.random.SeedSequence(init_seed).spawn(len(self.names))[-1])


class Sampler:
    """Draws one transition (state-action-state) or one trajectory per iteration."""

    def __init__(self, dataset: TrajectoryDataset, rng: np.random.Generator, mode: str = "uniform"):
        arr = dataset.arrays()
        self.trajectory_mode = dataset.mode is DatasetMode.TRAJECTORY
        self.s, self.sp, self.r = arr.s, arr.sp, arr.r
        self.offsets = arr.offsets
        self.n_max = dataset.n_max
        self.units = dataset.n_trajectories if self.trajectory_mode else dataset.n_transitions
        self.rng = rng
        self.mode = mode
        self._cursor = 0

    def draw(self) -> tuple[int, object]:
        if self.mode == "uniform":
            k = int(self.rng.integers(self.units))
        else:
            k = self._cursor % self.units
            self._cursor += 1
        if self.trajectory_mode:
            lo, hi = self.offsets[k], self.offsets[k + 1]
            return k, _Batch(self.s[lo:hi], self.sp[lo:hi], self.r[lo:hi])
        return k, _Batch(self.s[k], self.sp[k], self.r[k])

    @property
    def noise_scale(self) -> float:
        return 1.0 / self.n_max if self.trajectory_mode else 1.0


def sampled_gradients(model, theta, omega, batch, gamma, clip_G, sampler) -> objective.SampleGrad:
    g = objective.sample_grads(model, theta, omega, batch, gamma)
    gp, gd = g.primal, g.dual
    if clip_G is not None:
        gp, gd = objective.clip(gp, clip_G), objective.clip(gd, clip_G)
    if sampler.trajectory_mode:
        gp, gd = gp.sum(axis=0) / sampler.n_max, gd.sum(axis=0) / sampler.n_max
    return objective.SampleGrad(gp, gd)


def _noise(config, sampler, rng, d):
    if config.noise is None:
        return 0.0
    return rng.normal(0.0, config.noise.sigma * sampler.noise_scale, size=d)


def dptd_init(config: DptdConfig, model, dataset: TrajectoryDataset, streams: Streams, sampler: Sampler | None = None):
    if dataset.n_transitions == 0:
        raise ValueError("empty dataset")
    sampler = sampler or Sampler(dataset, streams.sample, config.sampling)
    R = config.box_radius
    theta = project_box(model.init_params(streams.init, R), R)
    bound = 1.0 / math.sqrt(model.dim)
    omega = project_box(streams.init.uniform(-bound, bound, model.dim), R)
    _, xi = sampler.draw()
    g = sampled_gradients(model, theta, omega, xi, dataset.gamma, config.clip_G, sampler)
    p = g.primal + _noise(config, sampler, streams.noise_primal, model.dim)
    d = g.dual + (_noise(config, sampler, streams.noise_dual, model.dim) if config.dual_noise else 0.0)
    return IterState(theta, omega, np.asarray(p, float), np.asarray(d, float), 0), sampler


def dptd_step(state: IterState, config: DptdConfig, model, gamma: float, sampler: Sampler, streams: Streams):
    t = state.t
    nu = config.nu(t)
    R = config.box_radius
    theta_tilde = project_box(state.theta - config.kappa * state.p, R)
    omega_tilde = project_box(state.omega + config.eta * state.d, R)
    theta = state.theta + nu * (theta_tilde - state.theta)
    omega = state.omega + nu * (omega_tilde - state.omega)
    k, xi = sampler.draw()
    g = sampled_gradients(model, theta, omega, xi, gamma, config.clip_G, sampler)
    p = (1.0 - config.alpha * nu) * state.p + config.alpha * nu * g.primal
    d = (1.0 - config.beta * nu) * state.d + config.beta * nu * g.dual
    p = p + _noise(config, sampler, streams.noise_primal, model.dim)
    if config.dual_noise:
        d = d + _noise(config, sampler, streams.noise_dual, model.dim)
    return IterState(theta, omega, p, d, t + 1), StepRecord(t, nu, theta_tilde, omega_tilde, k)


def plain_sgda_step(state: IterState, config: DptdConfig, model, gamma: float, sampler: Sampler, streams: Streams):
    """Simultaneous projected descent-ascent on the raw (optionally noisy) sampled gradient."""
    t = state.t
    nu = config.nu(t)
    R = config.box_radius
    k, xi = sampler.draw()
    g = sampled_gradients(model, state.theta, state.omega, xi, gamma, config.clip_G, sampler)
    gp = g.primal + _noise(config, sampler, streams.noise_primal, model.dim)
    gd = g.dual + (_noise(config, sampler, streams.noise_dual, model.dim) if config.dual_noise else 0.0)
    theta = project_box(state.theta - config.kappa * nu * gp, R)
    omega = project_box(state.omega + config.eta * nu * gd, R)
    # p, d hold the gradients used, so the metric's m2 measures their error
    tilde = project_box(state.theta - config.kappa * gp, R)
    rec = StepRecord(t, nu, tilde, project_box(state.omega + config.eta * gd, R), k)
    return IterState(theta, omega, np.asarray(gp), np.asarray(gd), t + 1), rec


def _plain_init(config, model, dataset, streams):
    R = config.box_radius
    theta = project_box(model.init_params(streams.init, R), R)
    bound = 1.0 / math.sqrt(model.dim)
    omega = project_box(streams.init.uniform(-bound, bound, model.dim), R)
    sampler = Sampler(dataset, streams.sample, config.sampling)
    z = np.zeros(model.dim)
    return IterState(theta, omega, z, z.copy(), 0), sampler


def run(
    config: DptdConfig,
    model,
    dataset: TrajectoryDataset,
    hooks: Callable[[IterState, StepRecord], None] | None = None,
    eval_data=None,
    step_fn=dptd_step,
) -> RunResult:
    """Execute T steps; row t of the log describes the iterate before step t.

    ``eval_data`` (default: the training dataset) is what F, MSPBE and the
    metric are evaluated on.
    """
    streams = Streams(config.seed, config.init_seed)
    gamma = dataset.gamma
    if step_fn is dptd_step:
        state, sampler = dptd_init(config, model, dataset, streams)
    else:
        state, sampler = _plain_init(config, model, dataset, streams)
    data = objective.as_weighted(dataset if eval_data is None else eval_data)
    log = RunLog(header={"config": config.to_dict(), "model": model.describe()})
    thetas, omegas = [], []
    for _ in range(config.T):
        t = state.t
        new_state, rec = step_fn(state, config, model, gamma, sampler, streams)
        row = {"t": t, "nu_t": rec.nu, "F_value": objective.empirical_F(model, state.theta, state.omega, data, gamma)}
        if t % config.metric_interval == 0 or t == config.T - 1:
            row["mspbe"] = objective.mspbe(model, state.theta, data, gamma, ridge=config.ridge)
            ms = evaluate_metric(
                state, rec.theta_tilde, model, data, gamma, config.kappa, config.l_f, config.ridge, config.box_radius
            )
            row.update(metric_m1=ms.m1, metric_m2=ms.m2, metric_m3=ms.m3)
        log.append(**row)
        thetas.append(state.theta)
        omegas.append(state.omega)
        if hooks is not None:
            hooks(state, rec)
        state = new_state
    idx = int(streams.output.integers(config.T))
    return RunResult(thetas[idx], omegas[idx], idx, state, log)


def run_baseline(kind: BaselineKind | str, config: DptdConfig, model, dataset, **kwargs) -> RunResult:
    kind = BaselineKind(kind)
    if kind is BaselineKind.NON_PRIVATE_TD:
        return run(replace(config, noise=None), model, dataset, **kwargs)
    if kind is BaselineKind.PLAIN_SGDA:
        return run(replace(config, noise=None), model, dataset, step_fn=plain_sgda_step, **kwargs)
    if config.noise is None:
        raise ConfigError("private_plain_sgda needs a noise calibration")
    return run(config, model, dataset, step_fn=plain_sgda_step, **kwargs)
