import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dptd import objective
from dptd.mdp import DatasetMode, Policy, Transition, TrajectoryDataset, chain, sample_dataset
from dptd.optimizer import (
    BaselineKind,
    ConfigError,
    DptdConfig,
    IterState,
    Sampler,
    Streams,
    _Batch,
    dptd_init,
    dptd_step,
    plain_sgda_step,
    project_box,
    run,
    run_baseline,
)
from dptd.privacy import NoiseCalibration, PrivacyBudget, calibrate_best, calibrate_trajectory
from dptd.value_model import LinearModel, MlpModel, one_hot_features

GAMMA = 0.9


class FixedSampler:
    """Returns the same transition every draw."""

    trajectory_mode = False
    noise_scale = 1.0

    def __init__(self, s, sp, r):
        self.batch = _Batch(np.array(s), np.array(sp), np.array(r))

    def draw(self):
        return 0, self.batch


def fake_noise(sigma, T):
    # bypasses the regime check so tests can pick any sigma
    return NoiseCalibration("sas", sigma, 2.0, 0.5, 2.0, 0.01, sigma**2 / 4, T, 1.0, 1e-5, ())


def single_transition_dataset(tr, k):
    return TrajectoryDataset([[tr]], DatasetMode.STATE_ACTION_STATE, k, 1, GAMMA)


def state(theta, omega, p, d, t=0):
    arr = lambda x: np.asarray(x, float)
    return IterState(arr(theta), arr(omega), arr(p), arr(d), t)


# --------------------------------------------------------------- projection


def test_project_box_examples():
    x = np.array([0.3, -0.9])
    assert np.array_equal(project_box(x, 1.0), x)
    assert project_box(np.array([2.0, -3.0]), 1.0).tolist() == [1.0, -1.0]
    with pytest.raises(ValueError):
        project_box(x, 0.0)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5))
def test_project_box_nonexpansive_idempotent(seed, radius):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(scale=3, size=(2, 6))
    px, py = project_box(x, radius), project_box(y, radius)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12
    assert np.array_equal(project_box(px, radius), px)


# --------------------------------------------------------------- config


def test_config_defaults_and_schedule():
    c = DptdConfig()
    assert (c.kappa, c.eta, c.alpha, c.beta, c.nu_a, c.nu_b, c.box_radius) == (2, 2, 3, 3, 0.25, 3, 1)
    assert c.nu(0) == pytest.approx(1 / (4 * math.sqrt(3)))
    assert c.alpha * c.nu(0) == pytest.approx(0.433, abs=1e-3)
    nus = [c.nu(t) for t in range(1000)]
    assert all(a > b for a, b in zip(nus, nus[1:]))
    assert max(nus) * 3 <= 1


def test_config_rejects_violations():
    with pytest.raises(ConfigError, match="momentum"):
        DptdConfig(alpha=10.0)
    with pytest.raises(ConfigError):
        DptdConfig(T=0)
    with pytest.raises(ConfigError):
        DptdConfig(kappa=0.0)
    with pytest.raises(ConfigError, match="clip"):
        DptdConfig(T=5, noise=fake_noise(1.0, 5))
    with pytest.raises(ConfigError, match="T="):
        DptdConfig(T=5, clip_G=1.0, noise=fake_noise(1.0, 6))
    with pytest.raises(ConfigError):
        DptdConfig(T=5, clip_G=1.0, noise=fake_noise(1.0, 5), sampling="sweep")


def test_config_rejects_invalid_calibration():
    from dptd.privacy import InvalidRegime, calibrate_sas

    cal = calibrate_sas(PrivacyBudget(1.0, 1e-5), 100, 10_000, 1.0)
    with pytest.raises(InvalidRegime):
        DptdConfig(T=100, clip_G=1.0, noise=cal)


# --------------------------------------------------------------- step


def test_step_hand_trace():
    model = LinearModel(np.zeros((2, 2)))  # all gradients vanish
    cfg = DptdConfig()
    nu0 = 1 / (4 * math.sqrt(3))
    st0 = state([0, 0], [0, 0], [1, 0], [0, 1])
    new, rec = dptd_step(st0, cfg, model, GAMMA, FixedSampler(0, 1, 0.0), Streams(0))
    assert rec.theta_tilde.tolist() == [-1.0, 0.0]
    assert rec.omega_tilde.tolist() == [0.0, 1.0]
    assert new.theta == pytest.approx([-nu0, 0.0], abs=1e-15)
    assert new.omega == pytest.approx([0.0, nu0], abs=1e-15)
    # zero gradients: momentum just decays
    assert new.p == pytest.approx([1 - 3 * nu0, 0.0])
    assert new.t == 1 and rec.nu == pytest.approx(nu0)


def test_step_fixed_point_without_noise():
    model = LinearModel(np.zeros((2, 3)))
    st0 = state([0.2, -0.1, 0.5], [0.3, 0.0, -0.4], [0, 0, 0], [0, 0, 0], t=7)
    new, _ = dptd_step(st0, DptdConfig(), model, GAMMA, FixedSampler(1, 0, 1.0), Streams(0))
    for a, b in zip(new[:4], st0[:4]):
        assert np.array_equal(a, b)
    assert new.t == 8


def test_step_interior_moves_by_nu_kappa_p():
    model = LinearModel(np.zeros((2, 2)))
    p = np.array([0.01, -0.02])
    st0 = state([0.1, 0.2], [0, 0], p, [0, 0])
    cfg = DptdConfig()
    new, _ = dptd_step(st0, cfg, model, GAMMA, FixedSampler(0, 0, 0.0), Streams(0))
    assert new.theta == pytest.approx(st0.theta - cfg.nu(0) * cfg.kappa * p, abs=1e-15)


def test_step_gradients_at_updated_iterate():
    rng = np.random.default_rng(0)
    model = LinearModel(rng.normal(size=(3, 2)))
    st0 = state([0.1, 0.2], [0.3, -0.2], [0.5, 0.1], [-0.2, 0.4])
    cfg = DptdConfig()
    sampler = FixedSampler(1, 2, 0.5)
    new, _ = dptd_step(st0, cfg, model, GAMMA, sampler, Streams(0))
    tr = Transition(1, 0, 2, 0.5)
    nu = cfg.nu(0)
    gp = objective.grad_primal(model, new.theta, new.omega, tr, GAMMA)
    gd = objective.grad_dual(model, new.theta, new.omega, tr, GAMMA)
    assert new.p == pytest.approx((1 - 3 * nu) * st0.p + 3 * nu * gp, abs=1e-14)
    assert new.d == pytest.approx((1 - 3 * nu) * st0.d + 3 * nu * gd, abs=1e-14)


def test_dual_noise_toggle_leaves_primal_draws():
    model = LinearModel(np.eye(3))
    cfg = DptdConfig(T=4, clip_G=1.0, noise=fake_noise(0.3, 4))
    st0 = state([0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    a, _ = dptd_step(st0, cfg, model, GAMMA, FixedSampler(0, 1, 1.0), Streams(5))
    b, _ = dptd_step(st0, replace(cfg, dual_noise=False), model, GAMMA, FixedSampler(0, 1, 1.0), Streams(5))
    assert np.array_equal(a.p, b.p) and not np.array_equal(a.d, b.d)


# --------------------------------------------------------------- init


def test_init_without_noise_is_clipped_gradient():
    tr = Transition(0, 0, 1, 5.0)
    ds = single_transition_dataset(tr, 2)
    model = LinearModel(one_hot_features(2))
    cfg = DptdConfig(clip_G=0.5)
    st0, _ = dptd_init(cfg, model, ds, Streams(3))
    g = objective.sample_grads(model, st0.theta, st0.omega, tr, GAMMA)
    assert np.array_equal(st0.p, objective.clip(g.primal, 0.5))
    assert np.array_equal(st0.d, objective.clip(g.dual, 0.5))
    assert np.max(np.abs(st0.theta)) <= 1 and np.max(np.abs(st0.omega)) <= 1
    again, _ = dptd_init(cfg, model, ds, Streams(3))
    assert np.array_equal(again.p, st0.p)


def test_init_noise_mean_monte_carlo():
    tr = Transition(0, 0, 1, 0.3)
    ds = single_transition_dataset(tr, 2)
    model = LinearModel(one_hot_features(2))
    sigma = 0.5
    cfg = DptdConfig(T=1, clip_G=1.0, noise=fake_noise(sigma, 1), init_seed=0)
    draws = np.array([dptd_init(replace(cfg, seed=s), model, ds, Streams(s, 0))[0].p for s in range(10_000)])
    st0, _ = dptd_init(cfg, model, ds, Streams(0, 0))
    clean = objective.clip(objective.sample_grads(model, st0.theta, st0.omega, tr, GAMMA).primal, 1.0)
    assert np.all(np.abs(draws.mean(axis=0) - clean) <= 3 * sigma / 100)


def test_init_rejects_empty_dataset():
    class Empty:
        n_transitions = 0

    with pytest.raises(ValueError):
        dptd_init(DptdConfig(), LinearModel(np.eye(2)), Empty(), Streams(0))


# --------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def chain_data():
    mdp = chain(5)
    return sample_dataset(mdp, Policy.uniform(5, 2), np.random.default_rng(1), 500)


def test_run_deterministic(chain_data):
    model = LinearModel(one_hot_features(5))
    cfg = DptdConfig(T=200, clip_G=1.0, noise=fake_noise(0.05, 200), seed=9)
    a, b = run(cfg, model, chain_data), run(cfg, model, chain_data)
    assert a.log.to_csv() == b.log.to_csv()
    assert a.output_index == b.output_index and np.array_equal(a.theta, b.theta)
    c = run(replace(cfg, seed=10), model, chain_data)
    assert c.log.to_csv() != a.log.to_csv()


def test_run_log_shape(chain_data):
    cfg = DptdConfig(T=25, metric_interval=10)
    res = run(cfg, LinearModel(one_hot_features(5)), chain_data)
    assert res.log.column("t") == list(range(25))
    assert [r["t"] for r in res.log.rows if r.get("mspbe") is not None] == [0, 10, 20, 24]
    assert 0 <= res.output_index < 25


def test_nonprivate_baseline_equals_zero_noise_dptd(chain_data):
    model = LinearModel(one_hot_features(5))
    cfg = DptdConfig(T=100, seed=4)
    a = run(cfg, model, chain_data)
    b = run_baseline(BaselineKind.NON_PRIVATE_TD, replace(cfg, clip_G=None), model, chain_data)
    assert a.log.to_csv() == b.log.to_csv()


def test_plain_sgda_zero_gradients_stationary(chain_data):
    model = LinearModel(np.zeros((5, 3)))
    res = run_baseline("plain_sgda", DptdConfig(T=30, seed=1), model, chain_data)
    st0, _ = dptd_init(DptdConfig(T=30, seed=1), model, chain_data, Streams(1))
    assert np.array_equal(res.final.theta, st0.theta)
    assert np.array_equal(res.final.omega, st0.omega)


def test_plain_sgda_step_formula():
    rng = np.random.default_rng(2)
    model = LinearModel(rng.normal(size=(3, 2)))
    st0 = state([0.1, 0.2], [0.3, -0.2], [0, 0], [0, 0], t=4)
    cfg = DptdConfig()
    new, _ = plain_sgda_step(st0, cfg, model, GAMMA, FixedSampler(2, 0, -0.4), Streams(0))
    tr = Transition(2, 0, 0, -0.4)
    nu = cfg.nu(4)
    g = objective.sample_grads(model, st0.theta, st0.omega, tr, GAMMA)
    assert new.theta == pytest.approx(project_box(st0.theta - 2 * nu * g.primal, 1), abs=1e-15)
    assert new.omega == pytest.approx(project_box(st0.omega + 2 * nu * g.dual, 1), abs=1e-15)


def test_private_plain_needs_noise(chain_data):
    with pytest.raises(ConfigError):
        run_baseline("private_plain_sgda", DptdConfig(T=5), LinearModel(np.eye(5)), chain_data)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0), st.sampled_from(["linear", "mlp"]))
def test_feasibility_every_step(seed, sigma, kind):
    data = sample_dataset(chain(4), Policy.uniform(4, 2), np.random.default_rng(seed), 50)
    model = LinearModel(one_hot_features(4)) if kind == "linear" else MlpModel(one_hot_features(4), hidden=4)
    noise = fake_noise(sigma, 40) if sigma > 0 else None
    cfg = DptdConfig(T=40, clip_G=1.0, noise=noise, seed=seed, metric_interval=1000)
    seen = []
    run(cfg, model, data, hooks=lambda s, rec: seen.append(s))
    for s in seen:
        assert np.max(np.abs(s.theta)) <= 1.0 and np.max(np.abs(s.omega)) <= 1.0


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_momentum_norm_bound_without_noise(seed, G):
    data = sample_dataset(chain(4), Policy.uniform(4, 2), np.random.default_rng(seed), 50)
    model = MlpModel(one_hot_features(4), hidden=3)
    cfg = DptdConfig(T=60, clip_G=G, seed=seed, metric_interval=1000)
    states = []
    res = run(cfg, model, data, hooks=lambda s, rec: states.append(s))
    states.append(res.final)
    p0, d0 = np.linalg.norm(states[0].p), np.linalg.norm(states[0].d)
    for s in states:
        assert np.linalg.norm(s.p) <= max(p0, G) + 1e-12
        assert np.linalg.norm(s.d) <= max(d0, G) + 1e-12


def test_trajectory_mode_private_run():
    mdp = chain(5)
    data = sample_dataset(mdp, Policy.uniform(5, 2), np.random.default_rng(0), 5, n_trajectories=2000)
    grid = np.logspace(-6, -0.05, 60)
    cal = calibrate_best(calibrate_trajectory, PrivacyBudget(100.0, 1e-5), 500, 5, 2000, 1.0, beta_grid=grid)
    assert cal.valid
    cfg = DptdConfig(T=500, clip_G=1.0, noise=cal, seed=0)
    res = run(cfg, LinearModel(one_hot_features(5)), data)
    assert np.max(np.abs(res.theta)) <= 1.0
    assert res.log.header["config"]["noise"]["mode"] == "trajectory"


def test_sampler_trajectory_draws_whole_trajectory():
    data = sample_dataset(chain(3), Policy.uniform(3, 2), np.random.default_rng(0), 4, n_trajectories=6)
    sm = Sampler(data, np.random.default_rng(0))
    k, batch = sm.draw()
    traj = data.trajectories[k]
    assert batch.s.tolist() == [t.state for t in traj]
    assert sm.noise_scale == 1 / 4
