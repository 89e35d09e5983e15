"""Finite tabular MDPs, policies, trajectory sampling and exact oracles.

The stationary distribution, the exact value function and the induced
transition matrix are used as ground truth for the optimization pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12


class NonErgodicChain(RuntimeError):
    """Power iteration did not settle on a stationary distribution."""


class ParseError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class TabularMdp:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # R[s, a]
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("transition rows must sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class Policy:
    probs: np.ndarray  # pi[s, a]

    def __post_init__(self):
        pi = np.asarray(self.probs, dtype=float)
        if pi.ndim != 2:
            raise ValueError("policy table must be 2-dimensional")
        if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", pi)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "Policy":
        pi = np.zeros((len(actions), n_actions))
        pi[np.arange(len(actions)), actions] = 1.0
        return cls(pi)


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    next_state: int
    reward: float


class DatasetMode(str, Enum):
    STATE_ACTION_STATE = "sas"
    TRAJECTORY = "trajectory"


@dataclass
class TrajectoryDataset:
    trajectories: list[list[Transition]]
    mode: DatasetMode
    n_states: int
    n_actions: int
    gamma: float
    n_max: int = field(default=0)

    def __post_init__(self):
        self.mode = DatasetMode(self.mode)
        if not self.trajectories or any(len(t) == 0 for t in self.trajectories):
            raise ValueError("dataset needs at least one nonempty trajectory")
        if self.mode is DatasetMode.STATE_ACTION_STATE and len(self.trajectories) != 1:
            raise ValueError("state-action-state datasets hold exactly one trajectory")
        longest = max(len(t) for t in self.trajectories)
        if self.n_max == 0:
            self.n_max = longest
        if longest > self.n_max:
            raise ValueError(f"trajectory of length {longest} exceeds n_max={self.n_max}")
        for tr in self.transitions():
            _check_bounds(tr, self.n_states, self.n_actions)
        self._arrays = None

    def transitions(self) -> Iterable[Transition]:
        for traj in self.trajectories:
            yield from traj

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectories)

    def arrays(self) -> "TransitionArrays":
        """Flat arrays over all transitions, in dataset order."""
        if self._arrays is None:
            rows = np.array(
                [(tr.state, tr.action, tr.next_state) for tr in self.transitions()], dtype=np.int64
            )
            r = np.array([tr.reward for tr in self.transitions()], dtype=float)
            lengths = np.array([len(t) for t in self.trajectories], dtype=np.int64)
            self._arrays = TransitionArrays(rows[:, 0], rows[:, 1], rows[:, 2], r, lengths)
        return self._arrays


@dataclass(frozen=True)
class TransitionArrays:
    """Column view of a dataset plus per-trajectory offsets."""

    s: np.ndarray
    a: np.ndarray
    sp: np.ndarray
    r: np.ndarray
    lengths: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lengths)])

    def compressed(self) -> "WeightedTransitions":
        """Distinct (s, a, s', r) rows with their empirical frequencies."""
        keys = np.stack([self.s, self.a, self.sp], axis=1).astype(float)
        keys = np.concatenate([keys, self.r[:, None]], axis=1)
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        return WeightedTransitions(
            s=uniq[:, 0].astype(np.int64),
            sp=uniq[:, 2].astype(np.int64),
            r=uniq[:, 3],
            weight=counts / counts.sum(),
        )


@dataclass(frozen=True)
class WeightedTransitions:
    """A distribution over transitions: empirical (from data) or exact (from an MDP)."""

    s: np.ndarray
    sp: np.ndarray
    r: np.ndarray
    weight: np.ndarray


def _check_bounds(tr: Transition, n_states: int, n_actions: int) -> None:
    if not (0 <= tr.state < n_states and 0 <= tr.next_state < n_states):
        raise ValueError(f"state index out of bounds in {tr}")
    if not 0 <= tr.action < n_actions:
        raise ValueError(f"action index out of bounds in {tr}")


def _check_shapes(mdp: TabularMdp, policy: Policy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def induced_transition(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    _check_shapes(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def policy_reward(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    _check_shapes(mdp, policy)
    return np.sum(policy.probs * mdp.reward, axis=1)


def exact_value(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Solve (I - gamma P_pi) V = R_pi directly."""
    P = induced_transition(mdp, policy)
    R = policy_reward(mdp, policy)
    A = np.eye(mdp.n_states) - mdp.gamma * P
    try:
        return np.linalg.solve(A, R)
    except np.linalg.LinAlgError as err:
        raise RuntimeError("Bellman system is numerically singular") from err


def stationary_distribution(
    mdp: TabularMdp, policy: Policy, max_iter: int = 1_000_000, tol: float = 1e-12
) -> np.ndarray:
    """Power iteration on the induced chain.

    Periodic chains are handled by iterating the lazy chain (I + P) / 2, which
    has the same stationary distribution.
    """
    P = induced_transition(mdp, policy)
    lazy = 0.5 * (np.eye(mdp.n_states) + P)
    mu = np.full(mdp.n_states, 1.0 / mdp.n_states)
    for _ in range(max_iter):
        nxt = mu @ lazy
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - mu)) <= tol:
            mu = nxt
            break
        mu = nxt
    else:
        raise NonErgodicChain(f"power iteration did not converge in {max_iter} iterations")
    return mu


def exact_transitions(mdp: TabularMdp, policy: Policy) -> WeightedTransitions:
    """Exact distribution of (s, a, s') under mu_pi x pi x P, dropping zero-mass rows."""
    mu = stationary_distribution(mdp, policy)
    w = mu[:, None, None] * policy.probs[:, :, None] * mdp.transition
    s, a, sp = np.nonzero(w > 0)
    return WeightedTransitions(s=s, sp=sp, r=mdp.reward[s, a], weight=w[s, a, sp] / w.sum())


def sample_trajectory(
    mdp: TabularMdp,
    policy: Policy,
    length: int,
    rng: np.random.Generator,
    initial: np.ndarray | None = None,
) -> list[Transition]:
    if length < 1:
        raise ValueError("trajectory length must be at least 1")
    _check_shapes(mdp, policy)
    init = np.full(mdp.n_states, 1.0 / mdp.n_states) if initial is None else np.asarray(initial)
    s = int(rng.choice(mdp.n_states, p=init))
    out = []
    for _ in range(length):
        a = int(rng.choice(mdp.n_actions, p=policy.probs[s]))
        sp = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
        out.append(Transition(s, a, sp, float(mdp.reward[s, a])))
        s = sp
    return out


def sample_dataset(
    mdp: TabularMdp,
    policy: Policy,
    rng: np.random.Generator,
    length: int,
    n_trajectories: int | None = None,
    initial: np.ndarray | None = None,
) -> TrajectoryDataset:
    """One trajectory (state-action-state mode) or ``n_trajectories`` of equal length."""
    if n_trajectories is None:
        trajs = [sample_trajectory(mdp, policy, length, rng, initial)]
        mode = DatasetMode.STATE_ACTION_STATE
    else:
        trajs = _sample_many(mdp, policy, length, n_trajectories, rng, initial)
        mode = DatasetMode.TRAJECTORY
    return TrajectoryDataset(trajs, mode, mdp.n_states, mdp.n_actions, mdp.gamma, n_max=length)


def _sample_many(mdp, policy, length, m, rng, initial):
    # vectorized across trajectories via inverse-CDF draws; deterministic given rng
    if m < 1:
        raise ValueError("need at least one trajectory")
    if length < 1:
        raise ValueError("trajectory length must be at least 1")
    init = np.full(mdp.n_states, 1.0 / mdp.n_states) if initial is None else np.asarray(initial)
    pi_cdf = np.cumsum(policy.probs, axis=1)
    p_cdf = np.cumsum(mdp.transition, axis=2)
    s = np.minimum(np.searchsorted(np.cumsum(init), rng.random(m), side="right"), mdp.n_states - 1)
    S = np.empty((m, length), dtype=np.int64)
    A = np.empty_like(S)
    SP = np.empty_like(S)
    for j in range(length):
        u = rng.random(m)
        a = np.minimum((u[:, None] >= pi_cdf[s]).sum(axis=1), mdp.n_actions - 1)
        u = rng.random(m)
        sp = np.minimum((u[:, None] >= p_cdf[s, a]).sum(axis=1), mdp.n_states - 1)
        S[:, j], A[:, j], SP[:, j] = s, a, sp
        s = sp
    R = mdp.reward[S, A]
    return [
        [Transition(int(S[i, j]), int(A[i, j]), int(SP[i, j]), float(R[i, j])) for j in range(length)]
        for i in range(m)
    ]


# ---------------------------------------------------------------- file format


def dump_dataset(dataset: TrajectoryDataset) -> str:
    """JSON-lines text: a header object, then one object per transition."""
    header = {
        "n_states": dataset.n_states,
        "n_actions": dataset.n_actions,
        "gamma": dataset.gamma,
        "mode": dataset.mode.value,
        "n_max": dataset.n_max,
    }
    lines = [json.dumps(header)]
    for k, traj in enumerate(dataset.trajectories):
        for tr in traj:
            lines.append(
                json.dumps({"traj": k, "s": tr.state, "a": tr.action, "sp": tr.next_state, "r": tr.reward})
            )
    return "\n".join(lines) + "\n"


def save_dataset(path: str | Path, dataset: TrajectoryDataset) -> None:
    Path(path).write_text(dump_dataset(dataset), encoding="utf-8")


def load_dataset(path: str | Path) -> TrajectoryDataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ParseError(f"{path}: empty file")
    try:
        header = json.loads(text[0])
        n_states, n_actions = int(header["n_states"]), int(header["n_actions"])
        gamma, mode, n_max = float(header["gamma"]), DatasetMode(header["mode"]), int(header["n_max"])
    except (ValueError, KeyError, TypeError) as err:
        raise ParseError(f"{path}:1: bad header ({err})") from err

    trajs: dict[int, list[Transition]] = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            k = int(rec["traj"])
            tr = Transition(int(rec["s"]), int(rec["a"]), int(rec["sp"]), float(rec["r"]))
        except (ValueError, KeyError, TypeError) as err:
            raise ParseError(f"{path}:{lineno}: malformed record ({err})") from err
        try:
            _check_bounds(tr, n_states, n_actions)
        except ValueError as err:
            raise ParseError(f"{path}:{lineno}: {err}") from err
        trajs.setdefault(k, []).append(tr)
    if not trajs:
        raise ParseError(f"{path}: no transitions")
    ordered = [trajs[k] for k in sorted(trajs)]
    try:
        return TrajectoryDataset(ordered, mode, n_states, n_actions, gamma, n_max=n_max)
    except ValueError as err:
        raise ParseError(f"{path}: {err}") from err


# ---------------------------------------------------------------- built-in families


def chain(k: int = 5, gamma: float = 0.95, reward_scale: float = 0.2, slip: float = 0.1) -> TabularMdp:
    """Random-walk chain with actions left/right.

    The intended move succeeds with probability ``1 - slip``; otherwise the agent
    stays put. Moving into a wall keeps the agent in place. Entering the leftmost
    state pays ``-reward_scale``, entering the rightmost pays ``+reward_scale``
    (expected over the slip, so R[s, a] is deterministic).
    """
    if k < 2:
        raise ValueError("chain needs at least 2 states")
    P = np.zeros((k, 2, k))
    for s in range(k):
        for a, step in enumerate((-1, 1)):
            tgt = min(max(s + step, 0), k - 1)
            P[s, a, tgt] += 1.0 - slip
            P[s, a, s] += slip
    edge = np.zeros(k)
    edge[0], edge[-1] = -reward_scale, reward_scale
    R = P @ edge
    return TabularMdp(P, R, gamma)


def random_mdp(k: int = 5, n_actions: int = 2, seed: int = 0, gamma: float = 0.95) -> TabularMdp:
    """Dirichlet transitions (all entries positive, hence ergodic) and rewards in [-1, 1] * (1 - gamma)."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(k), size=(k, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(k, n_actions)) * (1.0 - gamma)
    return TabularMdp(P, R, gamma)


def twostate(gamma: float = 0.95, p_stay: float = 0.7, r0: float = 0.0, r1: float = 0.05) -> TabularMdp:
    """Two states, one action; stay with probability ``p_stay``."""
    P = np.array([[[p_stay, 1 - p_stay]], [[1 - p_stay, p_stay]]])
    R = np.array([[r0], [r1]])
    return TabularMdp(P, R, gamma)


FAMILIES = {"chain": chain, "random": random_mdp, "twostate": twostate}


def build_family(name: str, **kwargs) -> TabularMdp:
    try:
        factory = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown MDP family {name!r}; choose from {sorted(FAMILIES)}") from None
    return factory(**kwargs)
