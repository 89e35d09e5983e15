"""Renyi-DP accounting and Gaussian noise calibration.

Per iteration each side (primal momentum p, dual momentum d) releases one
subsampled Gaussian mechanism. Over T iterations the RDP costs compose
additively at a shared order and are converted to (epsilon, delta)-DP.

The subsampled Gaussian bound

    rho = 3.5 tau^2 Delta^2 alpha / sigma^2

only holds in the regime

    sigma'^2 = sigma^2 / Delta^2 >= 0.7
    alpha <= 2 sigma'^2 log(1 / (tau alpha (1 + sigma'^2))) / 3 + 1

and every function here refuses to report a budget outside it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

SIGMA_PRIME_SQ_MIN = 0.7
SUBSAMPLED_CONSTANT = 3.5
DEFAULT_BETA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


class InvalidRegime(ValueError):
    """Parameters fall outside the validity region of the subsampled Gaussian bound."""

    def __init__(self, failures: list["ConstraintCheck"], hint: str = ""):
        self.failures = failures
        lines = [f"{c.name}: {c.detail} (slack {c.slack:.6g})" for c in failures]
        msg = "; ".join(lines)
        super().__init__(msg + (f". {hint}" if hint else ""))


class NoAdmissibleOrder(ValueError):
    """No order on the grid satisfies the subsampled-Gaussian regime."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    alpha: float | None = None  # order achieving epsilon, when produced by an accountant

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        _check_delta(self.delta)


@dataclass(frozen=True)
class RdpPoint:
    alpha: float
    rho: float

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"RDP order must exceed 1, got {self.alpha}")
        if self.rho < 0:
            raise ValueError(f"RDP level must be nonnegative, got {self.rho}")


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    ok: bool
    slack: float  # >= 0 when satisfied
    detail: str


@dataclass(frozen=True)
class NoiseCalibration:
    mode: str
    sigma: float
    alpha_prime: float
    beta_prime: float
    sensitivity: float
    sampling_rate: float
    sigma_prime_sq: float
    T: int
    epsilon: float
    delta: float
    checks: tuple[ConstraintCheck, ...] = field(default_factory=tuple)

    @property
    def valid(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failed(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.ok]

    def require_valid(self) -> "NoiseCalibration":
        if not self.valid:
            raise InvalidRegime(self.failed, _HINT)
        return self

    def report(self) -> dict:
        out = asdict(self)
        out["checks"] = [asdict(c) for c in self.checks]
        out["valid"] = self.valid
        out["failed"] = [c.name for c in self.failed]
        return out


_HINT = "try more data (larger n or m), fewer iterations T, or a different beta'"


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _check_positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


# ---------------------------------------------------------------- primitives


def rdp_gaussian(sensitivity: float, sigma: float, alpha: float) -> RdpPoint:
    _check_positive(sensitivity=sensitivity, sigma=sigma)
    return RdpPoint(alpha, alpha * sensitivity**2 / (2.0 * sigma**2))


def regime_checks(sensitivity: float, sigma: float, alpha: float, tau: float) -> tuple[ConstraintCheck, ...]:
    """Evaluate the subsampled-Gaussian validity constraints with their numeric slack."""
    sp2 = sigma**2 / sensitivity**2
    checks = [
        ConstraintCheck(
            "order_above_one", alpha > 1, alpha - 1, f"alpha={alpha:.6g} must exceed 1"
        ),
        ConstraintCheck(
            "sigma_prime_sq",
            sp2 >= SIGMA_PRIME_SQ_MIN,
            sp2 - SIGMA_PRIME_SQ_MIN,
            f"sigma'^2={sp2:.6g} must be >= {SIGMA_PRIME_SQ_MIN}",
        ),
    ]
    arg = 1.0 / (tau * alpha * (1.0 + sp2))
    bound = 2.0 * sp2 * math.log(arg) / 3.0 + 1.0
    checks.append(
        ConstraintCheck(
            "order_bound",
            alpha <= bound,
            bound - alpha,
            f"alpha={alpha:.6g} must be <= 2 sigma'^2 log(1/(tau alpha (1+sigma'^2)))/3 + 1 = {bound:.6g}",
        )
    )
    return tuple(checks)


def rdp_subsampled_gaussian(sensitivity: float, sigma: float, alpha: float, tau: float) -> RdpPoint:
    _check_positive(sensitivity=sensitivity, sigma=sigma)
    if not 0 < tau <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {tau}")
    if not alpha > 1:
        raise ValueError(f"RDP order must exceed 1, got {alpha}")
    failed = [c for c in regime_checks(sensitivity, sigma, alpha, tau) if not c.ok]
    if failed:
        raise InvalidRegime(failed)
    return RdpPoint(alpha, SUBSAMPLED_CONSTANT * tau**2 * sensitivity**2 * alpha / sigma**2)


def compose(points: Iterable[RdpPoint]) -> RdpPoint:
    """Sum RDP levels at a shared order. An empty list composes to rho = 0.

    For the empty case there is no order to report, so the returned point uses
    alpha = inf; ``rdp_to_dp`` of it yields epsilon from rho=0 for any alpha.
    """
    points = list(points)
    if not points:
        return RdpPoint(math.inf, 0.0)
    alpha = points[0].alpha
    if any(p.alpha != alpha for p in points):
        raise ValueError("cannot compose RDP points at different orders")
    return RdpPoint(alpha, math.fsum(p.rho for p in points))


def rdp_to_dp(point: RdpPoint, delta: float) -> PrivacyBudget:
    _check_delta(delta)
    return PrivacyBudget(point.rho + math.log(1.0 / delta) / (point.alpha - 1.0), delta, point.alpha)


# ---------------------------------------------------------------- calibration


def alpha_prime(epsilon: float, delta: float, beta_prime: float) -> float:
    return math.log(1.0 / delta) / ((1.0 - beta_prime) * epsilon) + 1.0


def _calibrate(mode, budget, T, sensitivity, tau, beta_prime):
    if not 0 < beta_prime < 1:
        raise ValueError(f"beta' must lie in (0, 1), got {beta_prime}")
    if T < 1:
        raise ValueError("T must be at least 1")
    a = alpha_prime(budget.epsilon, budget.delta, beta_prime)
    # per-step rho = 3.5 tau^2 Delta^2 a / sigma^2; T steps must spend beta' * epsilon
    sigma_sq = SUBSAMPLED_CONSTANT * tau**2 * sensitivity**2 * T * a / (beta_prime * budget.epsilon)
    sigma = math.sqrt(sigma_sq)
    return NoiseCalibration(
        mode=mode,
        sigma=sigma,
        alpha_prime=a,
        beta_prime=beta_prime,
        sensitivity=sensitivity,
        sampling_rate=tau,
        sigma_prime_sq=sigma_sq / sensitivity**2,
        T=int(T),
        epsilon=budget.epsilon,
        delta=budget.delta,
        checks=regime_checks(sensitivity, sigma, a, tau),
    )


def calibrate_sas(budget: PrivacyBudget, T: int, n: int, G: float, beta_prime: float = 0.5) -> NoiseCalibration:
    """sigma^2 = 14 G^2 T alpha' / (n^2 beta' epsilon) for one trajectory of n transitions."""
    _check_positive(n=n, G=G)
    return _calibrate("sas", budget, T, 2.0 * G, 1.0 / n, beta_prime)


def calibrate_trajectory(
    budget: PrivacyBudget, T: int, n: int, m: int, G: float, beta_prime: float = 0.5
) -> NoiseCalibration:
    """sigma^2 = 14 n^2 G^2 T alpha' / (m^2 beta' epsilon) for m trajectories of length <= n."""
    _check_positive(n=n, m=m, G=G)
    return _calibrate("trajectory", budget, T, 2.0 * n * G, 1.0 / m, beta_prime)


def calibrate_best(calibrator, *args, beta_grid: Sequence[float] = DEFAULT_BETA_GRID, **kwargs) -> NoiseCalibration:
    """Pick beta' from ``beta_grid`` minimizing sigma among valid calibrations.

    When no beta' is valid the calibration with the least-negative worst slack
    is returned so callers can report why.
    """
    cands = [calibrator(*args, beta_prime=b, **kwargs) for b in beta_grid]
    valid = [c for c in cands if c.valid]
    if valid:
        return min(valid, key=lambda c: c.sigma)
    return max(cands, key=lambda c: min(ch.slack for ch in c.checks))


# ---------------------------------------------------------------- forward accounting


def verify_budget(
    sigma: float,
    T: int,
    sensitivity: float,
    tau: float,
    delta: float,
    alpha_grid: Sequence[float],
) -> PrivacyBudget:
    """Smallest epsilon over admissible orders for T composed subsampled Gaussians."""
    if not alpha_grid:
        raise ValueError("alpha grid is empty")
    best = None
    for a in alpha_grid:
        try:
            step = rdp_subsampled_gaussian(sensitivity, sigma, a, tau)
        except (InvalidRegime, ValueError):
            continue
        total = compose([step] * int(T))
        eps = rdp_to_dp(total, delta)
        if best is None or eps.epsilon < best.epsilon:
            best = eps
    if best is None:
        raise NoAdmissibleOrder(
            f"none of {len(alpha_grid)} orders is admissible for sigma={sigma:.6g}, "
            f"Delta={sensitivity:.6g}, tau={tau:.6g}"
        )
    return best


def default_alpha_grid(extra: Iterable[float] = ()) -> list[float]:
    grid = [1.0 + x / 10.0 for x in range(1, 100)] + list(range(11, 64)) + [128.0, 256.0, 512.0]
    return sorted(set(grid) | {float(a) for a in extra})


def accounting_report(cal: NoiseCalibration) -> dict:
    """Calibration report plus forward-accounted epsilon (per side and for the p, d pair)."""
    rep = cal.report()
    try:
        per_side = verify_budget(
            cal.sigma, cal.T, cal.sensitivity, cal.sampling_rate, cal.delta, default_alpha_grid([cal.alpha_prime])
        )
        step = rdp_subsampled_gaussian(cal.sensitivity, cal.sigma, cal.alpha_prime, cal.sampling_rate)
        at_alpha = rdp_to_dp(compose([step] * cal.T), cal.delta)
        pair = rdp_to_dp(compose([step] * (2 * cal.T)), cal.delta)
        rep["achieved_epsilon"] = per_side.epsilon
        rep["achieved_alpha"] = per_side.alpha
        rep["epsilon_at_alpha_prime"] = at_alpha.epsilon
        rep["epsilon_primal_and_dual_jointly"] = pair.epsilon
    except (InvalidRegime, NoAdmissibleOrder) as err:
        rep["achieved_epsilon"] = None
        rep["accounting_error"] = str(err)
    return rep
