"""Gaussian gradient perturbation and moments-accountant calibration.

The full-batch gradient of an average of n G-Lipschitz losses changes by at
most 2G/n when one record is swapped. Each noisy round is a Gaussian mechanism
with that sensitivity; its log moment is composed linearly over T rounds and
converted to (epsilon, delta) with the usual tail bound

    delta = min_lambda exp(alpha(lambda) - lambda * epsilon).

Every quantity below depends on (G, T, n, sigma) only through the normalized
noise multiplier ``s = sigma * n / (G * sqrt(T))``. Calibration bisects on
``s`` so the scaling laws sigma ~ sqrt(T) and sigma ~ G/n hold to machine
precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_LAMBDA = 128
LAMBDA_CAP = 10**6
DEFAULT_REL_TOL = 1e-6
DEFAULT_CEILING_FACTOR = 1e6


class CalibrationError(ValueError):
    """No noise level below the ceiling meets the requested budget."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class MechanismParams:
    lipschitz_g: float
    total_rounds: int
    total_samples: int
    sigma: float

    def __post_init__(self):
        if not self.lipschitz_g > 0:
            raise ValueError(f"lipschitz_g must be positive, got {self.lipschitz_g}")
        if self.total_rounds < 1:
            raise ValueError(f"total_rounds must be >= 1, got {self.total_rounds}")
        if self.total_samples < 1:
            raise ValueError(f"total_samples must be >= 1, got {self.total_samples}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.sensitivity):
            raise ValueError("sensitivity 2G/n is not finite")

    @property
    def sensitivity(self) -> float:
        """l2 sensitivity of the full-batch gradient query."""
        return 2.0 * self.lipschitz_g / self.total_samples

    @property
    def noise_multiplier(self) -> float:
        return self.sigma * self.total_samples / (self.lipschitz_g * math.sqrt(self.total_rounds))


@dataclass(frozen=True)
class MomentBound:
    order_lambda: float
    log_moment: float


@dataclass(frozen=True)
class Calibration:
    """Outcome of :func:`calibrate_sigma`; ``params`` carries the noise level."""

    params: MechanismParams
    budget: PrivacyBudget
    implied_c: float
    lambda_star: float
    delta_achieved: float

    @property
    def sigma(self) -> float:
        return self.params.sigma

    def to_record(self) -> dict:
        return {
            "epsilon": self.budget.epsilon,
            "delta": self.budget.delta,
            "G": self.params.lipschitz_g,
            "T": self.params.total_rounds,
            "n": self.params.total_samples,
            "sigma": self.params.sigma,
            "implied_c": self.implied_c,
            "lambda_star": int(self.lambda_star) if float(self.lambda_star).is_integer() else self.lambda_star,
            "delta_achieved": self.delta_achieved,
        }


def default_lambda_grid(epsilon: float | None = None, delta: float | None = None) -> np.ndarray:
    """Integer moment orders 1..128, extended when the budget needs larger orders.

    The tail bound can only reach ``delta`` at orders with
    ``lambda * epsilon > ln(1/delta)``, and the optimal order sits near
    ``2 ln(1/delta) / epsilon``; the grid is stretched to ``4 ln(1/delta) / epsilon``,
    capped at ``LAMBDA_CAP`` orders to bound memory.
    """
    top = DEFAULT_MAX_LAMBDA
    if epsilon is not None and delta is not None:
        top = min(LAMBDA_CAP, max(top, math.ceil(4.0 * math.log(1.0 / delta) / epsilon)))
    return np.arange(1, top + 1, dtype=float)


def _as_grid(lambda_grid: Iterable[float]) -> np.ndarray:
    grid = np.asarray(list(lambda_grid) if not isinstance(lambda_grid, np.ndarray) else lambda_grid,
                      dtype=float)
    if grid.size == 0:
        raise ValueError("lambda_grid must be non-empty")
    if np.any(grid < 1):
        raise ValueError("moment orders must be >= 1")
    return grid


def per_step_log_moment(params: MechanismParams, order_lambda: float) -> float:
    """Log moment of one Gaussian round: lambda (lambda + 1) (2G/n)^2 / (2 sigma^2)."""
    if order_lambda < 1:
        raise ValueError(f"order_lambda must be >= 1, got {order_lambda}")
    delta_sq = params.sensitivity ** 2
    return order_lambda * (order_lambda + 1.0) * delta_sq / (2.0 * params.sigma ** 2)


def composed_log_moment(params: MechanismParams, order_lambda: float) -> float:
    """T-fold composition; returns ``inf`` instead of overflowing."""
    step = per_step_log_moment(params, order_lambda)
    with np.errstate(over="ignore"):
        total = float(np.float64(params.total_rounds) * np.float64(step))
    return total if math.isfinite(total) else math.inf


def moment_bound(params: MechanismParams, order_lambda: float) -> MomentBound:
    return MomentBound(order_lambda, composed_log_moment(params, order_lambda))


def _log_delta_normalized(s: float, epsilon: float, grid: np.ndarray) -> tuple[float, float]:
    # alpha(lambda) = 2 lambda (lambda + 1) / s^2 in the normalized variable
    with np.errstate(over="ignore", divide="ignore"):
        log_terms = 2.0 * grid * (grid + 1.0) / (s * s) - grid * epsilon
    i = int(np.argmin(log_terms))
    return float(log_terms[i]), float(grid[i])


def delta_for_epsilon(params: MechanismParams, budget_epsilon: float,
                      lambda_grid: Sequence[float] | None = None) -> float:
    """Smallest tail-bound delta over the moment orders in ``lambda_grid``."""
    if not budget_epsilon > 0:
        raise ValueError(f"budget_epsilon must be positive, got {budget_epsilon}")
    grid = default_lambda_grid() if lambda_grid is None else _as_grid(lambda_grid)
    log_delta, _ = _log_delta_normalized(params.noise_multiplier, budget_epsilon, grid)
    with np.errstate(over="ignore"):
        return float(np.exp(log_delta))


def calibrate_sigma(budget: PrivacyBudget, lipschitz_g: float, total_rounds: int,
                    total_samples: int, *, lambda_grid: Sequence[float] | None = None,
                    rel_tol: float = DEFAULT_REL_TOL,
                    ceiling: float | None = None) -> Calibration:
    """Smallest sigma whose tail bound meets ``budget``, found by bisection.

    ``ceiling`` defaults to ``1e6 * G``. Raises :class:`CalibrationError` when even
    the ceiling fails, which means the order grid cannot reach ``delta`` at this
    ``epsilon``.
    """
    if not lipschitz_g > 0 or total_rounds < 1 or total_samples < 1:
        raise ValueError("lipschitz_g, total_rounds and total_samples must be positive")
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    eps, log_target = budget.epsilon, math.log(budget.delta)
    grid = default_lambda_grid(eps, budget.delta) if lambda_grid is None else _as_grid(lambda_grid)
    if ceiling is None:
        ceiling = DEFAULT_CEILING_FACTOR * lipschitz_g
    scale = lipschitz_g * math.sqrt(total_rounds) / total_samples
    s_max = ceiling / scale

    def feasible(s: float) -> bool:
        return _log_delta_normalized(s, eps, grid)[0] <= log_target

    if not feasible(s_max):
        reachable = -float(grid.max()) * eps
        raise CalibrationError(
            f"no sigma <= {ceiling:g} achieves delta={budget.delta:g} at epsilon={eps:g}; "
            f"the largest moment order {grid.max():g} bounds delta below by "
            f"exp({reachable:.3g}) = {math.exp(reachable):.3g}"
        )

    # bracket from a scale-free start so the bisection path depends on (eps, delta) only
    s_lo, s_hi = 0.5, 1.0
    while not feasible(s_hi) and s_hi < s_max:
        s_lo, s_hi = s_hi, 2.0 * s_hi
    s_hi = min(s_hi, s_max)
    while feasible(s_lo):
        s_lo /= 2.0
    while s_hi - s_lo > rel_tol * s_hi:
        mid = 0.5 * (s_lo + s_hi)
        if feasible(mid):
            s_hi = mid
        else:
            s_lo = mid

    log_delta, lam_star = _log_delta_normalized(s_hi, eps, grid)
    params = MechanismParams(lipschitz_g, total_rounds, total_samples, s_hi * scale)
    implied_c = s_hi ** 2 * eps ** 2 / math.log(1.0 / budget.delta)
    return Calibration(params, budget, implied_c, lam_star, math.exp(log_delta))


def sample_gaussian_noise(sigma: float, dimension: int, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {dimension}")
    if sigma == 0:
        return np.zeros(dimension)
    return rng.normal(0.0, sigma, size=dimension)


def spawn_generators(seed: int | np.random.SeedSequence, count: int) -> list[np.random.Generator]:
    """Independent child streams, one per client."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(count)]
