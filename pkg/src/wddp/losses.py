"""Loss families with full-batch gradients and certified constants.

Every loss here is an average of per-example terms, ``L_D(theta) = mean_i l(theta, x_i, y_i)``,
so the distributed objective and its shard gradients come for free.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LossMetadata:
    lipschitz_g: float
    smoothness_l: float
    strong_convexity: float | None = None
    pl_constant: float | None = None

    def __post_init__(self):
        if not self.lipschitz_g > 0 or not self.smoothness_l > 0:
            raise ValueError("lipschitz_g and smoothness_l must be positive")
        if self.strong_convexity is not None:
            if self.strong_convexity < 0:
                raise ValueError("strong_convexity must be non-negative")
            if self.smoothness_l < self.strong_convexity:
                raise ValueError("smoothness_l must be >= strong_convexity")
        if self.pl_constant is not None and not self.pl_constant > 0:
            raise ValueError("pl_constant must be positive")

    @property
    def curvature(self) -> float | None:
        """Strong-convexity constant if certified, else the PL constant."""
        return self.strong_convexity if self.strong_convexity is not None else self.pl_constant


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"features must be a matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.features[idx], self.labels[idx], self.feature_names)

    def max_row_norm(self) -> float:
        return float(np.linalg.norm(self.features, axis=1).max()) if self.n else 0.0

    def check_normalized(self, tol: float = 1e-12) -> None:
        """Raise unless every row lies in the unit ball and labels are binary."""
        norm = self.max_row_norm()
        if norm > 1 + tol:
            raise ValueError(f"row norm {norm:.6g} exceeds 1; the G=1 certificate needs normalized rows")
        if not np.isin(self.labels, (0.0, 1.0)).all():
            raise ValueError("labels must be 0/1")


class Loss:
    """Average of per-example losses. Subclasses implement the per-example pieces."""

    name = "loss"
    metadata: LossMetadata

    def per_example_values(self, theta, data: LabeledDataset) -> np.ndarray:
        raise NotImplementedError

    def per_example_gradients(self, theta, data: LabeledDataset) -> np.ndarray:
        raise NotImplementedError

    def value(self, theta, data: LabeledDataset) -> float:
        return float(np.mean(self.per_example_values(theta, data)))

    def gradient(self, theta, data: LabeledDataset) -> np.ndarray:
        return self.per_example_gradients(theta, data).mean(axis=0)

    def value_and_gradient(self, theta, data):
        return self.value(theta, data), self.gradient(theta, data)

    def shard_gradients(self, thetas: np.ndarray, data: LabeledDataset,
                        offsets: Sequence[int]) -> np.ndarray:
        """Row j is the mean gradient of rows ``offsets[j]:offsets[j+1]`` at ``thetas[j]``.

        ``data`` must be ordered by shard.
        """
        out = np.empty_like(thetas, dtype=float)
        for j in range(len(offsets) - 1):
            out[j] = self.gradient(thetas[j], data.subset(range(offsets[j], offsets[j + 1])))
        return out


class LogisticLoss(Loss):
    """Cross-entropy logistic regression, ``z = x . theta``, labels in {0, 1}.

    With rows in the unit ball every per-example gradient ``x (h(z) - y)`` has norm
    at most 1, and the Hessian ``h (1 - h) x x^T`` is bounded by 1/4.
    """

    name = "logistic"

    def __init__(self):
        self.metadata = LossMetadata(lipschitz_g=1.0, smoothness_l=0.25)

    def per_example_values(self, theta, data):
        z = data.features @ np.asarray(theta, dtype=float)
        # -[y log h + (1-y) log(1-h)] = softplus((1 - 2y) z)
        return np.logaddexp(0.0, (1.0 - 2.0 * data.labels) * z)

    def residuals(self, theta, data) -> np.ndarray:
        return expit(data.features @ np.asarray(theta, dtype=float)) - data.labels

    def per_example_gradients(self, theta, data):
        return data.features * self.residuals(theta, data)[:, None]

    def gradient(self, theta, data):
        return data.features.T @ self.residuals(theta, data) / data.n

    def shard_gradients(self, thetas, data, offsets):
        offsets = np.asarray(offsets)
        sizes = np.diff(offsets)
        row_theta = np.repeat(np.asarray(thetas, dtype=float), sizes, axis=0)
        z = np.einsum("ij,ij->i", data.features, row_theta)
        weighted = data.features * (expit(z) - data.labels)[:, None]
        return np.add.reduceat(weighted, offsets[:-1], axis=0) / sizes[:, None]


class RegularizedLogisticLoss(LogisticLoss):
    """Logistic loss plus ``(reg_lambda / 2) ||theta||^2``.

    The penalty is not globally Lipschitz, so G is certified on the ball of
    radius ``radius``; trainers should project onto that ball.
    """

    name = "regularized_logistic"

    def __init__(self, reg_lambda: float, radius: float = 10.0):
        if not reg_lambda > 0:
            raise ValueError(f"reg_lambda must be positive, got {reg_lambda}")
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius}")
        self.reg_lambda = float(reg_lambda)
        self.radius = float(radius)
        self.metadata = LossMetadata(
            lipschitz_g=1.0 + reg_lambda * radius,
            smoothness_l=0.25 + reg_lambda,
            strong_convexity=reg_lambda,
        )

    def _penalty(self, theta):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * self.reg_lambda * float(theta @ theta)

    def per_example_values(self, theta, data):
        return super().per_example_values(theta, data) + self._penalty(theta)

    def per_example_gradients(self, theta, data):
        return super().per_example_gradients(theta, data) + self.reg_lambda * np.asarray(theta, dtype=float)

    def gradient(self, theta, data):
        return super().gradient(theta, data) + self.reg_lambda * np.asarray(theta, dtype=float)

    def shard_gradients(self, thetas, data, offsets):
        return super().shard_gradients(thetas, data, offsets) + self.reg_lambda * np.asarray(thetas, dtype=float)


def logistic_loss(theta, data: LabeledDataset) -> float:
    return LogisticLoss().value(theta, data)


def logistic_gradient(theta, data: LabeledDataset) -> np.ndarray:
    return LogisticLoss().gradient(theta, data)


def regularized_logistic(theta, data: LabeledDataset, reg_lambda: float,
                         radius: float = 10.0) -> tuple[float, np.ndarray]:
    return RegularizedLogisticLoss(reg_lambda, radius).value_and_gradient(theta, data)


class QuadraticLoss(Loss):
    """``0.5 ||theta - x||^2`` per example; the minimizer is the feature mean.

    G is certified on the ball of radius ``radius`` for unit-ball features.
    """

    name = "quadratic"

    def __init__(self, radius: float = 10.0):
        self.radius = float(radius)
        self.metadata = LossMetadata(lipschitz_g=radius + 1.0, smoothness_l=1.0, strong_convexity=1.0)

    def per_example_values(self, theta, data):
        diff = np.asarray(theta, dtype=float)[None, :] - data.features
        return 0.5 * np.einsum("ij,ij->i", diff, diff)

    def per_example_gradients(self, theta, data):
        return np.asarray(theta, dtype=float)[None, :] - data.features

    def gradient(self, theta, data):
        return np.asarray(theta, dtype=float) - data.features.mean(axis=0)

    def shard_gradients(self, thetas, data, offsets):
        offsets = np.asarray(offsets)
        means = np.add.reduceat(data.features, offsets[:-1], axis=0) / np.diff(offsets)[:, None]
        return np.asarray(thetas, dtype=float) - means


# f(t) = t^2 + 3 sin^2 t: non-convex, satisfies the PL inequality, f* = 0 at t = 0.
PL_SMOOTHNESS = 8.0  # sup |f''| = sup |2 + 6 cos 2t|


def pl_scalar_value(theta) -> float:
    t = float(np.asarray(theta, dtype=float).reshape(-1)[0])
    return t * t + 3.0 * math.sin(t) ** 2


def pl_scalar_gradient(theta) -> np.ndarray:
    t = float(np.asarray(theta, dtype=float).reshape(-1)[0])
    return np.array([2.0 * t + 3.0 * math.sin(2.0 * t)])


def pl_infimum_ratio(lo: float = -10.0, hi: float = 10.0, points: int = 200_001) -> float:
    """Sampled infimum of ``f'(t)^2 / (2 f(t))`` over ``[lo, hi]`` (t = 0 excluded)."""
    t = np.linspace(lo, hi, points)
    t = t[np.abs(t) > 1e-9]
    f = t * t + 3.0 * np.sin(t) ** 2
    g = 2.0 * t + 3.0 * np.sin(2.0 * t)
    return float(np.min(g * g / (2.0 * f)))


@functools.lru_cache(maxsize=None)
def certified_pl_constant(lo: float = -10.0, hi: float = 10.0, margin: float = 0.05) -> float:
    return (1.0 - margin) * pl_infimum_ratio(lo, hi)


def pl_test_function(theta) -> tuple[float, np.ndarray, LossMetadata]:
    radius = 10.0
    meta = LossMetadata(
        lipschitz_g=2.0 * radius + 3.0,
        smoothness_l=PL_SMOOTHNESS,
        pl_constant=certified_pl_constant(-radius, radius),
    )
    return pl_scalar_value(theta), pl_scalar_gradient(theta), meta


class PLScalarLoss(Loss):
    """The scalar PL function used as every example's loss, so ``L_D = f``.

    Constants are certified on ``[-radius, radius]``; the PL constant is measured
    numerically there.
    """

    name = "pl_scalar"

    def __init__(self, radius: float = 10.0):
        self.radius = float(radius)
        self.metadata = LossMetadata(
            lipschitz_g=2.0 * radius + 3.0,
            smoothness_l=PL_SMOOTHNESS,
            pl_constant=certified_pl_constant(-radius, radius),
        )

    def value(self, theta, data=None):
        return pl_scalar_value(theta)

    def gradient(self, theta, data=None):
        return pl_scalar_gradient(theta)

    def per_example_values(self, theta, data):
        return np.full(data.n, pl_scalar_value(theta))

    def per_example_gradients(self, theta, data):
        return np.repeat(pl_scalar_gradient(theta)[None, :], data.n, axis=0)

    def shard_gradients(self, thetas, data, offsets):
        t = np.asarray(thetas, dtype=float)
        return 2.0 * t + 3.0 * np.sin(2.0 * t)


@dataclass
class PLCheck:
    passed: bool
    min_ratio: float
    witness: np.ndarray | None = None
    witness_lhs: float | None = None
    witness_rhs: float | None = None

    def __bool__(self) -> bool:
        return self.passed


def pl_verify(loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]], f_star: float, mu: float,
              sample_box: Sequence[tuple[float, float]], samples: int, seed: int = 0) -> PLCheck:
    """Check ``||grad f||^2 >= 2 mu (f - f*)`` on a grid plus random points in the box.

    ``loss_fn`` maps theta to ``(value, gradient)``. The returned object is truthy
    iff the inequality held everywhere; on failure it carries the worst point.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    box = np.asarray(sample_box, dtype=float).reshape(-1, 2)
    p = box.shape[0]
    per_axis = max(2, int(round(samples ** (1.0 / p))))
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    rng = np.random.default_rng(seed)
    rand = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((samples, p))

    worst, worst_ratio, worst_terms = None, math.inf, (None, None)
    for theta in np.vstack([grid, rand]):
        value, grad = loss_fn(theta)
        lhs = float(np.dot(grad, grad))
        gap = value - f_star
        rhs = 2.0 * mu * gap
        if gap > 0:
            ratio = lhs / (2.0 * gap)
            if ratio < worst_ratio:
                worst_ratio = ratio
        if lhs < rhs and (worst is None or lhs - rhs < worst_terms[0] - worst_terms[1]):
            worst, worst_terms = theta.copy(), (lhs, rhs)
    if worst is not None:
        return PLCheck(False, worst_ratio, worst, *worst_terms)
    return PLCheck(True, worst_ratio)


def get_loss(name: str, reg_lambda: float = 0.1, radius: float = 10.0) -> Loss:
    if name == "logistic":
        return LogisticLoss()
    if name == "regularized_logistic":
        return RegularizedLogisticLoss(reg_lambda, radius)
    if name == "quadratic":
        return QuadraticLoss(radius)
    if name == "pl_scalar":
        return PLScalarLoss(radius)
    raise ValueError(f"unknown loss family {name!r}")
