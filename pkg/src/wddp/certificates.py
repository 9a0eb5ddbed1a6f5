"""Empirical checks of a loss family's declared G, L and PL constants."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .federation import train_centralized_nonprivate
from .losses import LabeledDataset, Loss, pl_verify

REL_SLACK = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    witness: dict | None = None


def _ball_points(rng, count: int, p: int, radius: float) -> np.ndarray:
    pts = rng.standard_normal((count, p))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts * radius * rng.random((count, 1)) ** (1.0 / p)


def check_lipschitz(loss: Loss, data: LabeledDataset, samples: int = 500, seed: int = 0,
                    radius: float = 10.0) -> CheckResult:
    """Per-example gradient norms stay below G over random and adversarial parameters.

    Adversarial points push the largest-norm row towards a residual of 1.
    """
    rng = np.random.default_rng(seed)
    G = loss.metadata.lipschitz_g
    thetas = list(_ball_points(rng, samples, data.d, radius))
    norms = np.linalg.norm(data.features, axis=1)
    for i in np.argsort(norms)[::-1][:5]:
        if norms[i] > 0:
            sign = 1.0 - 2.0 * data.labels[i]  # y=1 wants z -> -inf
            thetas.append(sign * radius * data.features[i] / norms[i])
    worst, worst_theta, worst_row = -np.inf, None, None
    for theta in thetas:
        g = np.linalg.norm(loss.per_example_gradients(theta, data), axis=1)
        i = int(np.argmax(g))
        if g[i] > worst:
            worst, worst_theta, worst_row = float(g[i]), theta, i
    passed = worst <= G * (1 + REL_SLACK)
    witness = None if passed else {"theta": worst_theta.tolist(), "row": worst_row, "gradient_norm": worst}
    return CheckResult("lipschitz", passed, f"max per-example gradient norm {worst:.6g} vs G={G:g}", witness)


def check_smoothness(loss: Loss, data: LabeledDataset, samples: int = 500, seed: int = 0,
                     radius: float = 10.0) -> CheckResult:
    rng = np.random.default_rng(seed + 1)
    L = loss.metadata.smoothness_l
    a = _ball_points(rng, samples, data.d, radius)
    b = a + 0.1 * rng.standard_normal(a.shape) * rng.random((samples, 1))
    worst, witness = 0.0, None
    for t1, t2 in zip(a, b):
        dist = np.linalg.norm(t1 - t2)
        if dist == 0:
            continue
        ratio = np.linalg.norm(loss.gradient(t1, data) - loss.gradient(t2, data)) / dist
        if ratio > worst:
            worst, witness = float(ratio), {"theta1": t1.tolist(), "theta2": t2.tolist(), "ratio": float(ratio)}
    passed = worst <= L * (1 + REL_SLACK)
    return CheckResult("smoothness", passed, f"max gradient Lipschitz ratio {worst:.6g} vs L={L:g}",
                       None if passed else witness)


def check_pl(loss: Loss, data: LabeledDataset, samples: int = 500, seed: int = 0,
             radius: float = 10.0) -> CheckResult:
    mu = loss.metadata.curvature
    if mu is None:
        return CheckResult("pl", True, "skipped: no strong-convexity or PL certificate declared")
    L = loss.metadata.smoothness_l
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta_star = train_centralized_nonprivate(data, loss, 20_000 if data.d > 1 else 5_000, 1.0 / L,
                                                  tol=1e-10)
    f_star = loss.value(theta_star, data)
    box = [(-radius / np.sqrt(data.d), radius / np.sqrt(data.d))] * data.d
    result = pl_verify(lambda t: loss.value_and_gradient(t, data), f_star, mu, box, samples, seed)
    detail = f"min ||grad||^2 / (2 (f - f*)) = {result.min_ratio:.6g} vs mu={mu:.6g}"
    witness = None if result else {"theta": result.witness.tolist(), "grad_sq": result.witness_lhs,
                                   "two_mu_gap": result.witness_rhs}
    return CheckResult("pl", result.passed, detail, witness)


def run_certificates(loss: Loss, data: LabeledDataset, samples: int = 500, seed: int = 0,
                     radius: float = 10.0) -> list[CheckResult]:
    return [check(loss, data, samples, seed, radius) for check in (check_lipschitz, check_smoothness, check_pl)]
