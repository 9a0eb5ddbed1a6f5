"""Simulated clients and a trusted server running noisy full-batch gradient descent.

Two protocols are available:

``sync_every_round``
    Every round each client perturbs its shard gradient at the shared model and
    the server takes one step along the aggregated noisy gradient. This is the
    object the privacy and convergence analyses reason about.
``local_then_aggregate``
    Clients run all T noisy rounds on their own copy from a common start and the
    server aggregates the final models once.

Aggregation reduces with exactly rounded sums (``math.fsum``), so results do not
depend on client order.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Partition
from .losses import LabeledDataset, Loss
from .privacy import MechanismParams

AGGREGATIONS = ("weighted", "uniform")
PROTOCOLS = ("sync_every_round", "local_then_aggregate")
NOISE_MODES = ("aggregate", "per_client")


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    rounds: int = 1000
    learning_rate: float = 0.1
    aggregation: str = "weighted"
    protocol: str = "sync_every_round"
    projection_radius: float | None = None
    seed: int = 0
    init: str = "zeros"
    noise_mode: str = "aggregate"

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.projection_radius is not None and not self.projection_radius > 0:
            raise ValueError("projection_radius must be positive")
        if self.init not in ("zeros", "uniform"):
            raise ValueError(f"init must be 'zeros' or 'uniform', got {self.init!r}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")


@dataclass
class ClientState:
    theta: np.ndarray
    shard: LabeledDataset
    rng: np.random.Generator


@dataclass
class GlobalModel:
    theta: np.ndarray
    round: int


@dataclass(frozen=True)
class TraceRow:
    round: int
    client_or_server: str
    loss_on_pooled_train: float
    grad_norm: float


def project(theta: np.ndarray, radius: float | None) -> np.ndarray:
    if radius is None:
        return theta
    norm = float(np.linalg.norm(theta))
    return theta * (radius / norm) if norm > radius else theta


def aggregation_weights(sizes: Sequence[int], mode: str) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("sizes must be a non-empty list of positive counts")
    if mode == "weighted":
        return sizes / sizes.sum()
    if mode == "uniform":
        return np.full(sizes.size, 1.0 / sizes.size)
    raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")


def _weighted_sum(weights: np.ndarray, rows: np.ndarray) -> np.ndarray:
    products = weights[:, None] * rows
    return np.array([math.fsum(col) for col in products.T])


def aggregate(models: Sequence[np.ndarray], sizes: Sequence[int], mode: str = "weighted") -> np.ndarray:
    """Server update: ``sum_j (n_j / n) theta_j`` or ``(1/m) sum_j theta_j``."""
    if len(models) == 0 or len(models) != len(sizes):
        raise ValueError("need one size per model and at least one model")
    rows = [np.asarray(mdl, dtype=float).reshape(-1) for mdl in models]
    if len({r.shape for r in rows}) != 1:
        raise ValueError(f"model dimensions differ: {sorted({r.size for r in rows})}")
    return _weighted_sum(aggregation_weights(sizes, mode), np.stack(rows))


def effective_sample_size(sizes: Sequence[int], mode: str) -> int:
    """Sample count whose 2G/n matches the sensitivity of the aggregated gradient.

    Swapping one record of client j moves the aggregate by ``w_j * 2G / n_j``:
    ``2G/n`` under size weights, ``2G / (m * n_min)`` under uniform weights.
    """
    if mode == "weighted":
        return int(sum(sizes))
    if mode == "uniform":
        return int(len(sizes) * min(sizes))
    raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")


def client_noise_std(sizes: Sequence[int], mode: str, sigma: float, noise_mode: str = "aggregate") -> float:
    """Std of the noise each client adds.

    ``aggregate`` scales it by ``1 / sqrt(sum_j w_j^2)`` so the server's combined
    noise ``sum_j w_j z_j`` is exactly ``N(0, sigma^2 I)``, the quantity the
    accountant was calibrated for. ``per_client`` adds ``N(0, sigma^2)`` at every
    client, leaving the aggregate with the smaller std ``sigma sqrt(sum_j w_j^2)``.
    """
    if noise_mode == "per_client":
        return sigma
    if noise_mode == "aggregate":
        w = aggregation_weights(sizes, mode)
        return sigma / math.sqrt(math.fsum(w * w))
    raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {noise_mode!r}")


def aggregate_noise_std(sizes: Sequence[int], mode: str, sigma: float, noise_mode: str = "aggregate") -> float:
    """Per-coordinate std of the server's combined noise ``sum_j w_j z_j``."""
    w = aggregation_weights(sizes, mode)
    return client_noise_std(sizes, mode, sigma, noise_mode) * math.sqrt(math.fsum(w * w))


def client_noisy_step(state: ClientState, theta: np.ndarray, eta: float, sigma: float, loss: Loss,
                      projection_radius: float | None = None) -> np.ndarray:
    """One local round: ``theta - eta * (grad L_{D_j}(theta) + z)`` with fresh client noise."""
    theta = np.asarray(theta, dtype=float)
    step = loss.gradient(theta, state.shard)
    if sigma > 0:
        step = step + state.rng.normal(0.0, sigma, size=theta.size)
    return project(theta - eta * step, projection_radius)


def _streams(seed: int, m: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    # child 0 seeds the initial model, child j+1 is client j's noise; independent of m
    children = np.random.SeedSequence(seed).spawn(m + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(c) for c in children[1:]]


def _initial_theta(config: TrainingConfig, p: int, rng: np.random.Generator) -> np.ndarray:
    if config.init == "uniform":
        return rng.uniform(-0.01, 0.01, size=p)
    return np.zeros(p)


def _noise(rngs, sigma: float, p: int) -> np.ndarray:
    return np.stack([rng.normal(0.0, sigma, size=p) for rng in rngs])


def train_distributed(data: LabeledDataset, partition: Partition, loss: Loss, config: TrainingConfig,
                      privacy: MechanismParams | None = None,
                      trace: list[TraceRow] | None = None, trace_every: int = 1,
                      theta0=None) -> GlobalModel:
    """Run noisy distributed gradient descent and return the server model.

    ``privacy=None`` trains without noise. ``sigma`` should be calibrated for the
    global sample count (or :func:`effective_sample_size` for uniform weights).
    ``theta0`` overrides ``config.init`` as the broadcast starting point.
    """
    if partition.total != data.n:
        raise ValueError(f"partition covers {partition.total} rows but data has {data.n}")
    sigma = privacy.sigma if privacy is not None else 0.0
    m, p, eta, radius = partition.m, data.d, config.learning_rate, config.projection_radius
    ordered = data.subset(partition.order())
    offsets = partition.offsets()
    weights = aggregation_weights(partition.client_sizes, config.aggregation)
    client_sigma = client_noise_std(partition.client_sizes, config.aggregation, sigma, config.noise_mode)
    init_rng, rngs = _streams(config.seed, m)
    theta = _initial_theta(config, p, init_rng)
    if theta0 is not None:
        theta = np.array(theta0, dtype=float).reshape(p)

    def record(t, who, th):
        grad = loss.gradient(th, data)
        trace.append(TraceRow(t, who, loss.value(th, data), float(np.linalg.norm(grad))))

    if config.protocol == "sync_every_round":
        for t in range(config.rounds):
            if trace is not None and t % trace_every == 0:
                record(t, "server", theta)
            steps = loss.shard_gradients(np.broadcast_to(theta, (m, p)), ordered, offsets)
            if sigma > 0:
                steps = steps + _noise(rngs, client_sigma, p)
            theta = project(theta - eta * _weighted_sum(weights, steps), radius)
    else:
        thetas = np.repeat(theta[None, :], m, axis=0)
        for t in range(config.rounds):
            if trace is not None and t % trace_every == 0:
                for j in range(m):
                    record(t, f"client{j}", thetas[j])
            steps = loss.shard_gradients(thetas, ordered, offsets)
            if sigma > 0:
                steps = steps + _noise(rngs, client_sigma, p)
            thetas = thetas - eta * steps
            if radius is not None:
                thetas = np.stack([project(row, radius) for row in thetas])
        theta = _weighted_sum(weights, thetas)
    if trace is not None:
        record(config.rounds, "server", theta)
    return GlobalModel(theta, config.rounds)


def train_centralized_dp(data: LabeledDataset, loss: Loss, config: TrainingConfig,
                         privacy: MechanismParams | None) -> np.ndarray:
    """Single-party noisy full-batch gradient descent."""
    return train_distributed(data, Partition.single(data.n), loss, config, privacy).theta


def train_centralized_nonprivate(data: LabeledDataset, loss: Loss, rounds: int, eta: float,
                                 projection_radius: float | None = None, theta0=None,
                                 tol: float = 1e-6) -> np.ndarray:
    """Plain gradient descent; warns if the final gradient norm exceeds ``tol``."""
    theta = np.zeros(data.d) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    for _ in range(rounds):
        theta = project(theta - eta * loss.gradient(theta, data), projection_radius)
    grad_norm = float(np.linalg.norm(loss.gradient(theta, data)))
    if grad_norm > tol:
        warnings.warn(f"gradient descent stopped with gradient norm {grad_norm:.3g} > {tol:g} "
                      f"after {rounds} rounds", ConvergenceWarning, stacklevel=2)
    return theta


def write_trace_csv(rows: Sequence[TraceRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client_or_server", "loss_on_pooled_train", "grad_norm"])
        for r in rows:
            writer.writerow([r.round, r.client_or_server, repr(r.loss_on_pooled_train), repr(r.grad_norm)])
    return path
