"""Sweeps over the privacy budget or the client-size imbalance, plus reporting."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import (DEFAULT_MIN_CLIENT_SIZE, DataError, DatasetSpec, Partition, SyntheticSpec,
                   load_csv, make_two_gaussians, partition_random, partition_two_group,
                   train_test_split)
from .federation import (TrainingConfig, effective_sample_size, train_centralized_nonprivate,
                         train_distributed)
from .losses import LabeledDataset, Loss, LossMetadata, get_loss
from .privacy import CalibrationError, PrivacyBudget, calibrate_sigma

METHODS = ("weighted", "uniform", "centralized_dp", "centralized_nonprivate")
ETA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
CSV_COLUMNS = ("method", "protocol", "sweep_var", "sweep_value", "seed", "eta", "sigma",
               "accuracy", "optimal_gap", "runtime_ms", "status")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple[float, ...]
    methods: tuple[str, ...] = ("weighted", "uniform")
    seeds: tuple[int, ...] = tuple(range(20))
    eta_grid: tuple[float, ...] = ETA_GRID
    clients: int = 16
    epsilon: float = 0.05
    delta: float = 1e-3
    u: float | None = 1.0
    rounds: int = 1000
    group_a_count: int | None = None
    min_client_size: int = DEFAULT_MIN_CLIENT_SIZE
    protocol: str = "sync_every_round"
    noise_mode: str = "aggregate"
    loss: str = "logistic"
    reg_lambda: float = 0.1
    projection_radius: float | None = None
    cv_folds: int = 3
    master_seed: int = 0
    data: SyntheticSpec | DatasetSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "eta_grid", tuple(float(e) for e in self.eta_grid))
        if self.variable not in ("epsilon", "u"):
            raise ValueError(f"sweep variable must be 'epsilon' or 'u', got {self.variable!r}")
        if not self.values or list(self.values) != sorted(self.values):
            raise ValueError("sweep values must be non-empty and sorted")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be non-empty and distinct")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if not self.eta_grid or min(self.eta_grid) <= 0:
            raise ValueError("eta_grid must hold positive learning rates")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["data"] = {"kind": "synthetic" if isinstance(self.data, SyntheticSpec) else "csv", **out["data"]}
        return out

    def point(self, value: float) -> tuple[float, float | None]:
        """(epsilon, u) in effect at a sweep value."""
        if self.variable == "epsilon":
            return value, self.u
        return self.epsilon, value


@dataclass
class SweepResult:
    method: str
    protocol: str
    sweep_var: str
    sweep_value: float
    seed: int
    eta: float
    sigma: float | None
    accuracy: float | None
    optimal_gap: float | None
    runtime_ms: float | None = None
    status: str = "ok"

    def csv_row(self, include_runtime: bool = False) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(v) if isinstance(v, float) else str(v)
        row = [fmt(getattr(self, c)) for c in CSV_COLUMNS]
        if not include_runtime:
            row[CSV_COLUMNS.index("runtime_ms")] = ""
        return row


def accuracy(theta, test: LabeledDataset) -> float:
    """Fraction classified correctly with ``h(x . theta) >= 0.5`` predicted positive."""
    if test.n == 0:
        raise ValueError("accuracy needs a non-empty test set")
    predicted = (test.features @ np.asarray(theta, dtype=float)) >= 0.0
    return float(np.mean(predicted == (test.labels == 1.0)))


def optimal_gap(theta, theta_star, train: LabeledDataset, loss: Loss) -> float:
    gap = loss.value(theta, train) - loss.value(theta_star, train)
    if gap < -1e-6:
        warnings.warn(f"negative optimal gap {gap:.3g}: the reference optimum has not converged",
                      stacklevel=2)
    return gap


@dataclass(frozen=True)
class BoundReport:
    curvature: float
    curvature_kind: str
    smoothness: float
    dimension: int
    noise_std: float
    rounds: int
    initial_gap: float
    summed_bound: float
    simplified_bound: float
    linear_noise_bound: float

    @property
    def ratio(self) -> float:
        """How much looser the T-linear noise bound is than the summed one."""
        return self.linear_noise_bound / self.summed_bound if self.summed_bound > 0 else math.inf

    def to_dict(self) -> dict:
        return {**asdict(self), "ratio": self.ratio}


def theoretical_bound_report(loss_meta: LossMetadata, noise_std: float, p: int, rounds_t: int,
                             initial_gap: float) -> BoundReport:
    """Excess-risk bounds after T noisy steps with step size 1/L.

    With contraction ``q = 1 - k/L`` (k the strong-convexity or PL constant):

    - ``summed_bound``: ``q^T D0 + p s^2 / (2k) * (1 - q^T)``, the geometric sum kept exact;
    - ``simplified_bound``: ``q^T D0 + p s^2 / (2k)``;
    - ``linear_noise_bound``: ``q^T D0 + T p s^2 / (2L)``, the noise term summed without contraction.
    """
    if loss_meta.strong_convexity is not None and loss_meta.strong_convexity > 0:
        k, kind = loss_meta.strong_convexity, "strong_convexity"
    elif loss_meta.pl_constant is not None:
        k, kind = loss_meta.pl_constant, "pl"
    else:
        raise ValueError("bound needs a strong-convexity or PL certificate; loss metadata has neither")
    L = loss_meta.smoothness_l
    if rounds_t < 0:
        raise ValueError("rounds_t must be >= 0")
    q = max(0.0, 1.0 - k / L)
    qT = q ** rounds_t
    noise = p * noise_std ** 2
    return BoundReport(
        curvature=k, curvature_kind=kind, smoothness=L, dimension=p, noise_std=noise_std,
        rounds=rounds_t, initial_gap=initial_gap,
        summed_bound=qT * initial_gap + noise / (2.0 * k) * (1.0 - qT),
        simplified_bound=qT * initial_gap + noise / (2.0 * k),
        linear_noise_bound=qT * initial_gap + rounds_t * noise / (2.0 * L),
    )


# ---------------------------------------------------------------------------
# sweep execution


def load_dataset(spec: SyntheticSpec | DatasetSpec) -> tuple[LabeledDataset, LabeledDataset]:
    if isinstance(spec, SyntheticSpec):
        return train_test_split(make_two_gaussians(spec), spec.train_fraction, spec.seed)
    data = load_csv(spec)
    return train_test_split(data, spec.train_fraction, spec.shuffle_seed)


def run_seed(master_seed: int, seed: int) -> int:
    """Per-replicate seed shared by every method and sweep value (common random numbers)."""
    return int(np.random.SeedSequence([master_seed, seed]).generate_state(1)[0])


def make_partition(n: int, spec: SweepSpec, u: float | None, seed: int) -> Partition:
    if u is None:
        return partition_random(n, spec.clients, spec.min_client_size, seed)
    return partition_two_group(n, spec.clients, u, spec.group_a_count, seed, spec.min_client_size)


def _loss(spec: SweepSpec) -> Loss:
    radius = spec.projection_radius if spec.projection_radius is not None else 10.0
    return get_loss(spec.loss, spec.reg_lambda, radius)


def train_method(method: str, train: LabeledDataset, spec: SweepSpec, epsilon: float, u: float | None,
                 eta: float, seed: int) -> tuple[np.ndarray, float | None]:
    """Train one replicate; returns ``(theta, sigma)``. Raises on infeasible cells."""
    loss = _loss(spec)
    config = TrainingConfig(
        rounds=spec.rounds, learning_rate=eta,
        aggregation="uniform" if method == "uniform" else "weighted",
        protocol=spec.protocol, projection_radius=spec.projection_radius,
        seed=seed, noise_mode=spec.noise_mode,
    )
    if method in ("centralized_dp", "centralized_nonprivate"):
        partition = Partition.single(train.n)
    else:
        partition = make_partition(train.n, spec, u, seed)
    if method == "centralized_nonprivate":
        return train_distributed(train, partition, loss, config, None).theta, 0.0
    n_eff = effective_sample_size(partition.client_sizes, config.aggregation)
    cal = calibrate_sigma(PrivacyBudget(epsilon, spec.delta), loss.metadata.lipschitz_g, spec.rounds, n_eff)
    return train_distributed(train, partition, loss, config, cal.params).theta, cal.sigma


def select_eta(method: str, train: LabeledDataset, spec: SweepSpec) -> float:
    """k-fold cross-validated learning rate at the middle sweep value (first grid entry wins ties)."""
    if len(spec.eta_grid) == 1:
        return spec.eta_grid[0]
    epsilon, u = spec.point(spec.values[len(spec.values) // 2])
    seed = run_seed(spec.master_seed, spec.seeds[0])
    folds = np.array_split(np.random.default_rng(seed).permutation(train.n), spec.cv_folds)
    best_eta, best_score = spec.eta_grid[0], -math.inf
    for eta in spec.eta_grid:
        scores = []
        for k in range(spec.cv_folds):
            fit_idx = np.sort(np.concatenate([f for i, f in enumerate(folds) if i != k]))
            try:
                theta, _ = train_method(method, train.subset(fit_idx), spec, epsilon, u, eta, seed)
            except (CalibrationError, DataError):
                scores.append(0.0)
                continue
            scores.append(accuracy(theta, train.subset(np.sort(folds[k]))))
        score = float(np.mean(scores))
        if score > best_score:
            best_eta, best_score = eta, score
    return best_eta


def reference_optimum(train: LabeledDataset, spec: SweepSpec) -> np.ndarray:
    loss = _loss(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train_centralized_nonprivate(train, loss, 10 * spec.rounds, 1.0 / loss.metadata.smoothness_l,
                                            spec.projection_radius)


@dataclass(frozen=True)
class _Cell:
    method: str
    value: float
    eta: float


def _run_cell(spec: SweepSpec, train: LabeledDataset, test: LabeledDataset, theta_star: np.ndarray,
              cell: _Cell) -> list[SweepResult]:
    loss = _loss(spec)
    epsilon, u = spec.point(cell.value)
    protocol = "centralized" if cell.method.startswith("centralized") else spec.protocol
    rows = []
    for seed in spec.seeds:
        start = time.perf_counter()
        try:
            theta, sigma = train_method(cell.method, train, spec, epsilon, u, cell.eta,
                                        run_seed(spec.master_seed, seed))
        except (CalibrationError, DataError) as exc:
            rows.append(SweepResult(cell.method, protocol, spec.variable, cell.value, seed, cell.eta,
                                    None, None, None, None, f"failed: {exc}"))
            continue
        rows.append(SweepResult(
            cell.method, protocol, spec.variable, cell.value, seed, cell.eta, sigma,
            accuracy(theta, test), optimal_gap(theta, theta_star, train, loss),
            (time.perf_counter() - start) * 1e3,
        ))
    return rows


def run_sweep(spec: SweepSpec, data: tuple[LabeledDataset, LabeledDataset] | None = None, jobs: int = 1,
              on_result: Callable[[SweepResult], None] | None = None) -> list[SweepResult]:
    """Run every (method, value, seed) replicate in a fixed order.

    Results do not depend on ``jobs``: every replicate draws from a generator
    derived from ``(master_seed, seed)`` alone. ``on_result`` sees rows in order
    as soon as their cell finishes.
    """
    train, test = load_dataset(spec.data) if data is None else data
    theta_star = reference_optimum(train, spec)
    etas = {method: select_eta(method, train, spec) for method in spec.methods}
    cells = [_Cell(method, value, etas[method]) for method in spec.methods for value in spec.values]

    results: list[SweepResult] = []

    def collect(rows):
        for row in rows:
            results.append(row)
            if on_result is not None:
                on_result(row)

    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, spec, train, test, theta_star, c) for c in cells]
            for fut in futures:
                collect(fut.result())
    else:
        for cell in cells:
            collect(_run_cell(spec, train, test, theta_star, cell))
    return results


def summarize(results: Iterable[SweepResult], metric: str = "accuracy") -> dict[tuple[str, float], tuple[float, float, int]]:
    """(method, value) -> (mean, standard error, count) over successful seeds."""
    groups: dict[tuple[str, float], list[float]] = {}
    for r in results:
        v = getattr(r, metric)
        if r.status == "ok" and v is not None:
            groups.setdefault((r.method, r.sweep_value), []).append(v)
    out = {}
    for key, vals in groups.items():
        arr = np.asarray(vals, dtype=float)
        se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        out[key] = (float(arr.mean()), se, int(arr.size))
    return out


# ---------------------------------------------------------------------------
# reporting


class CsvStream:
    """Row-at-a-time CSV writer; each row is flushed so an interrupted run leaves a valid file."""

    def __init__(self, path: str | Path, include_runtime: bool = False):
        self.path = Path(path)
        self.include_runtime = include_runtime
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, result: SweepResult) -> None:
        self._writer.writerow(result.csv_row(self.include_runtime))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(results: Sequence[SweepResult], path: str | Path, include_runtime: bool = False) -> Path:
    with CsvStream(path, include_runtime) as stream:
        for r in results:
            stream.write(r)
    return Path(path)


def write_json(results: Sequence[SweepResult], path: str | Path, spec: SweepSpec | dict | None = None) -> Path:
    spec_dict = spec.to_dict() if isinstance(spec, SweepSpec) else spec
    payload = {"spec": spec_dict, "results": [asdict(r) for r in results]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return Path(path)


def read_json(path: str | Path) -> tuple[dict | None, list[SweepResult]]:
    payload = json.loads(Path(path).read_text())
    names = {f.name for f in fields(SweepResult)}
    return payload.get("spec"), [SweepResult(**{k: v for k, v in r.items() if k in names})
                                 for r in payload["results"]]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(results: Sequence[SweepResult], metric: str = "accuracy", width: int = 640,
               height: int = 420) -> str:
    """Line chart of mean +- standard error per method; one polyline per method."""
    stats = summarize(results, metric)
    if not stats:
        raise ValueError(f"no successful results to plot for {metric}")
    methods = sorted({m for m, _ in stats}, key=lambda m: METHODS.index(m) if m in METHODS else 99)
    xs = sorted({v for _, v in stats})
    lows = [mu - se for mu, se, _ in stats.values()]
    highs = [mu + se for mu, se, _ in stats.values()]
    y0, y1 = min(lows), max(highs)
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = xs[0], xs[-1] if xs[-1] > xs[0] else xs[0] + 1.0
    left, right, top, bottom = 70, width - 150, 30, height - 50

    def sx(x):
        return left + (x - x0) / (x1 - x0) * (right - left)

    def sy(y):
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    var = results[0].sweep_var
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{height - 12}" text-anchor="middle">{var}</text>',
        f'<text x="16" y="{(top + bottom) / 2:.1f}" transform="rotate(-90 16 {(top + bottom) / 2:.1f})" '
        f'text-anchor="middle">{metric}</text>',
    ]
    for x in xs:
        parts.append(f'<text x="{sx(x):.1f}" y="{bottom + 16}" text-anchor="middle">{x:g}</text>')
    for y in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{left - 6}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.3g}</text>')
    for i, method in enumerate(methods):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = [(x, *stats[(method, x)][:2]) for x in xs if (method, x) in stats]
        coords = " ".join(f"{sx(x):.2f},{sy(mu):.2f}" for x, mu, _ in pts)
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{coords}"/>')
        for x, mu, se in pts:
            parts.append(f'<line x1="{sx(x):.2f}" y1="{sy(mu - se):.2f}" x2="{sx(x):.2f}" '
                         f'y2="{sy(mu + se):.2f}" stroke="{colour}"/>')
        ly = top + 18 * i
        parts.append(f'<line x1="{right + 12}" y1="{ly}" x2="{right + 32}" y2="{ly}" stroke="{colour}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{right + 38}" y="{ly + 4}">{method}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(results: Sequence[SweepResult], fmt: str, out_dir: str | Path,
                spec: SweepSpec | dict | None = None, include_runtime: bool = False) -> list[Path]:
    """Write ``results.csv``, ``results.json`` or ``accuracy.svg`` + ``optimal_gap.svg``."""
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        return [write_csv(results, out / "results.csv", include_runtime)]
    if fmt == "json":
        return [write_json(results, out / "results.json", spec)]
    if fmt == "svg":
        paths = []
        for metric in ("accuracy", "optimal_gap"):
            path = out / f"{metric}.svg"
            path.write_text(render_svg(results, metric))
            paths.append(path)
        return paths
    raise ValueError(f"unknown report format {fmt!r}; choose csv, json or svg")
