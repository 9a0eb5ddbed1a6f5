"""Dataset ingestion and client partitioning."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .losses import LabeledDataset

DEFAULT_MIN_CLIENT_SIZE = 10


class DataError(ValueError):
    """Malformed input data or an infeasible partition request."""


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    label_column: str
    positive_label: str | None = None
    categorical_columns: tuple[str, ...] = ()
    train_fraction: float = 0.8
    shuffle_seed: int = 0
    delimiter: str = ","
    scale_numeric: bool = True
    add_intercept: bool = True
    normalize: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))


def normalize_rows(features: np.ndarray) -> np.ndarray:
    """Divide every row by the largest row norm so all rows land in the unit ball."""
    features = np.asarray(features, dtype=float)
    if features.size == 0:
        return features.copy()
    top = np.linalg.norm(features, axis=1).max()
    return features / top if top > 0 else features.copy()


def _read_rows(spec: DatasetSpec) -> tuple[list[str], list[list[str]]]:
    path = Path(spec.path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=spec.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            rows.append([cell.strip() for cell in row])
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, rows


def load_csv(spec: DatasetSpec) -> LabeledDataset:
    header, rows = _read_rows(spec)
    path = spec.path
    if spec.label_column not in header:
        raise DataError(f"{path}: label column {spec.label_column!r} not in header {header}")
    missing = [c for c in spec.categorical_columns if c not in header]
    if missing:
        raise DataError(f"{path}: categorical columns {missing} not in header")

    label_idx = header.index(spec.label_column)
    raw_labels = [r[label_idx] for r in rows]
    for lineno, value in enumerate(raw_labels, start=2):
        if value == "":
            raise DataError(f"{path}:{lineno}: missing label")
    seen: list[str] = []
    for lineno, value in enumerate(raw_labels, start=2):
        if value not in seen:
            seen.append(value)
        if len(seen) > 2:
            raise DataError(f"{path}:{lineno}: label column {spec.label_column!r} has a third "
                            f"distinct value {value!r} (already saw {seen[0]!r}, {seen[1]!r})")
    distinct = sorted(seen)
    positive = spec.positive_label if spec.positive_label is not None else distinct[-1]
    if positive not in distinct and len(distinct) == 2:
        raise DataError(f"{path}: positive label {positive!r} not among {distinct}")
    labels = np.array([1.0 if v == positive else 0.0 for v in raw_labels])

    columns, names = [], []
    for j, name in enumerate(header):
        if j == label_idx:
            continue
        cells = [r[j] for r in rows]
        if name in spec.categorical_columns:
            levels = sorted(set(cells))
            if len(levels) < 2:
                warnings.warn(f"{path}: column {name!r} is constant; dropped", stacklevel=2)
                continue
            for level in levels:
                columns.append(np.array([1.0 if c == level else 0.0 for c in cells]))
                names.append(f"{name}={level}")
            continue
        values = np.empty(len(cells))
        for i, cell in enumerate(cells):
            try:
                values[i] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{i + 2}: column {name!r}: cannot parse {cell!r} as a number; "
                                f"list it under categorical_columns if it is categorical") from None
        if not np.isfinite(values).all():
            raise DataError(f"{path}: column {name!r} contains non-finite values")
        lo, hi = values.min(), values.max()
        if lo == hi:
            warnings.warn(f"{path}: column {name!r} is constant; dropped", stacklevel=2)
            continue
        columns.append((values - lo) / (hi - lo) if spec.scale_numeric else values)
        names.append(name)

    if spec.add_intercept:
        columns.append(np.ones(len(rows)))
        names.append("intercept")
    if not columns:
        raise DataError(f"{path}: no usable feature columns")
    features = np.column_stack(columns)
    if spec.normalize:
        features = normalize_rows(features)
    return LabeledDataset(features, labels, tuple(names))


def train_test_split(data: LabeledDataset, fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n_train = int(round(fraction * data.n))
    if n_train == 0 or n_train == data.n:
        raise DataError(f"split of {data.n} rows at fraction {fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(data.n)
    return data.subset(np.sort(order[:n_train])), data.subset(np.sort(order[n_train:]))


@dataclass
class Partition:
    client_sizes: tuple[int, ...]
    assignments: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        self.client_sizes = tuple(int(s) for s in self.client_sizes)
        self.assignments = [np.asarray(a, dtype=int) for a in self.assignments]
        if len(self.client_sizes) != len(self.assignments):
            raise ValueError("one assignment list per client required")
        for size, idx in zip(self.client_sizes, self.assignments):
            if size != len(idx) or size < 1:
                raise ValueError("client sizes must be positive and match their assignments")

    @property
    def m(self) -> int:
        return len(self.client_sizes)

    @property
    def total(self) -> int:
        return sum(self.client_sizes)

    @property
    def non_average_u(self) -> float:
        return max(self.client_sizes) / min(self.client_sizes)

    @property
    def weights(self) -> np.ndarray:
        sizes = np.asarray(self.client_sizes, dtype=float)
        return sizes / sizes.sum()

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.client_sizes)])

    def order(self) -> np.ndarray:
        """Row indices of the pooled data, grouped client by client."""
        return np.concatenate(self.assignments)

    def check(self, n: int) -> None:
        """Raise unless the assignments are disjoint and cover ``range(n)``."""
        flat = self.order()
        if len(flat) != n or not np.array_equal(np.sort(flat), np.arange(n)):
            raise ValueError("assignments must be disjoint and cover every training index")

    def to_json(self) -> str:
        return json.dumps({"client_sizes": list(self.client_sizes),
                           "assignments": [a.tolist() for a in self.assignments]})

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        obj = json.loads(text)
        return cls(tuple(obj["client_sizes"]), [np.asarray(a, dtype=int) for a in obj["assignments"]])

    @classmethod
    def single(cls, n: int) -> "Partition":
        return cls((n,), [np.arange(n)])


def _assign(sizes: Sequence[int], n: int, seed) -> Partition:
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    return Partition(tuple(sizes), [np.sort(a) for a in np.split(perm, cuts)])


def partition_two_group(train_size: int, m: int, u: float, group_a_count: int | None = None,
                        seed=0, min_size: int = DEFAULT_MIN_CLIENT_SIZE) -> Partition:
    """Two groups of equal-sized clients with size ratio ~u.

    Clients ``0..group_a_count-1`` form the large group. Sizes are
    ``floor(u s)`` and ``floor(s)`` with ``s = n / (a u + m - a)``; the remainder
    (fewer than m samples) goes one each to the lowest-index clients.
    """
    if group_a_count is None:
        group_a_count = m // 2
    a = group_a_count
    if not 1 <= a < m:
        raise ValueError(f"group_a_count must satisfy 1 <= a < m, got a={a}, m={m}")
    if not u >= 1:
        raise ValueError(f"u must be >= 1, got {u}")
    if train_size < m:
        raise DataError(f"cannot split {train_size} samples over {m} clients")
    s = train_size / (a * u + (m - a))
    small, large = math.floor(s), math.floor(u * s)
    sizes = [large] * a + [small] * (m - a)
    remainder = train_size - sum(sizes)
    for j in range(remainder):
        sizes[j] += 1
    if min(sizes) < min_size:
        raise DataError(f"smallest client would hold {min(sizes)} samples, below the floor of {min_size} "
                        f"(n={train_size}, m={m}, u={u})")
    return _assign(sizes, train_size, seed)


def partition_random(train_size: int, m: int, min_size: int = DEFAULT_MIN_CLIENT_SIZE, seed=0) -> Partition:
    """Client sizes uniform over compositions of ``train_size`` with every part >= ``min_size``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    spare = train_size - m * min_size
    if spare < 0:
        raise DataError(f"{train_size} samples cannot give {m} clients at least {min_size} each")
    rng = np.random.default_rng(seed)
    # stars and bars: m - 1 distinct bar positions among spare + m - 1 slots
    bars = np.sort(rng.choice(spare + m - 1, size=m - 1, replace=False)) if m > 1 else np.array([], int)
    edges = np.concatenate([[-1], bars, [spare + m - 1]])
    sizes = (np.diff(edges) - 1 + min_size).astype(int)
    return _assign(sizes.tolist(), train_size, rng)


def partition_equal(train_size: int, m: int, seed=0) -> Partition:
    base = [train_size // m] * m
    for j in range(train_size - sum(base)):
        base[j] += 1
    return _assign(base, train_size, seed)


@dataclass(frozen=True)
class SyntheticSpec:
    """Two Gaussian clouds centred at +-(separation/2) along a random unit direction."""

    n: int = 2000
    dim: int = 10
    separation: float = 2.0
    train_fraction: float = 0.8
    seed: int = 0


def make_two_gaussians(spec: SyntheticSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    direction = rng.standard_normal(spec.dim)
    direction /= np.linalg.norm(direction)
    labels = (rng.random(spec.n) < 0.5).astype(float)
    centres = np.outer(2.0 * labels - 1.0, direction) * (spec.separation / 2.0)
    features = centres + rng.standard_normal((spec.n, spec.dim))
    return LabeledDataset(normalize_rows(features), labels)
