"""Run configuration: a YAML file, optionally overridden by environment and flags.

Overrides address config paths with dots, e.g. ``privacy.epsilon=0.1``. From the
environment they are spelled ``WDDP__PRIVACY__EPSILON=0.1``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .data import DEFAULT_MIN_CLIENT_SIZE, DatasetSpec, SyntheticSpec
from .experiments import ETA_GRID, SweepSpec
from .federation import AGGREGATIONS, NOISE_MODES, PROTOCOLS
from .privacy import PrivacyBudget

ENV_PREFIX = "WDDP__"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    rounds: int = 1000
    eta: float | str = 0.1
    clients: int = 16
    u: float | None = 1.0
    aggregation: str = "weighted"
    protocol: str = "sync_every_round"
    noise_mode: str = "aggregate"
    loss: str = "logistic"
    reg_lambda: float = 0.1
    projection_radius: float | None = None
    sigma: float | None = None
    group_a_count: int | None = None
    min_client_size: int = DEFAULT_MIN_CLIENT_SIZE
    eta_grid: tuple[float, ...] = ETA_GRID
    trace: bool = False


@dataclass(frozen=True)
class VerifySettings:
    loss: str = "logistic"
    reg_lambda: float = 0.1
    radius: float = 10.0
    samples: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: SyntheticSpec | DatasetSpec
    raw: dict
    seed: int = 0
    out: str | None = None
    privacy: PrivacyBudget | None = None
    lipschitz_g: float | None = None
    privacy_samples: int | None = None
    training: TrainSettings | None = None
    sweep: SweepSpec | None = None
    verify: VerifySettings | None = None


def _parse_scalar(text: str) -> Any:
    return yaml.safe_load(text) if text != "" else ""


def apply_override(tree: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    path, value = assignment.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {assignment!r} has an empty path")
    node = tree
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {assignment!r}: {key!r} is not a section")
        node = child
    node[keys[-1]] = _parse_scalar(value)


def env_overrides(environ: Mapping[str, str] | None = None) -> list[str]:
    environ = os.environ if environ is None else environ
    out = []
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX):
            path = ".".join(part.lower() for part in name[len(ENV_PREFIX):].split("__"))
            out.append(f"{path}={environ[name]}")
    return out


def _build(cls, block: Mapping | None, section: str, **extra):
    block = dict(block or {})
    known = {f.name for f in fields(cls)}
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys {sorted(unknown)}; expected some of {sorted(known)}")
    for key in ("categorical_columns", "eta_grid", "values", "methods", "seeds"):
        if key in block and isinstance(block[key], list):
            block[key] = tuple(block[key])
    try:
        return cls(**block, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _data_spec(block: Mapping | None):
    block = dict(block or {"kind": "synthetic"})
    kind = block.pop("kind", "synthetic")
    if kind == "synthetic":
        return _build(SyntheticSpec, block, "data")
    if kind == "csv":
        spec = _build(DatasetSpec, block, "data")
        if not Path(spec.path).is_file():
            raise ConfigError(f"[data] dataset file {spec.path!r} does not exist")
        return spec
    raise ConfigError(f"[data] kind must be 'synthetic' or 'csv', got {kind!r}")


def _check_choice(value, allowed, what):
    if value not in allowed:
        raise ConfigError(f"{what} must be one of {allowed}, got {value!r}")


def build_config(tree: Mapping) -> RunConfig:
    tree = copy.deepcopy(dict(tree))
    allowed = {"seed", "out", "data", "privacy", "training", "sweep", "verify"}
    unknown = set(tree) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if "training" in tree and "sweep" in tree:
        raise ConfigError("a config holds either a training block or a sweep block, not both")
    seed = tree.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    data = _data_spec(tree.get("data"))

    privacy = lipschitz_g = samples = None
    if "privacy" in tree:
        block = dict(tree["privacy"] or {})
        lipschitz_g = block.pop("lipschitz_g", None)
        samples = block.pop("samples", None)
        block.pop("rounds", None)  # read by calibrate from the raw tree
        privacy = _build(PrivacyBudget, block, "privacy")

    training = None
    if "training" in tree:
        training = _build(TrainSettings, tree["training"], "training")
        _check_choice(training.aggregation, AGGREGATIONS, "[training] aggregation")
        _check_choice(training.protocol, PROTOCOLS, "[training] protocol")
        _check_choice(training.noise_mode, NOISE_MODES, "[training] noise_mode")
        if isinstance(training.eta, str) and training.eta != "cv":
            raise ConfigError("[training] eta must be a number or 'cv'")
        if training.sigma is None and privacy is None:
            raise ConfigError("[training] needs a privacy block or an explicit sigma")

    sweep = None
    if "sweep" in tree:
        block = dict(tree["sweep"] or {})
        if privacy is not None:
            block.setdefault("epsilon", privacy.epsilon)
            block.setdefault("delta", privacy.delta)
        block.setdefault("master_seed", seed)
        sweep = _build(SweepSpec, block, "sweep", data=data)

    verify = _build(VerifySettings, tree["verify"], "verify") if "verify" in tree else None
    return RunConfig(data=data, raw=tree, seed=seed, out=tree.get("out"), privacy=privacy,
                     lipschitz_g=lipschitz_g, privacy_samples=samples, training=training,
                     sweep=sweep, verify=verify)


def load_config(path: str | Path, overrides: Sequence[str] = (),
                environ: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        tree = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for assignment in [*env_overrides(environ), *overrides]:
        apply_override(tree, assignment)
    return build_config(tree)
