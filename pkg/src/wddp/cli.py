"""Command-line entry point: ``wddp {calibrate,train,sweep,verify}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import run_certificates
from .config import ConfigError, RunConfig, load_config
from .data import DataError, Partition, partition_random, partition_two_group
from .experiments import (CSV_COLUMNS, CsvStream, SweepResult, SweepSpec, accuracy, emit_report,
                          load_dataset, optimal_gap, run_sweep, select_eta, theoretical_bound_report)
from .federation import (TrainingConfig, aggregate_noise_std, effective_sample_size,
                         train_centralized_nonprivate, train_distributed, write_trace_csv)
from .losses import LabeledDataset, get_loss
from .privacy import CalibrationError, MechanismParams, PrivacyBudget, calibrate_sigma

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class RuntimeFailure(RuntimeError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _out_dir(args, config: RunConfig) -> Path:
    out = args.out or config.out
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _rounds(config: RunConfig) -> int:
    if config.training is not None:
        return config.training.rounds
    if config.sweep is not None:
        return config.sweep.rounds
    return int(config.raw.get("privacy", {}).get("rounds", 1000))


def _loss_for(config: RunConfig):
    block = config.training or config.sweep
    if block is None:
        return get_loss("logistic")
    radius = block.projection_radius if block.projection_radius is not None else 10.0
    return get_loss(block.loss, block.reg_lambda, radius)


def cmd_calibrate(args, config: RunConfig) -> int:
    if config.privacy is None:
        raise ConfigError("calibrate needs a privacy block with epsilon and delta")
    n = config.privacy_samples or load_dataset(config.data)[0].n
    G = config.lipschitz_g or _loss_for(config).metadata.lipschitz_g
    try:
        cal = calibrate_sigma(config.privacy, G, _rounds(config), n)
    except CalibrationError as exc:
        raise ConfigError(f"infeasible privacy budget: {exc}") from None
    sys.stdout.write(_dump(cal.to_record()))
    return EXIT_OK


def _train_partition(settings, n: int, seed: int) -> Partition:
    if settings.clients == 1:
        return Partition.single(n)
    if settings.u is None:
        return partition_random(n, settings.clients, settings.min_client_size, seed)
    return partition_two_group(n, settings.clients, settings.u, settings.group_a_count, seed,
                               settings.min_client_size)


def cmd_train(args, config: RunConfig) -> int:
    settings = config.training
    if settings is None:
        raise ConfigError("train needs a training block")
    out = _out_dir(args, config)
    train, test = load_dataset(config.data)
    loss = _loss_for(config)
    seed = config.seed
    try:
        partition = _train_partition(settings, train.n, seed)
    except DataError as exc:
        raise ConfigError(str(exc)) from None

    eta = settings.eta
    if eta == "cv":
        budget = config.privacy or PrivacyBudget(1.0, 0.5)
        spec = SweepSpec(variable="epsilon", values=(budget.epsilon,), methods=(settings.aggregation,),
                         seeds=(seed,), eta_grid=settings.eta_grid, clients=settings.clients,
                         delta=budget.delta, u=settings.u, rounds=settings.rounds,
                         group_a_count=settings.group_a_count, min_client_size=settings.min_client_size,
                         protocol=settings.protocol, noise_mode=settings.noise_mode, loss=settings.loss,
                         reg_lambda=settings.reg_lambda, projection_radius=settings.projection_radius,
                         master_seed=seed, data=config.data)
        eta = select_eta(settings.aggregation, train, spec)

    calibration = None
    if settings.sigma is not None:
        sigma = float(settings.sigma)
        privacy = None if sigma == 0 else MechanismParams(loss.metadata.lipschitz_g, settings.rounds, train.n, sigma)
    else:
        n_eff = effective_sample_size(partition.client_sizes, settings.aggregation)
        G = config.lipschitz_g or loss.metadata.lipschitz_g
        try:
            calibration = calibrate_sigma(config.privacy, G, settings.rounds, n_eff)
        except CalibrationError as exc:
            raise ConfigError(f"infeasible privacy budget: {exc}") from None
        privacy, sigma = calibration.params, calibration.sigma

    tc = TrainingConfig(rounds=settings.rounds, learning_rate=float(eta), aggregation=settings.aggregation,
                        protocol=settings.protocol, projection_radius=settings.projection_radius,
                        seed=seed, noise_mode=settings.noise_mode)
    trace = [] if settings.trace else None
    try:
        model = train_distributed(train, partition, loss, tc, privacy, trace=trace)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            theta_star = train_centralized_nonprivate(train, loss, 10 * settings.rounds,
                                                      1.0 / loss.metadata.smoothness_l,
                                                      settings.projection_radius)
    except (FloatingPointError, ValueError) as exc:
        raise RuntimeFailure(f"training failed: {exc}") from exc
    if not np.all(np.isfinite(model.theta)):
        raise RuntimeFailure("training diverged: non-finite parameters")

    result = SweepResult(settings.aggregation, settings.protocol, "", float("nan"), seed, float(eta), sigma,
                         accuracy(model.theta, test), optimal_gap(model.theta, theta_star, train, loss))
    (out / "model.json").write_text(json.dumps({"theta": [float(v) for v in model.theta],
                                                "rounds": model.round}) + "\n")
    with (out / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        row = result.csv_row()
        row[CSV_COLUMNS.index("sweep_value")] = ""
        writer.writerow(row)
    provenance = {
        "config": config.raw,
        "seed": seed,
        "eta": float(eta),
        "sigma": sigma,
        "aggregate_noise_std": aggregate_noise_std(partition.client_sizes, settings.aggregation, sigma,
                                                   settings.noise_mode),
        "calibration": calibration.to_record() if calibration else None,
        "partition": json.loads(partition.to_json()),
    }
    if loss.metadata.curvature is not None:
        provenance["bounds"] = theoretical_bound_report(
            loss.metadata, provenance["aggregate_noise_std"], train.d, settings.rounds,
            loss.value(np.zeros(train.d), train) - loss.value(theta_star, train)).to_dict()
    (out / "provenance.json").write_text(_dump(provenance))
    if trace is not None:
        write_trace_csv(trace, out / "trace.csv")
    sys.stdout.write(_dump({"accuracy": result.accuracy, "optimal_gap": result.optimal_gap,
                            "sigma": sigma, "eta": float(eta), "out": str(out)}))
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    spec = config.sweep
    if spec is None:
        raise ConfigError("sweep needs a sweep block")
    out = _out_dir(args, config)
    (out / "sweep_config.json").write_text(_dump({"config": config.raw, "spec": spec.to_dict()}))
    jobs = args.jobs or os.cpu_count() or 1
    with CsvStream(out / "results.csv", include_runtime=args.record_runtime) as stream:
        results = run_sweep(spec, jobs=jobs, on_result=stream.write)
    formats = args.format or ["csv"]
    for fmt in formats:
        if fmt == "csv":
            continue
        if fmt == "svg" and not any(r.status == "ok" for r in results):
            continue
        emit_report(results, fmt, out, spec, include_runtime=args.record_runtime)
    failed = sum(r.status != "ok" for r in results)
    sys.stdout.write(f"{len(results)} rows, {failed} failed -> {out / 'results.csv'}\n")
    if failed == len(results):
        raise RuntimeFailure("every sweep cell failed")
    return EXIT_OK


def cmd_verify(args, config: RunConfig) -> int:
    settings = config.verify
    if settings is None:
        raise ConfigError("verify needs a verify block naming the loss family")
    loss = get_loss(settings.loss, settings.reg_lambda, settings.radius)
    if settings.loss == "pl_scalar":
        data = LabeledDataset(np.zeros((1, 1)), np.zeros(1))
    else:
        data = load_dataset(config.data)[0]
    results = run_certificates(loss, data, settings.samples, settings.seed, settings.radius)
    width = max(len(r.name) for r in results)
    for r in results:
        sys.stdout.write(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}\n")
    failures = [r for r in results if not r.passed]
    if failures:
        first = failures[0]
        sys.stderr.write(_dump({"error": f"{first.name} certificate violated", "witness": first.witness}))
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "train": cmd_train, "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wddp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--out", help="output directory (overrides 'out')")
        p.add_argument("--seed", type=int, help="master seed (overrides 'seed')")
        p.add_argument("--jobs", type=int, help="worker processes for sweeps (default: CPU count)")
        p.add_argument("--format", choices=("csv", "json", "svg"), action="append",
                       help="report format; repeatable")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                       help="override a config field, e.g. privacy.epsilon=0.1")
        p.add_argument("--record-runtime", action="store_true",
                       help="fill the runtime_ms column (makes CSV output run-dependent)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        config = load_config(args.config, overrides)
        return COMMANDS[args.command](args, config)
    except (ConfigError, DataError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except RuntimeFailure as exc:
        sys.stderr.write(_dump({"error": str(exc)}))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
