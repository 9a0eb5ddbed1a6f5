"""Accuracy against client-size imbalance u = n_max / n_min, weighted vs uniform averaging.

    python scripts/imbalance_sweep.py --out runs/imbalance --seeds 50
"""

from wddp.experiments import SweepSpec, run_sweep

from _common import base_parser, report, synthetic


def main():
    parser = base_parser(__doc__.splitlines()[0])
    parser.add_argument("--us", type=float, nargs="+", default=[1, 3, 5, 7, 9])
    parser.add_argument("--epsilon", type=float, default=0.05)
    parser.add_argument("--protocol", default="sync_every_round",
                        choices=("sync_every_round", "local_then_aggregate"))
    args = parser.parse_args()

    spec = SweepSpec(variable="u", values=tuple(sorted(args.us)), methods=("weighted", "uniform"),
                     seeds=tuple(range(args.seeds)), clients=args.clients, epsilon=args.epsilon,
                     rounds=args.rounds, protocol=args.protocol, master_seed=args.master_seed,
                     data=synthetic(args))
    report(run_sweep(spec, jobs=args.jobs), spec, args.out)


if __name__ == "__main__":
    main()
