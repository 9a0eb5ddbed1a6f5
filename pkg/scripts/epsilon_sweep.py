"""Accuracy against the privacy budget: every method at each epsilon.

    python scripts/epsilon_sweep.py --out runs/epsilon --seeds 50
"""

from wddp.experiments import METHODS, SweepSpec, run_sweep

from _common import base_parser, report, synthetic


def main():
    parser = base_parser(__doc__.splitlines()[0])
    parser.add_argument("--epsilons", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.25])
    parser.add_argument("--u", type=float, default=1.0, help="non-average level of the partition")
    parser.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    args = parser.parse_args()

    spec = SweepSpec(variable="epsilon", values=tuple(sorted(args.epsilons)), methods=tuple(args.methods),
                     seeds=tuple(range(args.seeds)), clients=args.clients, u=args.u, rounds=args.rounds,
                     master_seed=args.master_seed, data=synthetic(args))
    report(run_sweep(spec, jobs=args.jobs), spec, args.out)


if __name__ == "__main__":
    main()
