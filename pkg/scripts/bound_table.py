"""Tabulate the summed excess-risk bound against the T-linear one as T grows.

    python scripts/bound_table.py --reg-lambda 0.1 --epsilon 0.1
"""

import argparse

from wddp.experiments import theoretical_bound_report
from wddp.losses import RegularizedLogisticLoss
from wddp.privacy import PrivacyBudget, calibrate_sigma


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reg-lambda", type=float, default=0.1)
    parser.add_argument("--radius", type=float, default=10.0)
    parser.add_argument("--epsilon", type=float, default=0.1)
    parser.add_argument("--delta", type=float, default=1e-3)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--p", type=int, default=10)
    parser.add_argument("--initial-gap", type=float, default=0.7)
    parser.add_argument("--rounds", type=int, nargs="+", default=[10, 50, 100, 200, 500, 1000, 5000])
    args = parser.parse_args()

    meta = RegularizedLogisticLoss(args.reg_lambda, args.radius).metadata
    print(f"{'T':>6}{'sigma':>12}{'summed':>14}{'simplified':>14}{'T-linear':>14}{'ratio':>10}")
    for T in args.rounds:
        # sigma grows like sqrt(T), so both noise terms grow with T
        sigma = calibrate_sigma(PrivacyBudget(args.epsilon, args.delta), meta.lipschitz_g, T, args.n).sigma
        rep = theoretical_bound_report(meta, sigma, args.p, T, args.initial_gap)
        print(f"{T:>6d}{sigma:>12.4g}{rep.summed_bound:>14.4g}{rep.simplified_bound:>14.4g}"
              f"{rep.linear_noise_bound:>14.4g}{rep.ratio:>10.3g}")


if __name__ == "__main__":
    main()
