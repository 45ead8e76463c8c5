#!/usr/bin/env python3
"""Every kernel under every sampling strategy on one config, then plots.

    python scripts/run_benchmark.py configs/piecewise.yaml --seeds 0 1 2 --n-max 400
"""

import argparse
import logging

from akgp import cli, harness
from akgp.kernels import KERNEL_NAMES


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--kernels", nargs="+", default=["rbf", "ak", "gibbs", "dkl"],
                        choices=KERNEL_NAMES)
    parser.add_argument("--strategies", nargs="+", default=list(harness.STRATEGIES),
                        choices=harness.STRATEGIES)
    parser.add_argument("--seeds", nargs="+", type=int)
    parser.add_argument("--n-max", type=int)
    parser.add_argument("--out")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = harness.load_config(args.config, n_max=args.n_max, out_dir=args.out, seeds=args.seeds)
    failed = 0
    for strategy in args.strategies:
        for kernel in args.kernels:
            cfg = base.replace(kernel=kernel, strategy=strategy)
            result = harness.run_experiment(cfg, export=True)
            failed += len(result.failures)
            s = harness.summarize(result.curves)
            logging.info("%-8s %-6s msll %.3f +/- %.3f  smse %.3f +/- %.3f", kernel, strategy,
                         s["msll_mean"], s["msll_std"], s["smse_mean"], s["smse_std"])
    cli.main(["plot", "--in", base.out_dir])
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
