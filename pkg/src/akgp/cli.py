"""Command-line entry point: ``akgp run | sweep | plot``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from akgp import harness

log = logging.getLogger("akgp")

METRICS = ("smse", "msll", "nlpd", "rmse", "mae")


def _config(args, **extra):
    overrides = dict(extra)
    for key in ("kernel", "strategy", "n_max", "out_dir"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    return harness.load_config(args.config, **overrides)


def cmd_run(args) -> int:
    config = _config(args)
    result = harness.run_experiment(config, export=True)
    for seed, err in result.failures.items():
        print(f"seed {seed} failed: {err}", file=sys.stderr)
    if result.results:
        summary = harness.summarize(result.curves)
        print(f"{config.env_label} {config.kernel} {config.strategy}: "
              f"msll {summary['msll_mean']:.4f} +/- {summary['msll_std']:.4f}, "
              f"smse {summary['smse_mean']:.4f} +/- {summary['smse_std']:.4f} "
              f"over {len(result.results)} seed(s) -> {config.out_dir}")
    return 1 if result.failures else 0


def cmd_sweep(args) -> int:
    config = _config(args)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite == "overfitting":
        traces = harness.run_overfitting_suite(config, num_iters=args.iters)
        rows = []
        for kernel, tr in traces.items():
            rows += [{"kernel": kernel, "iteration": i, "train_msll": a, "test_msll": b}
                     for i, (a, b) in enumerate(zip(tr["train_msll"], tr["test_msll"]))]
        harness.write_table(rows, out / "overfitting.csv")
        failed = [k for k, tr in traces.items() if len(tr["train_msll"]) < args.iters]
    else:
        run = harness.run_sensitivity_suite if args.suite == "sensitivity" else harness.run_ablation_suite
        rows = run(config)
        harness.write_table(rows, out / f"{args.suite}.csv")
        failed = [r for r in rows if r.get("status") != "ok"]
    for item in failed:
        print(f"failed: {item}", file=sys.stderr)
    print(f"{args.suite}: {len(rows)} rows -> {out}")
    return 1 if failed else 0


def _plot_curves(path: Path, plt) -> Path:
    curves = harness.read_curves(path)
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.2))
    for ax, metric in zip(axes, METRICS):
        # seeds may end at slightly different sample counts; align by epoch index
        length = min(len(r) for r in curves.values())
        n = np.array([[r.num_samples for r in recs[:length]] for recs in curves.values()])
        v = np.array([[getattr(r, metric) for r in recs[:length]] for recs in curves.values()])
        x, mean, std = n.mean(axis=0), v.mean(axis=0), v.std(axis=0)
        ax.plot(x, mean)
        ax.fill_between(x, mean - std, mean + std, alpha=0.3)
        ax.set_xlabel("number of samples")
        ax.set_title(metric.upper())
    fig.suptitle(path.stem)
    fig.tight_layout()
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def _plot_map(path: Path, plt) -> Path:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    panels = ["truth", "mean", "std", "abs_error"]
    attention = sorted((k for k in cols if k[0] in "wz" and k[1:].isdigit()),
                       key=lambda k: (k[0], int(k[1:])))
    if "x1" not in cols:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        x = cols["x0"]
        ax.plot(x, cols["truth"], "k--", label="truth")
        ax.plot(x, cols["mean"], label="mean")
        ax.fill_between(x, cols["mean"] - 2 * cols["std"], cols["mean"] + 2 * cols["std"], alpha=0.3)
        ax.legend()
    else:
        nx, ny = len(np.unique(cols["x0"])), len(np.unique(cols["x1"]))
        extent = (cols["x0"].min(), cols["x0"].max(), cols["x1"].min(), cols["x1"].max())
        names = panels + attention
        ncol = 4
        nrow = -(-len(names) // ncol)
        fig, axes = plt.subplots(nrow, ncol, figsize=(3.2 * ncol, 3 * nrow), squeeze=False)
        for ax in axes.ravel()[len(names):]:
            ax.axis("off")
        for ax, name in zip(axes.ravel(), names):
            img = ax.imshow(cols[name].reshape(ny, nx), origin="lower", extent=extent)
            fig.colorbar(img, ax=ax, shrink=0.8)
            ax.set_title(name)
    fig.tight_layout()
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        print(f"no such directory: {in_dir}", file=sys.stderr)
        return 2
    made = []
    for path in sorted(in_dir.glob("*.csv")):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        try:
            if tuple(header) == harness.CURVE_HEADER:
                if harness.read_curves(path):
                    made.append(_plot_curves(path, plt))
            elif path.name.startswith("map_"):
                made.append(_plot_map(path, plt))
        except Exception as err:
            print(f"could not plot {path.name}: {err}", file=sys.stderr)
            return 1
    for p in made:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="akgp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one kernel/strategy over the configured seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--kernel")
    run.add_argument("--strategy", choices=harness.STRATEGIES)
    run.add_argument("--seed", type=int)
    run.add_argument("--n-max", dest="n_max", type=int)
    run.add_argument("--out", dest="out_dir")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a sensitivity, ablation or overfitting suite")
    sweep.add_argument("--suite", required=True, choices=("sensitivity", "ablation", "overfitting"))
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", dest="out_dir")
    sweep.add_argument("--iters", type=int, default=1000, help="overfitting suite only")
    sweep.set_defaults(func=cmd_sweep)

    plot = sub.add_parser("plot", help="render curves and maps found in a results directory")
    plot.add_argument("--in", dest="in_dir", required=True)
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
