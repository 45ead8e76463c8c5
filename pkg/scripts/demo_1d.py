#!/usr/bin/env python3
"""Fit RBF and AK to noisy five-partition samples and plot both posteriors.

The AK panel also shows the learned lengthscale weights and the membership
(``z``) vectors along the input axis.
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from akgp import harness
from akgp.environments import FIVE_PARTITION_BOUNDS, five_partition
from akgp.harness import ExperimentConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=150)
    parser.add_argument("--iters", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="five_partition.png")
    args = parser.parse_args()

    fig, axes = plt.subplots(4, 1, figsize=(7, 10), sharex=True)
    xs = np.linspace(0, 1, 500)
    for ax, name in zip(axes[:2], ("rbf", "ak")):
        cfg = ExperimentConfig(env="five_partition", obs_noise_std=0.1, kernel=name)
        model, norm, *_, rec = harness.fit_static(cfg, args.seed, args.samples, args.iters)
        pred = model.predict(norm.normalize(xs[:, None]))
        mean = norm.destandardize(pred.mean)
        std = pred.std * norm.y_std
        ax.plot(xs, five_partition(xs), "k--", lw=1)
        ax.plot(xs, mean)
        ax.fill_between(xs, mean - 2 * std, mean + 2 * std, alpha=0.3)
        X = norm.denormalize(model.X_train)[:, 0]
        ax.scatter(X, norm.destandardize(model.y_train), s=4, c="k")
        ax.set_title(f"{name.upper()}  MSLL {rec.msll:.3f}  SMSE {rec.smse:.3f}")
        if name == "ak":
            w, z = model.kernel.attention(norm.normalize(xs[:, None]))
            axes[2].stackplot(xs, (w ** 2).T)
            axes[2].set_title("squared lengthscale weights (short at bottom)")
            axes[3].plot(xs, z)
            axes[3].set_title("membership vectors")
    for ax in axes:
        for b in FIVE_PARTITION_BOUNDS:
            ax.axvline(b, color="gray", lw=0.5)
    fig.tight_layout()
    fig.savefig(args.out, dpi=110)
    print(args.out)


if __name__ == "__main__":
    main()
