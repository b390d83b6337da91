"""Plots for the toy diffusion runs: generated samples and loss curves.

Only run directories named in the `labels` dictionary are plotted.
"""

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

# run directory -> display name; fill this in for every run to plot
labels = {
    "run_0": "Baseline",
}


def main():
    runs = {name: label for name, label in labels.items() if os.path.isdir(name)}
    if not runs:
        print("no labeled run directories found")
        return

    datasets = []
    for run in runs:
        with open(os.path.join(run, "final_info.json")) as fh:
            datasets = sorted(json.load(fh).keys())
        break

    fig, axes = plt.subplots(len(runs), len(datasets), squeeze=False,
                             figsize=(3 * len(datasets), 3 * len(runs)))
    for i, (run, label) in enumerate(runs.items()):
        for j, dataset in enumerate(datasets):
            ax = axes[i][j]
            samples = np.load(os.path.join(run, f"{dataset}_samples.npy"))
            real = np.load(os.path.join(run, f"{dataset}_real.npy"))
            ax.scatter(real[:, 0], real[:, 1], s=2, alpha=0.4, label="real")
            ax.scatter(samples[:, 0], samples[:, 1], s=2, alpha=0.4, label="generated")
            ax.set_title(f"{label}: {dataset}", fontsize=8)
            ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig("fig_samples.png", dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for run, label in runs.items():
        for dataset in datasets:
            losses = np.load(os.path.join(run, f"{dataset}_losses.npy"))
            ax.plot(losses, label=f"{label}: {dataset}", alpha=0.8)
    ax.set_xlabel("train step")
    ax.set_ylabel("denoising loss")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig("fig_loss.png", dpi=100)
    plt.close(fig)
    print(f"wrote fig_samples.png and fig_loss.png for {len(runs)} runs")


if __name__ == "__main__":
    main()
