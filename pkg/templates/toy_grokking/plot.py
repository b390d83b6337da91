"""Plots for the grokking runs: training and validation curves per task.

Only run directories named in the `labels` dictionary are plotted.
"""

import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

# run directory -> display name; fill this in for every run to plot
labels = {
    "run_0": "Baseline",
}


def tasks_in_run(run):
    names = set()
    for path in glob.glob(os.path.join(run, "*_train_losses.npy")):
        base = os.path.basename(path)
        names.add(base.split("_seed")[0])
    return sorted(names)


def seeds_for(run, task):
    seeds = []
    for path in glob.glob(os.path.join(run, f"{task}_seed*_train_losses.npy")):
        base = os.path.basename(path)
        seeds.append(int(base.split("_seed")[1].split("_")[0]))
    return sorted(seeds)


def main():
    runs = {name: label for name, label in labels.items() if os.path.isdir(name)}
    if not runs:
        print("no labeled run directories found")
        return
    all_tasks = sorted({t for run in runs for t in tasks_in_run(run)})
    if not all_tasks:
        print("no task artifacts found")
        return

    fig, axes = plt.subplots(2, len(all_tasks), squeeze=False,
                             figsize=(3.2 * len(all_tasks), 6))
    for j, task in enumerate(all_tasks):
        loss_ax, acc_ax = axes[0][j], axes[1][j]
        for run, label in runs.items():
            for seed in seeds_for(run, task):
                prefix = os.path.join(run, f"{task}_seed{seed}")
                train_losses = np.load(f"{prefix}_train_losses.npy")
                val_losses = np.load(f"{prefix}_val_losses.npy")
                val_accs = np.load(f"{prefix}_val_accs.npy")
                eval_steps = np.load(f"{prefix}_eval_steps.npy")
                loss_ax.plot(train_losses, alpha=0.5, label=f"{label} s{seed} train")
                loss_ax.plot(eval_steps, val_losses, alpha=0.8, label=f"{label} s{seed} val")
                acc_ax.plot(eval_steps, val_accs, alpha=0.8, label=f"{label} s{seed}")
        loss_ax.set_title(task, fontsize=9)
        loss_ax.set_yscale("log")
        loss_ax.set_ylabel("loss")
        loss_ax.legend(fontsize=5)
        acc_ax.set_ylabel("val accuracy")
        acc_ax.set_xlabel("step")
        acc_ax.set_ylim(0, 1.05)
        acc_ax.legend(fontsize=5)
    fig.tight_layout()
    fig.savefig("fig_curves.png", dpi=100)
    plt.close(fig)
    print(f"wrote fig_curves.png covering {len(all_tasks)} tasks")


if __name__ == "__main__":
    main()
