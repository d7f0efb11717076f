"""Machine-readable run outputs (JSON lines, CSV) and the figures rendered
alongside them: training curves, confusion heatmaps, and the per-distortion
grade ladder.
"""

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grades import GRADE_LABELS


def write_jsonl(path, rows):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def save_training_curves(metrics, path):
    """Loss and accuracy traces over epochs -> PNG."""
    epochs = [m.epoch for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [m.train_loss for m in metrics], color="tab:red")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [m.train_accuracy for m in metrics], label="train")
    ax2.plot(epochs, [m.test_accuracy for m in metrics], label="test")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("patch accuracy")
    ax2.set_ylim(0, 1)
    ax2.grid(alpha=0.3)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(confusion, path, title):
    """Annotated heatmap of a 5x5 confusion matrix -> PNG."""
    confusion = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(len(GRADE_LABELS)), GRADE_LABELS)
    ax.set_yticks(range(len(GRADE_LABELS)), GRADE_LABELS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    vmax = confusion.max() or 1
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(confusion[i, j]), ha="center", va="center",
                    color="white" if confusion[i, j] > vmax / 2 else "black",
                    fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ladder_figure(ladder, path):
    """Expected predicted grade per severity level, one line per kind -> PNG.

    ladder maps kind -> list of (level, mean expected grade) pairs.
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind in sorted(ladder):
        pairs = sorted(ladder[kind])
        ax.plot([lvl for lvl, _ in pairs], [v for _, v in pairs],
                marker="o", label=kind)
    ax.set_xlabel("severity level")
    ax.set_ylabel("expected predicted grade")
    ax.set_xticks(range(5))
    ax.set_ylim(-0.2, 4.2)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
