"""Figure rendering for reports: loss curves, overlays, benchmark bars."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(history, path) -> None:
    if not history:
        return
    iters = [row["iteration"] for row in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, style in (("total", "-"), ("ce", "--"), ("dice", ":"), ("bti", "-.")):
        values = [row[key] for row in history]
        if key == "bti" and all(v == 0 for v in values):
            continue
        ax.plot(iters, values, style, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("training loss components")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _to_slice(arr: np.ndarray) -> np.ndarray:
    # 3D volumes are shown at their middle depth slice.
    if arr.ndim == 3:
        return arr[arr.shape[0] // 2]
    return arr


def save_overlay(image: np.ndarray, gt: np.ndarray, pred: np.ndarray, path) -> None:
    img = _to_slice(image)
    panels = [("image", img, None), ("ground truth", img, _to_slice(gt)),
              ("prediction", img, _to_slice(pred))]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.8))
    num_classes = int(max(gt.max(), pred.max())) + 1
    for ax, (title, base, overlay) in zip(axes, panels):
        ax.imshow(base, cmap="gray", interpolation="nearest")
        if overlay is not None:
            masked = np.ma.masked_equal(overlay, 0)
            ax.imshow(masked, cmap="tab10", interpolation="nearest",
                      alpha=0.5, vmin=0, vmax=max(num_classes - 1, 1))
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    labels = ["all pairs", "binary tree"]
    medians = [report.ti_median, report.bti_median]
    convs = [report.ti_convs, report.bti_convs]
    bars = ax.bar(labels, medians, color=["#c44e52", "#4c72b0"])
    for bar, conv in zip(bars, convs):
        ax.annotate(f"{conv} convs", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom")
    ax.set_ylabel("median wall time [s]")
    ax.set_title(f"critical map construction, c={report.num_classes}, "
                 f"extents={'x'.join(str(e) for e in report.extents)}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
