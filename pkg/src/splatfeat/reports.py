"""Report artifacts for CLI runs: JSON, delimited tables, and figures.

Figures render through the Agg backend straight to files; every writer is
deterministic for fixed inputs so run manifests can hash outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": "splatfeat"}


def save_json(path, payload: dict):
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def write_csv(path, header: list[str], rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def loss_curve_png(path, losses, surrogate=None, feature=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = np.arange(len(losses))
    ax.semilogy(steps, losses, label="total", lw=1.5)
    if surrogate is not None:
        ax.semilogy(steps, surrogate, label="surrogate", lw=1.0, alpha=0.8)
    if feature is not None:
        ax.semilogy(steps, feature, label="feature consistency", lw=1.0,
                    alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    _finish(fig, path)


def trajectory_png(path, gt_centers, pred_centers, scaled_pred=None):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    gt = np.asarray(gt_centers)
    pr = np.asarray(pred_centers)
    ax.plot(gt[:, 0], gt[:, 2], "o-", label="ground truth", ms=4)
    ax.plot(pr[:, 0], pr[:, 2], "s--", label="predicted", ms=4, alpha=0.7)
    if scaled_pred is not None:
        sp = np.asarray(scaled_pred)
        ax.plot(sp[:, 0], sp[:, 2], "^:", label="predicted (scale aligned)",
                ms=4, alpha=0.7)
    ax.set_xlabel("x")
    ax.set_ylabel("z")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)


def bench_png(path, labels, ms_per_frame):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    x = np.arange(len(labels))
    ax.bar(x, ms_per_frame, width=0.6, color=["#4477aa", "#66ccee"][:len(labels)])
    ax.set_xticks(x, labels)
    ax.set_ylabel("ms / frame")
    for xi, v in zip(x, ms_per_frame):
        ax.text(xi, v, f"{v:.1f}", ha="center", va="bottom", fontsize=9)
    _finish(fig, path)


def histogram_png(path, values, xlabel, bins=40):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.hist(np.asarray(values), bins=bins, color="#4477aa", alpha=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.grid(alpha=0.3)
    _finish(fig, path)


def mask_png(path, mask):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(np.asarray(mask, dtype=float), cmap="gray", vmin=0, vmax=1,
              interpolation="nearest")
    ax.set_title("co-visibility")
    ax.axis("off")
    _finish(fig, path)


def image_png(path, image):
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(arr, interpolation="nearest")
    ax.axis("off")
    _finish(fig, path)


def gradcheck_png(path, names, errors, threshold=1e-5):
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(names))
    ax.bar(x, errors, width=0.6, color="#4477aa")
    ax.axhline(threshold, color="crimson", ls="--", lw=1,
               label=f"tolerance {threshold:g}")
    ax.set_yscale("log")
    ax.set_xticks(x, names, rotation=20, ha="right")
    ax.set_ylabel("max relative error")
    ax.legend()
    _finish(fig, path)
