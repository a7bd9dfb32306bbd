"""Matplotlib figure output for reports and inspection.

All entry points write PNG files next to the delimited report output; the
Agg backend keeps this headless-safe.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .flow import FlowModel, build_cond, flow_pdf
from .geom import stratified_hemisphere


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def save_pdf_heatmap(model: FlowModel, cond, path, grid_n: int = 96, title="flow density"):
    """Disk heatmap of the learned density (per projected solid angle)."""
    xs = np.linspace(-1, 1, grid_n)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = (pts ** 2).sum(1) <= 1.0
    vals = np.zeros(pts.shape[0])
    vals[inside] = flow_pdf(model, cond, pts[inside])
    img = np.where(inside, vals, np.nan).reshape(grid_n, grid_n)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(img, origin="lower", extent=[-1, 1, -1, 1], cmap="viridis")
    fig.colorbar(im, ax=ax, label="density")
    ax.set_title(title)
    ax.set_xlabel("disk u")
    ax.set_ylabel("disk v")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_albedo_curve(albedo_model, path, feature=None, title="directional albedo"):
    from .albedo import albedo_eval

    thetas = np.linspace(0.0, 88.0, 45)
    dirs = np.stack(
        [np.sin(np.radians(thetas)), np.zeros_like(thetas), np.cos(np.radians(thetas))], axis=1
    )
    vals = albedo_eval(albedo_model, dirs, np.tile(feature, (len(thetas), 1)) if feature is not None else None)
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    for c, color in enumerate("rgb"):
        ax.plot(thetas, vals[:, c], color=color, label=f"channel {c}")
    ax.set_xlabel("incidence angle (deg)")
    ax.set_ylabel("albedo")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sample_scatter(points, path, title="sampler output"):
    points = np.asarray(points)
    fig, ax = plt.subplots(figsize=(3.8, 3.8))
    ax.scatter(points[:, 0], points[:, 1], s=2, alpha=0.25, linewidths=0)
    circle = plt.Circle((0, 0), 1.0, fill=False, color="k", lw=1)
    ax.add_patch(circle)
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_training_curve(losses, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(4.6, 3.0))
    ax.plot(np.arange(1, len(losses) + 1), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_image_preview(image, path, gamma: float = 2.2, title="render"):
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, None)
    img = np.clip(img, 0, 1) ** (1.0 / gamma)
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.imshow(img)
    ax.set_axis_off()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def report_figures(material, out_dir, rng):
    """Standard figure set written alongside a validation report."""
    from .flow import flow_sample

    _ensure_dir(out_dir)
    wi = np.array([0.3, 0.0, np.sqrt(1 - 0.09)])
    feats = material.texture.lookup(np.array([[0.5, 0.5]])) if material.sv else None
    paths = []
    for c in range(3):
        cond = build_cond(wi, np.array([c]), feats)
        p = os.path.join(out_dir, f"pdf_channel{c}.png")
        save_pdf_heatmap(material.flow, cond, p, title=f"density, channel {c}")
        paths.append(p)
    cond = build_cond(wi, np.array([0]), feats)
    pts, _ = flow_sample(material.flow, cond, rng, n=4000)
    p = os.path.join(out_dir, "samples_channel0.png")
    save_sample_scatter(pts, p, title="sampler, channel 0")
    paths.append(p)
    p = os.path.join(out_dir, "albedo.png")
    save_albedo_curve(material.albedo, p, feature=feats[0] if feats is not None else None)
    paths.append(p)
    if material.flow.train_log:
        p = os.path.join(out_dir, "flow_loss.png")
        save_training_curve(material.flow.train_log, p)
        paths.append(p)
    return paths
