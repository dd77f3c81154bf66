"""SVG panels for the toy experiment.

Rendering is deterministic (fixed hash salt, no date metadata) so re-emitting
from the same record reproduces the same bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..analytic import GaussianMixture  # noqa: E402
from .records import atomic_write, read_samples  # noqa: E402

__all__ = ["emit_plots", "panel_limits", "render_panels"]

ANCHOR_COLOR = "tab:orange"
TARGET_COLOR = "tab:purple"


def _svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    with plt.rc_context({"svg.hashsalt": "aapb", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def panel_limits(means, pad: float = 4.5):
    """Square-ish axis box containing every mean with ``pad`` margin."""
    m = np.asarray(means, dtype=np.float64)
    lo = m.min(axis=0) - pad
    hi = m.max(axis=0) + pad
    return (lo[0], hi[0]), (lo[1], hi[1])


def _scatter(points_groups, means, title, xlim, ylim):
    fig, ax = plt.subplots(figsize=(4, 4))
    for pts, color, label in points_groups:
        ax.scatter(pts[:, 0], pts[:, 1], s=3, alpha=0.4, color=color, label=label, rasterized=False)
    for mu, color in means:
        ax.plot(mu[0], mu[1], marker="x", color="black", markersize=10, mew=2)
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7, markerscale=3)
    fig.tight_layout()
    return fig


def _w2_curve(summary_rows, w):
    fixed = [r for r in summary_rows if r["gamma_mode"] == "fixed" and r["w"] == w]
    adaptive = [r for r in summary_rows if r["gamma_mode"] == "adaptive" and r["w"] == w]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    g = np.array([r["gamma"] for r in fixed])
    m = np.array([r["w2_mean"] for r in fixed])
    sd = np.array([r["w2_sd"] for r in fixed])
    ax.plot(g, m, color="tab:blue", marker="o", label="fixed gamma")
    ax.fill_between(g, m - sd, m + sd, color="tab:blue", alpha=0.2, linewidth=0)
    if adaptive:
        ax.axhline(adaptive[0]["w2_mean"], color="red", linestyle="--", label="adaptive gamma*")
    ax.set_xlabel("gamma")
    ax.set_ylabel("W2 to target")
    ax.set_title(f"W2 vs gamma (w={w:g})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def render_panels(record) -> dict:
    """Figures keyed by output file name: training data, fixed gamma, adaptive, W2 curve."""
    from .experiment import Cell, cell_key, summarize

    if not record.metrics:
        raise ValueError("record has no metrics; nothing to plot")
    cfg = record.config
    mixture = GaussianMixture.from_dict({"components": cfg["dataset"]["components"]})
    labels = cfg["dataset"]["labels"]
    means = [g.mu for g in mixture.gaussians]
    xlim, ylim = panel_limits(means + [np.array(cfg["evaluation"]["target_mean"])])

    rng = np.random.default_rng(12345)
    data, comp = mixture.sample(2000, rng, return_labels=True)
    colors = [ANCHOR_COLOR if lab == "anchor" else TARGET_COLOR for lab in labels]
    groups = [(data[comp == k], colors[k], labels[k]) for k in range(len(labels))]
    mean_marks = [(mu, c) for mu, c in zip(means, colors)]
    rendered = {"panel_a_training.svg": _scatter(groups, mean_marks, "training data", xlim, ylim)}

    summary = summarize(record.metrics)
    seed0 = cfg["seeds"][0]
    gammas = cfg["guidance"]["gammas"]
    show_gamma = min(gammas, key=lambda g: abs(g - 0.8))
    for w in cfg["guidance"]["w"]:
        fixed_key = cell_key(Cell(w, seed0, show_gamma))
        if fixed_key in record.samples:
            pts = read_samples(record.sample_path(fixed_key))
            rendered[f"panel_b_fixed_w{w:g}.svg"] = _scatter(
                [(pts, "tab:green", f"fixed gamma={show_gamma:g}")], mean_marks,
                f"fixed gamma={show_gamma:g}, w={w:g}", xlim, ylim,
            )
        ad_key = cell_key(Cell(w, seed0, None))
        if ad_key in record.samples:
            pts = read_samples(record.sample_path(ad_key))
            rendered[f"panel_c_adaptive_w{w:g}.svg"] = _scatter(
                [(pts, "tab:red", "adaptive gamma*")], mean_marks, f"adaptive, w={w:g}", xlim, ylim
            )
        rendered[f"panel_d_w2_w{w:g}.svg"] = _w2_curve(summary, w)
    return rendered


def emit_plots(record, out_dir=None) -> list:
    """Write every panel as SVG under ``<out_dir>/plots``.

    Everything is rendered in memory first; nothing is written unless every
    panel renders.
    """
    rendered = render_panels(record)
    out = Path(out_dir or record.out_dir) / "plots"
    blobs = {name: _svg_bytes(fig) for name, fig in rendered.items()}
    return [atomic_write(out / name, blob) for name, blob in blobs.items()]
