"""Figures for reports, envelopes and laminate fields (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _positive(x):
    x = np.abs(np.asarray(x, dtype=float))
    return np.where(x > 0, x, np.nan)


def gap_figure(report, path) -> Path:
    """``|gap|`` (or energy for the counterexample) against eps on log axes."""
    eps = report.column("eps")
    y = report.column("gap")
    label = "|F_eps(u_eps) - F**(u)|" if report.kind == "gamma" else "F_eps(u_0 + v)"
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(eps, _positive(y), "o-", label=label)
    if report.kind == "gamma":
        ax.loglog(eps, _positive(report.column("delta")), "s--", label="error budget")
    ref = np.nanmax(_positive(y)) if np.any(np.isfinite(_positive(y))) else 1.0
    if np.isfinite(ref):
        ax.loglog(eps, ref * eps / eps[0], ":", color="gray", label="~ eps")
        ax.loglog(eps, ref * np.sqrt(eps / eps[0]), "-.", color="gray", label="~ eps^1/2")
    flagged = [i for i, r in enumerate(report.rows) if r.get("flags")]
    if flagged:
        ax.loglog(eps[flagged], _positive(y[flagged]), "rx", ms=10, label="flagged")
    ax.set_xlabel("eps")
    ax.set_ylabel(label)
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def residual_figure(report, path) -> Path:
    eps = report.column("eps")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, mk in (("div_residual", "o-"), ("weak_residual", "s-"), ("projection_error", "^-")):
        ax.loglog(eps, _positive(report.column(name)), mk, label=name)
    tau = report.column("tau")
    if np.any(np.isfinite(tau)):
        ax.loglog(eps, tau, "k:", label="tau")
    ax.set_xlabel("eps")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def report_figures(report, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    return {"gap_png": gap_figure(report, out / "gap_vs_eps.png"),
            "residuals_png": residual_figure(report, out / "residuals.png")}


def envelope_figure(env, path, f_values: bool = True) -> Path:
    """Heatmap of ``f**`` (and ``f - f**``) for a planar envelope."""
    if len(env.center) != 2:
        raise ValueError("envelope heatmaps need two dimensions")
    fss = env.grid_values()
    ax0, ax1 = env.center[0] + env.axis(), env.center[1] + env.axis()
    ext = [ax0[0], ax0[-1], ax1[0], ax1[-1]]
    panels = [("f**", fss)]
    if f_values:
        panels.append(("f - f**", env.f_values.reshape(env.shape) - fss))
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4))
    axes = np.atleast_1d(axes)
    for ax, (title, data) in zip(axes, panels):
        im = ax.imshow(np.log1p(np.maximum(data, 0)).T, origin="lower", extent=ext, cmap="viridis")
        ax.set_title(f"log(1 + {title})")
        ax.set_xlabel("mu_1")
        ax.set_ylabel("mu_2")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def field_figure(u, path, max_pixels: int = 1024) -> Path:
    """Component images of a planar field (subsampled to at most ``max_pixels`` per axis)."""
    if u.dims != 2:
        raise ValueError("field images need two dimensions")
    g = u.geom
    steps = [max(1, n // max_pixels) for n in g.resolution]
    vals = u.values[::steps[0], ::steps[1]]
    ext = [g.lower[0], g.upper[0], g.lower[1], g.upper[1]]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for c, ax in enumerate(axes):
        im = ax.imshow(vals[..., c].T, origin="lower", extent=ext, aspect="auto", cmap="coolwarm",
                       interpolation="nearest")
        ax.set_title(f"u^{c + 1}")
        ax.set_xlabel("x_1")
        ax.set_ylabel("x_2")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
