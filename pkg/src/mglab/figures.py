"""Figure rendering for report artifacts.

Every plot lands next to its CSV twin; nothing here opens a window.  The
CSVs remain the canonical data, figures are a convenience view of the same
numbers.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_tv_curves(cells, epsilon: float, path, title: str = "distance to the tail proxy"):
    """One TV-vs-time line per (n_agents, seed) cell; log y scale."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for cell in cells:
        label = f"N={cell.n_agents} seed={cell.seed}"
        ax.plot(cell.tv_times, cell.tv_values, lw=1.0, alpha=0.8, label=label)
    ax.axhline(epsilon, color="k", ls="--", lw=1.0, label=f"target {epsilon:g}")
    ax.set_yscale("log")
    ax.set_xlabel("time (score clock)")
    ax.set_ylabel("max marginal TV")
    ax.set_title(title)
    if len(cells) <= 12:
        ax.legend(fontsize=7, ncol=2)
    return _finish(fig, path)


def render_single_tv_curve(report, path):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(report.tv_times, report.tv_values, marker="o", ms=3, lw=1.0)
    ax.axhline(report.epsilon_target, color="k", ls="--", lw=1.0, label=f"target {report.epsilon_target:g}")
    ax.axhline(report.noise_floor, color="gray", ls=":", lw=1.0, label=f"noise floor {report.noise_floor:.3g}")
    if report.t_hat is not None:
        ax.axvline(report.t_hat, color="tab:green", lw=1.0, label=f"t_hat={report.t_hat:.3g}")
    ax.set_yscale("log")
    ax.set_xlabel("time (score clock)")
    ax.set_ylabel("max marginal TV")
    ax.set_title(f"waiting-time detection ({report.verdict})")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def render_scaling(report, path):
    """Waiting time against system size with the fitted line."""
    closed = [c for c in report.cells if c.verdict == "converged"]
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    ax.scatter(
        [c.n_agents for c in closed], [c.t_hat for c in closed], s=22, alpha=0.8, label="converged cells"
    )
    fit = report.fit_vs_n
    if np.isfinite(fit.get("slope", float("nan"))):
        xs = np.linspace(min(report.n_grid), max(report.n_grid), 64)
        ax.plot(
            xs,
            fit["slope"] * xs + fit["intercept"],
            "k--",
            lw=1.0,
            label=f"fit: slope={fit['slope']:.3g}, R2={fit['r2']:.3f}",
        )
    ax.set_xlabel("number of agents")
    ax.set_ylabel("detected waiting time (score clock)")
    ax.set_title(f"waiting-time scaling, {report.n_open} open cell(s) excluded")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def render_alpha_sweep(report, path):
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    alphas = list(report.alphas)
    medians = [report.per_alpha_median[a] for a in alphas]
    for cell in report.cells:
        if cell.verdict == "converged":
            ax.scatter(cell.alpha, cell.t_hat, color="tab:blue", s=14, alpha=0.5)
    ax.plot(alphas, medians, "ko-", lw=1.2, label="median")
    ax.invert_xaxis()
    ax.set_xlabel("alpha (decreasing toward critical)")
    ax.set_ylabel("detected waiting time (score clock)")
    ax.set_title(f"alpha sweep at N={report.n_agents}")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def render_dissipativity(report, path):
    """Radial drift profile with the pass threshold."""
    radii = [p.radius for p in report.profiles]
    means = [p.mean_radial_over_n for p in report.profiles]
    frac = [p.pass_fraction for p in report.profiles]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    ax1.plot(radii, means, "o-", lw=1.2)
    ax1.set_xscale("log")
    ax1.set_xlabel("probe radius (rescaled state)")
    ax1.set_ylabel("radial drift / N")
    ax1.set_title(f"{report.scenario} probes, N={report.n_agents}")
    ax2.plot(radii, frac, "s-", lw=1.2, color="tab:orange")
    ax2.set_xscale("log")
    ax2.set_ylim(-0.02, 1.02)
    ax2.set_xlabel("probe radius (rescaled state)")
    ax2.set_ylabel("fraction passing the inequality")
    if report.m0_empirical is not None:
        ax2.axvline(report.m0_empirical, color="k", ls="--", lw=1.0, label=f"M0={report.m0_empirical:.3g}")
        ax2.legend(fontsize=8)
    return _finish(fig, path)


def render_lln_decay(report, path):
    """Log-log decay of the population overlap statistics."""
    ns = list(report.n_grid)
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    ax.loglog(ns, [report.stat_bias[n] for n in ns], "o-", label=f"bias overlap (slope {report.slope_bias:.2f})")
    ax.loglog(
        ns,
        [report.stat_offdiag[n] for n in ns],
        "s-",
        label=f"off-diagonal row sum (slope {report.slope_offdiag:.2f})",
    )
    ax.loglog(
        ns,
        [report.stat_diag[n] for n in ns],
        "^-",
        label=f"diagonal deviation (slope {report.slope_diag:.2f})",
    )
    ax.set_xlabel("number of agents")
    ax.set_ylabel("population statistic")
    ax.set_title(f"overlap concentration, alpha={report.alpha:g}")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def render_drift_match(rows, path):
    """Measured one-round mean increments against the drift prediction.

    rows: records with fields predicted, measured, sem (per coordinate,
    already flattened across test points).
    """
    predicted = np.array([r["predicted"] for r in rows])
    measured = np.array([r["measured"] for r in rows])
    sem = np.array([r["sem"] for r in rows])
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    ax.errorbar(predicted, measured, yerr=sem, fmt="o", ms=3, lw=0.8, alpha=0.7)
    lo = float(min(predicted.min(), measured.min()))
    hi = float(max(predicted.max(), measured.max()))
    pad = 0.05 * (hi - lo + 1e-12)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=1.0)
    ax.set_xlabel("predicted mean increment")
    ax.set_ylabel("measured mean increment")
    ax.set_title("discrete game vs drift field")
    return _finish(fig, path)
