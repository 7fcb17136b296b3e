"""Figures written next to the sweep CSV output."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lab import MomentReport, RateFit  # noqa: E402

MARKERS = "osD^v<>"


def plot_moments(report: MomentReport, fits: Sequence[RateFit] = (), path: str | Path = "moments.png",
                 title: str | None = None) -> Path:
    """Log-log plot of the empirical error moments against ``n``, one series per ``p``.

    Bootstrap intervals are drawn as error bars. Fitted lines are overlaid for
    every ``n_with_bn_sqrt_n`` fit, together with an ``n^{-1/4}`` guide.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ps = sorted({r.p for r in report.rows})
    colors = {}
    for i, p in enumerate(ps):
        rows = sorted(report.select(p=p), key=lambda r: (r.n, r.b_n))
        n = np.array([r.n for r in rows], dtype=float)
        y = np.array([r.moment for r in rows])
        err = np.array([[r.moment - r.moment_se_lo for r in rows], [r.moment_se_hi - r.moment for r in rows]])
        bars = ax.errorbar(n, y, yerr=np.clip(err, 0, None), fmt=MARKERS[i % len(MARKERS)], ms=5, capsize=2,
                    label=f"p = {p:g}")
        colors[p] = bars[0].get_color()
    for fit in fits:
        if fit.axis != "n_with_bn_sqrt_n":
            continue
        x = np.array(fit.x)
        ax.plot(x, np.exp(fit.intercept) * x ** fit.slope, "--", lw=1, color=colors.get(fit.p),
                label=(f"p = {fit.p:g}: " if fit.p else "") + f"slope {fit.slope:.3f} [{fit.ci_lo:.3f}, {fit.ci_hi:.3f}]")
    if report.rows:
        n_all = np.array(sorted({r.n for r in report.rows}), dtype=float)
        ref = report.select(p=ps[0])
        anchor = min(ref, key=lambda r: r.n).moment if ref else 1.0
        ax.plot(n_all, anchor * (n_all / n_all[0]) ** -0.25, ":", color="0.4", label=r"$n^{-1/4}$")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(r"$E^{1/p}|\hat\sigma^2_{OBM} - \sigma^2_\infty|^p$")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    # fixed metadata keeps the PNG reproducible across runs
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
