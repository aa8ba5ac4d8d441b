"""Figure rendering for run reports.

Every report path writes figures next to its CSV output: training traces
(cost/Lagrangian and residuals over iterations), SER curves per dimming
target, and side-by-side comparison curves.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

DPI = 150


def save_training_figure(report, path):
    """Cost/Lagrangian trace plus constraint residuals and checkpoints."""
    iters = [row["iteration"] for row in report.iterations]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    ax1.plot(iters, [row["cost"] for row in report.iterations],
             lw=0.8, alpha=0.6, label="batch cost")
    ax1.plot(iters, [row["lagrangian"] for row in report.iterations],
             lw=0.8, alpha=0.6, label="batch objective")
    if report.validations:
        vi = [v["iteration"] for v in report.validations]
        ax1.plot(vi, [v["cost"] for v in report.validations],
                 "o-", ms=3, label="validation cost")
        marked = [v for v in report.validations if v["checkpointed"]]
        if marked:
            ax1.plot([v["iteration"] for v in marked],
                     [v["cost"] for v in marked], "k*", ms=9,
                     label="checkpoint")
    ax1.set_ylabel("cost / objective")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    for j, d in enumerate(report.targets):
        ax2.plot(iters, [row["residuals"][j] for row in report.iterations],
                 lw=0.8, label=f"d = {d:g}")
    ax2.axhline(0.0, color="k", lw=0.5)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("constraint residual")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_ser_figure(report, path):
    """SER versus SNR, one curve per dimming target, log vertical axis."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for d in report.dimming_targets():
        rows = sorted((r for r in report.rows if r.dimming == d),
                      key=lambda r: r.snr_db)
        snr = [r.snr_db for r in rows]
        ser = [r.ser for r in rows]
        lo = [max(r.ci_low, 1e-12) for r in rows]
        hi = [r.ci_high for r in rows]
        ax.semilogy(snr, [max(s, 1e-12) for s in ser], "o-", ms=4,
                    label=f"{report.label}, d = {d:g}")
        ax.fill_between(snr, lo, hi, alpha=0.15)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("symbol error rate")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_compare_figure(report_a, report_b, path):
    """Overlayed SER curves for two systems on the shared grid."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for report, style in ((report_a, "o-"), (report_b, "s--")):
        for d in report.dimming_targets():
            rows = sorted((r for r in report.rows if r.dimming == d),
                          key=lambda r: r.snr_db)
            ax.semilogy([r.snr_db for r in rows],
                        [max(r.ser, 1e-12) for r in rows], style, ms=4,
                        label=f"{report.label}, d = {d:g}")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("symbol error rate")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
