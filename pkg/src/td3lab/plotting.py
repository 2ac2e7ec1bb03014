"""SVG figures for summaries, bias traces and target-rate sweeps.

Figures are a convenience view over the CSV files. Smoothing happens here,
at draw time, and never feeds back into stored data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the SVG bytes stable across runs
_SVG_META = {"Date": None, "Creator": None}


def smooth(y, window):
    """Uniform moving average with a shrinking window at the edges."""
    y = np.asarray(y, dtype=np.float64)
    if window <= 1 or len(y) == 0:
        return y.copy()
    kernel = np.ones(window)
    num = np.convolve(y, kernel, mode="same")
    den = np.convolve(np.ones_like(y), kernel, mode="same")
    return num / den


def _save(fig, path):
    matplotlib.rcParams["svg.hashsalt"] = "td3lab"
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_summaries(summaries: dict, path, title="", window=1):
    """Mean return per variant with a band of half a standard deviation."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, s in summaries.items():
        mean = smooth(s.mean, window)
        half = 0.5 * np.nan_to_num(smooth(s.std, window))
        ax.plot(s.steps, mean, label=f"{name} (n={s.n_seeds})", lw=1.4)
        ax.fill_between(s.steps, mean - half, mean + half, alpha=0.2, lw=0)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("average return")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    _save(fig, path)


def plot_bias(traces: dict, path, title=""):
    """Estimated vs Monte-Carlo true value per label; ``traces[label] = (steps, est, true)``."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for i, (name, (steps, est, true)) in enumerate(traces.items()):
        color = f"C{i}"
        ax.plot(steps, est, color=color, lw=1.4, label=f"{name} estimate")
        ax.plot(steps, true, color=color, lw=1.0, ls="--", label=f"{name} true")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("value")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(curves, path, title=""):
    """Seed-mean value estimate per target rate, from ``diagnostics.SweepCurves``."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for tau in curves.taus:
        v = curves.values[tau]
        mean = v.mean(axis=0)
        half = 0.5 * (v.std(axis=0, ddof=1) if len(v) > 1 else np.zeros_like(mean))
        ax.plot(curves.steps, mean, lw=1.4, label=f"tau={tau:g}")
        ax.fill_between(curves.steps, mean - half, mean + half, alpha=0.2, lw=0)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("average value estimate")
    ax.set_title(title or ("fixed policy" if curves.fixed_policy else "learned policy"))
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_tabular(traces: dict, path, title=""):
    """Bias trace per tabular variant; ``traces[name] = (checkpoints, bias)``."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, (x, y) in traces.items():
        ax.plot(x, y, lw=1.4, label=name)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("updates")
    ax.set_ylabel("mean max-value error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
