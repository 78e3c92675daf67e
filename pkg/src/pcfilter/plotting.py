"""Report figures written next to the CSV outputs. Uses the non-interactive Agg backend."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata keeps PNG bytes identical across runs.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def loss_curve(trace, path, window: int = 50) -> Path:
    """Raw and smoothed loss terms against the step index."""
    steps = [t.step for t in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, color in (("hybrid", "k"), ("short", "tab:blue"), ("long", "tab:orange")):
        values = [getattr(t, name) for t in trace]
        if not any(values):
            continue
        ax.plot(steps, values, color=color, alpha=0.25, linewidth=0.6)
        if len(values) >= window:
            smooth = [sum(values[i - window:i]) / window for i in range(window, len(values) + 1)]
            ax.plot(steps[window - 1:], smooth, color=color, label=f"L_{name}")
        else:
            ax.plot(steps, values, color=color, label=f"L_{name}")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    return _save(fig, path)


def metric_bars(rows: Sequence[dict], path) -> Path:
    """CD and P2M (x1e4) per evaluated row."""
    labels = [f"{r['shape']}\n{r['noise_kind']} {r['sigma']:g}" for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(max(6, 1.6 * len(rows)), 4))
    for ax, key, title in ((axes[0], "cd_x1e4", "CD x1e4"), (axes[1], "p2m_x1e4", "P2M x1e4")):
        values = [r[key] if r[key] is not None else 0.0 for r in rows]
        ax.bar(range(len(rows)), values, color="tab:blue")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_title(title)
    return _save(fig, path)


def ablation_figures(rows: Sequence[dict], out_prefix) -> list[Path]:
    """CD against N (at each variant's best lambda) and CD against lambda (at N=4, or the closest N)."""
    out_prefix = Path(out_prefix)
    by_variant = defaultdict(list)
    for r in rows:
        by_variant[r["variant"]].append(r)

    def mean_cd(items):
        return sum(i["cd"] for i in items) / len(items)

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, items in by_variant.items():
        grouped = defaultdict(list)
        for r in items:
            grouped[(r["lambda"], r["n_steps"])].append(r)
        lambdas = sorted({lam for lam, _ in grouped})
        best = min(lambdas, key=lambda lam: min(mean_cd(v) for (l2, _), v in grouped.items() if l2 == lam))
        ns = sorted(n for lam, n in grouped if lam == best)
        ax.plot(ns, [mean_cd(grouped[(best, n)]) * 1e4 for n in ns], marker="o", label=f"{variant} (lambda={best:g})")
    ax.set_xlabel("N (filtering steps)")
    ax.set_ylabel("CD x1e4")
    ax.legend(fontsize=8)
    paths = [_save(fig, out_prefix.with_name(out_prefix.name + "_n_sweep.png"))]

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, items in by_variant.items():
        ns = sorted({r["n_steps"] for r in items})
        n_ref = min(ns, key=lambda n: abs(n - 4))
        grouped = defaultdict(list)
        for r in items:
            if r["n_steps"] == n_ref:
                grouped[r["lambda"]].append(r)
        lams = sorted(grouped)
        ax.plot(lams, [mean_cd(grouped[lam]) * 1e4 for lam in lams], marker="o", label=f"{variant} (N={n_ref})")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("CD x1e4")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out_prefix.with_name(out_prefix.name + "_lambda_sweep.png")))
    return paths
