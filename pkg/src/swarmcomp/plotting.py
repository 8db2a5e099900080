"""Figure rendering for run reports. Everything goes to files through the Agg backend."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .policy.state import TRAITS  # noqa: E402

STYLE = {
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
}

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def size(width: float = 6.0, ratio: float = GOLDEN) -> tuple[float, float]:
    return width, width * ratio


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def score_history(iterations: Sequence[int], scores: Sequence[float], best_iteration: int | None,
                  path: Path, title: str = "score history") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size())
        ax.plot(iterations, scores, "o-", color="tab:blue", lw=1.2, ms=4)
        if best_iteration is not None and best_iteration in iterations:
            s = scores[list(iterations).index(best_iteration)]
            ax.plot([best_iteration], [s], "*", color="tab:red", ms=12, label=f"best ({s:.3f})")
            ax.axvline(best_iteration, color="tab:red", ls="--", lw=0.8)
            ax.legend(frameon=False)
        ax.set_xlabel("iteration")
        ax.set_ylabel("sigma")
        ax.set_ylim(0, 1)
        ax.set_title(title)
        return _save(fig, path)


def trait_trajectories(traits: np.ndarray, path: Path, names: Sequence[str] = TRAITS) -> Path:
    """One panel per trait, one line per agent; traits has shape (N, K, T+1)."""
    n, K, snaps = traits.shape
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, K, figsize=(2.4 * K, 2.4), sharey=True, squeeze=False)
        t = np.arange(snaps)
        for k, ax in enumerate(axes[0]):
            for i in range(n):
                ax.plot(t, traits[i, k], lw=0.9, label=f"agent {i + 1}")
            ax.set_title(names[k].replace("_", " ") if k < len(names) else f"trait {k}")
            ax.set_xlabel("iteration")
        axes[0][0].set_ylabel("value")
        axes[0][0].set_ylim(0, 1)
        axes[0][-1].legend(frameon=False, loc="center left", bbox_to_anchor=(1.0, 0.5))
        return _save(fig, path)


def tonal_curves(stability: Sequence[float], tension: Sequence[float], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size())
        x = np.arange(1, len(stability) + 1)
        ax.plot(x, stability, "o-", label="stability", color="tab:green")
        ax.plot(x, tension, "s--", label="tension", color="tab:orange")
        ax.set_xlabel("bar")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        return _save(fig, path)


def rhythm_palette(histogram: Sequence[Sequence[float]], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size())
        if histogram:
            durs, counts = zip(*histogram)
            labels = [f"{d:g}" for d in durs]
            ax.bar(labels, counts, color="tab:purple")
            for i, c in enumerate(counts):
                ax.annotate(str(int(c)), (i, c), ha="center", va="bottom", fontsize=7)
        ax.set_xlabel("duration (beats)")
        ax.set_ylabel("count")
        return _save(fig, path)


def matrix(S: np.ndarray, path: Path, title: str = "self-similarity") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(S, origin="lower", cmap="magma", vmin=0, vmax=1)
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(title)
        ax.set_xlabel("frame")
        ax.set_ylabel("frame")
        return _save(fig, path)


def novelty(curve: Sequence[float], peaks: Sequence[int], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size(ratio=0.35))
        ax.plot(curve, color="black", lw=1)
        ax.plot(list(peaks), [curve[p] for p in peaks], "v", color="tab:red")
        ax.set_xlabel("frame")
        ax.set_ylabel("JS novelty")
        return _save(fig, path)


def persistence(levels: Sequence[float], values: Sequence[float], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size())
        ax.plot(np.arange(1, len(values) + 1), values, "o-")
        ax.set_xlabel("level transition")
        ax.set_ylabel("Jaccard persistence")
        ax.set_ylim(0, 1.05)
        if len(levels):
            ax.set_title("thresholds " + ", ".join(f"{v:.2f}" for v in levels))
        return _save(fig, path)


def return_probability(ret: Sequence[float], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size())
        ax.semilogy(np.arange(1, len(ret) + 1), np.maximum(ret, 1e-16))
        ax.set_xlabel("t")
        ax.set_ylabel("return probability")
        return _save(fig, path)


def equilibrium_overlay(observed: Sequence[float], model: Sequence[float], lam: float,
                        delta: float, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size())
        t = np.arange(1, len(observed) + 1)
        ax.plot(t, observed, "o-", label="observed")
        m = np.asarray(model[:len(observed)], float)
        ax.plot(t[:len(m)], delta + lam * m, "--", label=f"calibrated model ({lam:.3f}, {delta:.3f})")
        ax.set_xlabel("step")
        ax.set_ylabel("mean |change|")
        ax.legend(frameon=False)
        return _save(fig, path)


def residual_heatmap(res: np.ndarray, path: Path, names: Sequence[str] = TRAITS) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 0.3 * len(res) + 1.2))
        im = ax.imshow(res, aspect="auto", cmap="viridis")
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_xticks(range(res.shape[1]))
        ax.set_xticklabels([n.replace("_", "\n") for n in names[:res.shape[1]]], fontsize=6)
        ax.set_ylabel("agent")
        return _save(fig, path)
