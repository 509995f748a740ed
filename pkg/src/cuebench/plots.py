"""Figure rendering for sweep outputs.

Two figures summarize a sweep: mAP as a function of the augmentation
weight (one line per backend) and the precision-recall overlay (one curve
per backend/weight cell).  Rendering always goes straight to image files
via the Agg canvas so runs work on headless machines; nothing in the
evaluation path imports this module.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_BACKEND_ORDER = {"bf": 0, "lsh": 1, "bof": 2, "bst": 3}


def _backend_sort_key(name: str):
    return (_BACKEND_ORDER.get(name, len(_BACKEND_ORDER)), name)


def plot_map_vs_lambda(rows, path) -> str:
    """Render mAP over augmentation weight, one line per backend.

    ``rows`` holds mappings with at least ``backend``, ``lambda`` and
    ``map`` entries (strings are coerced, so CSV reader rows work as-is).
    Weights are spaced evenly in sweep order rather than numerically, which
    keeps doubling ladders like 0,1,2,4,...,32 readable.
    """
    parsed = [
        (str(r["backend"]), int(r["lambda"]), float(r["map"])) for r in rows
    ]
    if not parsed:
        raise ValueError("no summary rows to plot")
    lambdas = sorted({lam for _, lam, _ in parsed})
    position = {lam: i for i, lam in enumerate(lambdas)}

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for backend in sorted({b for b, _, _ in parsed}, key=_backend_sort_key):
        points = sorted(
            (lam, score) for b, lam, score in parsed if b == backend
        )
        ax.plot(
            [position[lam] for lam, _ in points],
            [score for _, score in points],
            marker="o",
            label=backend,
        )
    ax.set_xticks(range(len(lambdas)))
    ax.set_xticklabels([str(lam) for lam in lambdas])
    ax.set_xlabel("augmentation weight $\\lambda$")
    ax.set_ylabel("mAP")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_pr_curves(rows, path) -> str:
    """Render the precision-recall overlay, one curve per (backend, weight).

    ``rows`` holds mappings with ``backend``, ``lambda``, ``recall`` and
    ``precision`` entries; points of one cell are drawn in the order given.
    """
    curves: dict = {}
    for r in rows:
        key = (str(r["backend"]), int(r["lambda"]))
        curves.setdefault(key, []).append(
            (float(r["recall"]), float(r["precision"]))
        )
    if not curves:
        raise ValueError("no curve rows to plot")

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for backend, lam in sorted(
        curves, key=lambda k: (_backend_sort_key(k[0]), k[1])
    ):
        points = curves[(backend, lam)]
        ax.plot(
            [p[0] for p in points],
            [p[1] for p in points],
            marker=".",
            label=f"{backend} $\\lambda$={lam}",
        )
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)
