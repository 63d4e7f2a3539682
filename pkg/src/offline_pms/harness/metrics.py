"""Regret-style metrics over candidate sets with known true values."""
from __future__ import annotations

import numpy as np


def compute_regret(true_values, chosen: int) -> float:
    """Best true value minus the chosen candidate's true value."""
    v = np.asarray(true_values, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one candidate value")
    if not 0 <= chosen < v.size:
        raise IndexError(f"chosen index {chosen} out of range for {v.size} candidates")
    return float(v.max() - v[chosen])


def true_top_k(true_values, k: int) -> np.ndarray:
    """Indices of the ``k`` best true values; ties go to the lower index."""
    v = np.asarray(true_values, dtype=float)
    return np.argsort(-v, kind="stable")[:k]


def topk_metrics(true_values, selected, k: int) -> dict:
    """Best regret among ``selected`` and its overlap with the true top ``k``."""
    v = np.asarray(true_values, dtype=float)
    selected = [int(i) for i in selected]
    if not 1 <= k <= v.size:
        raise ValueError(f"k must lie in [1, {v.size}], got {k}")
    if len(selected) != k or len(set(selected)) != k:
        raise ValueError(f"expected {k} distinct selected indices, got {selected}")
    regret = min(compute_regret(v, i) for i in selected)
    hits = len(set(selected) & set(true_top_k(v, k).tolist()))
    return {"topk_regret": regret, "topk_precision": hits / k}


def ranking_from_scores(scores) -> np.ndarray:
    """Order candidates by score, highest first, ties to the lower index."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")
