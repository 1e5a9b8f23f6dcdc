"""Consensus (minimum-Bayes-risk style) selection over candidate outputs."""
from __future__ import annotations

import logging
from collections import Counter
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ParseTree, Segmentation, tree_spans

log = logging.getLogger(__name__)


def risk_matrix(candidates: Sequence, loss_fn: Callable) -> np.ndarray:
    n = len(candidates)
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            M[i, j] = loss_fn(candidates[i], candidates[j])
    return M


def mbr_select(candidates: Sequence, loss_fn: Callable):
    """Index and value of the candidate with the lowest summed loss to all
    candidates (itself included). Ties go to the lowest index."""
    if not candidates:
        raise ValueError("need at least one candidate")
    risks = risk_matrix(candidates, loss_fn).sum(axis=1)
    best = int(np.argmin(risks))
    return best, candidates[best]


def overlap_matrix(spans_a, spans_b) -> np.ndarray:
    a = np.array([[s.start, s.end] for s in spans_a], dtype=np.float64).reshape(-1, 2)
    b = np.array([[s.start, s.end] for s in spans_b], dtype=np.float64).reshape(-1, 2)
    lo = np.maximum(a[:, None, 0], b[None, :, 0])
    hi = np.minimum(a[:, None, 1], b[None, :, 1])
    return np.clip(hi - lo, 0.0, None)


def max_weight_span_matching(spans_a, spans_b) -> list[tuple[int, int]]:
    """One-to-one matching maximising total temporal overlap.

    Pairs with zero overlap are never reported.
    """
    spans_a, spans_b = list(spans_a), list(spans_b)
    if not spans_a or not spans_b:
        return []
    W = overlap_matrix(spans_a, spans_b)
    rows, cols = linear_sum_assignment(W, maximize=True)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if W[i, j] > 0]


def miou(seg_a: Segmentation, seg_b: Segmentation, normalize: str = "matched") -> float:
    """Mean IoU over matched span pairs.

    ``normalize="matched"`` divides by the number of matched pairs;
    ``"max"`` divides by the larger segmentation size, so unmatched spans
    count as zero.
    """
    a, b = list(seg_a), list(seg_b)
    if not a or not b:
        return 0.0
    pairs = max_weight_span_matching(a, b)
    if not pairs:
        return 0.0
    total = sum(a[i].iou(b[j]) for i, j in pairs)
    if normalize == "matched":
        return total / len(pairs)
    if normalize == "max":
        return total / max(len(a), len(b))
    raise ValueError(f"unknown normalisation {normalize!r}")


def miou_loss(seg_a: Segmentation, seg_b: Segmentation, normalize: str = "matched") -> float:
    if len(seg_a) == 0 or len(seg_b) == 0:
        log.warning("miou_loss on an empty segmentation; returning 0")
        return 0.0
    return -miou(seg_a, seg_b, normalize)


def bracket_f1(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    overlap = len(a & b)
    if overlap == 0:
        return 0.0
    p = overlap / len(a)
    r = overlap / len(b)
    return 2 * p * r / (p + r)


def tree_f1_loss(t1: ParseTree, t2: ParseTree) -> float:
    if t1.n_leaves != t2.n_leaves:
        raise ValueError("trees must cover the same number of segments")
    if t1.n_leaves <= 2:
        return 0.0
    return 1.0 - bracket_f1(tree_spans(t1, include_trivial=False), tree_spans(t2, include_trivial=False))


def two_stage_select(candidate_fn: Callable, grid: Sequence, validation: Sequence, train: Sequence,
                     k: int = 10, loss_fn: Callable = miou_loss):
    """Two-round MBR hyperparameter selection.

    ``candidate_fn(config, item)`` produces one output per grid entry.
    Stage one tallies, over ``validation``, how often each grid entry wins
    the per-utterance MBR vote; stage two keeps the ``k`` most frequent
    winners and runs MBR per ``train`` item over just those. Returns
    ``(chosen grid index per train item, chosen outputs, tally)``.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    tally = Counter()
    for item in validation:
        outs = [candidate_fn(cfg, item) for cfg in grid]
        idx, _ = mbr_select(outs, loss_fn)
        tally[idx] += 1
    ranked = sorted(range(len(grid)), key=lambda g: (-tally[g], g))
    keep = sorted(ranked[:k])
    chosen, outputs = [], []
    for item in train:
        outs = [candidate_fn(grid[g], item) for g in keep]
        j, out = mbr_select(outs, loss_fn)
        chosen.append(keep[j])
        outputs.append(out)
    return chosen, outputs, tally
