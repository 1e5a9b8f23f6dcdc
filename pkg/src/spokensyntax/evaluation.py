"""Parse-quality metrics: ParsEval, typed constituent recall and SAIoU.

SAIoU aligns the nodes of two trees over the same utterance. An
alignment is valid when every aligned pair preserves ancestry in both
directions: if ``a`` aligns to ``b`` and ``a'`` to ``b'``, then ``a'`` is a
descendant of ``a`` exactly when ``b'`` is a descendant of ``b``. The score
of an alignment is ``2 / (n + m)`` times the summed IoU of its pairs, and
the metric is the maximum over valid alignments.

Unrelated nodes of one tree never overlap in time, so two aligned pairs
with positive IoU can never cross. The optimum is therefore a maximum
weight ordered (ancestry- and order-preserving) tree mapping, which the
Zhang-Shasha forest recursion finds in O(n^2 m^2) time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabeledRefTree, ParseTree, TimeSpan, tree_spans
from .mbr import bracket_f1


# ---------------------------------------------------------------------------
# ParsEval
# ---------------------------------------------------------------------------

def bracket_set(tree) -> tuple[int, set[tuple[int, int]]]:
    """(leaf count, non-trivial index brackets) for ParseTree or LabeledRefTree."""
    if isinstance(tree, ParseTree):
        return tree.n_leaves, tree_spans(tree, include_trivial=False)
    spans = [iv for iv, _ in tree.index_spans()]
    n = spans[0][1]
    return n, {iv for iv in spans if iv[1] - iv[0] > 1 and iv != (0, n)}


def parseval_f1(pred, gold) -> tuple[float, float, float]:
    """Unlabeled bracket P/R/F1, ignoring singletons and the whole-sentence span."""
    n_pred, bp = bracket_set(pred)
    n_gold, bg = bracket_set(gold)
    if n_pred != n_gold:
        raise ValueError(f"leaf counts differ ({n_pred} vs {n_gold}); "
                         "use saiou for trees over different segmentations")
    if not bp and not bg:
        return 1.0, 1.0, 1.0
    hit = len(bp & bg)
    p = hit / len(bp) if bp else 0.0
    r = hit / len(bg) if bg else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def mean_parseval_f1(preds, golds) -> float:
    scores = [parseval_f1(p, g)[2] for p, g in zip(preds, golds, strict=True)]
    return float(np.mean(scores)) if scores else 0.0


# ---------------------------------------------------------------------------
# constituent recall
# ---------------------------------------------------------------------------

DEFAULT_LABELS = ("NP", "VP", "PP", "ADJP")


def _node_spans(tree) -> list[TimeSpan]:
    out = []
    for node in tree.nodes():
        if node.span is None:
            raise ValueError("tree nodes need time spans")
        out.append(node.span)
    return out


def constituent_recall_counts(pred, gold: LabeledRefTree, labels=DEFAULT_LABELS,
                              tol: float = 0.02) -> dict[str, tuple[int, int]]:
    """Per label: (recalled, total) gold constituents.

    Every predicted node, leaf and root included, is a candidate match; a
    gold node is recalled when some predicted node has both endpoints
    within ``tol`` seconds of its own. The default is one 20 ms frame: over
    a shared segmentation that is an index-exact match (segments are longer
    than a frame), otherwise it absorbs frame quantisation.
    """
    cand = np.array([[s.start, s.end] for s in _node_spans(pred)])
    counts = {lab: [0, 0] for lab in labels}
    for node in gold.nodes():
        if node.label not in counts:
            continue
        counts[node.label][1] += 1
        d = np.abs(cand - [node.span.start, node.span.end]).max(axis=1)
        if np.any(d <= tol + 1e-9):
            counts[node.label][0] += 1
    return {k: (v[0], v[1]) for k, v in counts.items()}


def _recall_from_counts(counts) -> dict[str, float | None]:
    return {k: (hit / tot if tot else None) for k, (hit, tot) in counts.items()}


def constituent_recall(pred, gold: LabeledRefTree, labels=DEFAULT_LABELS,
                       tol: float = 0.02) -> dict[str, float | None]:
    """Per-label recall; ``None`` when the gold tree has no such constituent."""
    return _recall_from_counts(constituent_recall_counts(pred, gold, labels, tol))


def corpus_constituent_recall(preds, golds, labels=DEFAULT_LABELS, tol: float = 0.02):
    total = {lab: [0, 0] for lab in labels}
    for p, g in zip(preds, golds, strict=True):
        for lab, (hit, tot) in constituent_recall_counts(p, g, labels, tol).items():
            total[lab][0] += hit
            total[lab][1] += tot
    return _recall_from_counts({k: tuple(v) for k, v in total.items()})


# ---------------------------------------------------------------------------
# SAIoU
# ---------------------------------------------------------------------------

@dataclass
class FlatTree:
    """Postorder arrays for a tree of timed nodes."""

    spans: list[TimeSpan]
    parent: list[int]
    leftmost: list[int]      # postorder index of the leftmost leaf descendant
    keyroots: list[int]

    @property
    def size(self) -> int:
        return len(self.spans)

    def is_ancestor(self, a: int, d: int) -> bool:
        """True when ``a`` is a proper ancestor of ``d``."""
        p = self.parent[d]
        while p >= 0:
            if p == a:
                return True
            p = self.parent[p]
        return False


def flatten(tree) -> FlatTree:
    spans, parent, leftmost = [], [], []

    def walk(node) -> int:
        kids = [walk(c) for c in node.children]
        if node.span is None:
            raise ValueError("tree nodes need time spans")
        idx = len(spans)
        spans.append(node.span)
        parent.append(-1)
        leftmost.append(leftmost[kids[0]] if kids else idx)
        for k in kids:
            parent[k] = idx
        return idx

    walk(tree)
    seen = {}
    for i in range(len(spans)):
        seen[leftmost[i]] = i      # highest node per leftmost leaf
    keyroots = sorted(seen.values())
    return FlatTree(spans, parent, leftmost, keyroots)


def iou_matrix(a: FlatTree, b: FlatTree) -> np.ndarray:
    A = np.array([[s.start, s.end] for s in a.spans])
    B = np.array([[s.start, s.end] for s in b.spans])
    inter = np.clip(np.minimum(A[:, None, 1], B[None, :, 1]) - np.maximum(A[:, None, 0], B[None, :, 0]),
                    0.0, None)
    union = np.maximum(A[:, None, 1], B[None, :, 1]) - np.minimum(A[:, None, 0], B[None, :, 0])
    return np.where(inter > 0, inter / union, 0.0)


def max_alignment_weight(t1, t2) -> float:
    """Maximum summed IoU over valid alignments (Zhang-Shasha forest DP)."""
    a, b = flatten(t1), flatten(t2)
    W = iou_matrix(a, b)
    la, lb = a.leftmost, b.leftmost
    td = np.zeros((a.size, b.size))
    for i in a.keyroots:
        for j in b.keyroots:
            li, lj = la[i], lb[j]
            rows, cols = i - li + 2, j - lj + 2
            fd = np.zeros((rows, cols))
            for x in range(li, i + 1):
                fx = x - li + 1
                for y in range(lj, j + 1):
                    fy = y - lj + 1
                    if la[x] == li and lb[y] == lj:
                        v = max(fd[fx - 1, fy], fd[fx, fy - 1], fd[fx - 1, fy - 1] + W[x, y])
                        fd[fx, fy] = v
                        td[x, y] = v
                    else:
                        px = la[x] - li
                        py = lb[y] - lj
                        fd[fx, fy] = max(fd[fx - 1, fy], fd[fx, fy - 1], fd[px, py] + td[x, y])
    return float(td[a.size - 1, b.size - 1])


def saiou(t1, t2) -> float:
    n = sum(1 for _ in t1.nodes())
    m = sum(1 for _ in t2.nodes())
    return 2.0 * max_alignment_weight(t1, t2) / (n + m)


def saiou_bruteforce(t1, t2) -> float:
    """Exhaustive search over valid alignments (small trees only).

    Zero-IoU pairs are skipped: they add nothing to the score and dropping
    a pair from a valid alignment keeps it valid, so the maximum is
    unchanged.
    """
    a, b = flatten(t1), flatten(t2)
    W = iou_matrix(a, b)
    n, m = a.size, b.size
    anc_a = [[a.is_ancestor(i, j) for j in range(n)] for i in range(n)]
    anc_b = [[b.is_ancestor(i, j) for j in range(m)] for i in range(m)]
    options = [[j for j in range(m) if W[i, j] > 0] for i in range(n)]
    best = 0.0
    pairs: list[tuple[int, int]] = []
    used = [False] * m

    def consistent(i, j):
        for (p, q) in pairs:
            if anc_a[p][i] != anc_b[q][j] or anc_a[i][p] != anc_b[j][q]:
                return False
        return True

    def search(i, score):
        nonlocal best
        if i == n:
            best = max(best, score)
            return
        search(i + 1, score)
        for j in options[i]:
            if not used[j] and consistent(i, j):
                used[j] = True
                pairs.append((i, j))
                search(i + 1, score + W[i, j])
                pairs.pop()
                used[j] = False

    search(0, 0.0)
    return 2.0 * best / (n + m)


def mean_saiou(preds, golds) -> float:
    scores = [saiou(p, g) for p, g in zip(preds, golds, strict=True)]
    return float(np.mean(scores)) if scores else 0.0
