"""Self-training with a span-scoring chart parser decoded by CKY.

Fence ``k`` (between segments ``k-1`` and ``k``) is represented by its two
neighbouring segment vectors plus two edge flags; zero vectors stand in
beyond the sentence edges. A span ``[i, j)`` is featurised as the
difference of its fences, both fences themselves, the mean of its
segments and its relative width, and scored by a GELU MLP.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ParseTree, tree_spans
from .mbr import mbr_select, tree_f1_loss
from .nn import SGD, Params, mlp_backward, mlp_forward, mlp_init

log = logging.getLogger(__name__)


def feature_dim(dim: int) -> int:
    fence = 2 * dim + 2
    return 3 * fence + dim + 1


def init_chart_params(rng: np.random.Generator, dim: int, hidden=(64,)) -> Params:
    """The output layer starts at zero, so an untrained chart is all zeros."""
    return mlp_init(rng, "chart", [feature_dim(dim), *hidden, 1], out_scale=0.0)


def all_spans(n: int) -> list[tuple[int, int]]:
    return [(i, j) for w in range(2, n + 1) for i in range(0, n - w + 1) for j in [i + w]]


def span_features(W: np.ndarray, spans) -> np.ndarray:
    N, D = W.shape
    pad = np.vstack([np.zeros(D), W, np.zeros(D)])
    fences = np.zeros((N + 1, 2 * D + 2))
    for k in range(N + 1):
        fences[k, :D] = pad[k]          # segment k-1
        fences[k, D:2 * D] = pad[k + 1]  # segment k
        fences[k, 2 * D] = float(k == 0)
        fences[k, 2 * D + 1] = float(k == N)
    csum = np.vstack([np.zeros(D), np.cumsum(W, axis=0)])
    rows = []
    for i, j in spans:
        fi, fj = fences[i], fences[j]
        mean = (csum[j] - csum[i]) / (j - i)
        rows.append(np.concatenate([fj - fi, fi, fj, mean, [(j - i) / N]]))
    return np.array(rows).reshape(len(rows), feature_dim(D))


def span_chart(embeddings, params: Params) -> dict[tuple[int, int], float]:
    """Score every span of width >= 2."""
    W = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    spans = all_spans(len(W))
    if not spans:
        return {}
    out, _ = mlp_forward(params, "chart", span_features(W, spans))
    return {s: float(v) for s, v in zip(spans, out[:, 0])}


def span_chart_backward(embeddings, params: Params, span_grads: dict) -> Params:
    """Parameter gradient of ``sum_s span_grads[s] * chart[s]``."""
    W = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    spans = [s for s, g in span_grads.items() if g != 0]
    if not spans:
        return {k: np.zeros_like(v) for k, v in params.items() if k.startswith("chart.")}
    _, cache = mlp_forward(params, "chart", span_features(W, spans))
    g = np.array([span_grads[s] for s in spans])[:, None]
    _, grads = mlp_backward(params, "chart", cache, g)
    return grads


def cky_decode(chart: dict[tuple[int, int], float], n: int) -> ParseTree:
    """Binary tree maximising the summed score of its width>=2 spans.

    Ties prefer the largest split point.
    """
    if n < 1:
        raise ValueError("need at least one segment")
    best = {}
    split = {}
    for i in range(n):
        best[(i, i + 1)] = 0.0
    for w in range(2, n + 1):
        for i in range(0, n - w + 1):
            j = i + w
            top, arg = -math.inf, None
            for k in range(j - 1, i, -1):
                v = best[(i, k)] + best[(k, j)]
                if v > top:
                    top, arg = v, k
            best[(i, j)] = top + chart.get((i, j), 0.0)
            split[(i, j)] = arg

    def build(i, j):
        if j - i == 1:
            return ParseTree.leaf(i)
        k = split[(i, j)]
        return ParseTree.merge(build(i, k), build(k, j))

    return build(0, n)


def tree_score(chart, tree: ParseTree) -> float:
    return sum(chart.get(s, 0.0) for s in tree_spans(tree))


@dataclass
class SelfTrainConfig:
    hidden: tuple[int, ...] = (64,)
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 8
    ckpt_every: int = 5      # epochs between kept snapshots
    seed: int = 0

    def to_dict(self):
        return {"hidden": list(self.hidden), "lr": self.lr, "momentum": self.momentum,
                "epochs": self.epochs, "batch_size": self.batch_size,
                "ckpt_every": self.ckpt_every, "seed": self.seed}


@dataclass
class SelfTrainResult:
    params: Params
    snapshots: list[Params] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def margin_loss(embeddings, teacher: ParseTree, params: Params):
    """Structured hinge with Hamming-augmented CKY. Returns (loss, grads)."""
    n = teacher.n_leaves
    chart = span_chart(embeddings, params)
    gold = tree_spans(teacher)
    aug = {s: v + (0.0 if s in gold else 1.0) for s, v in chart.items()}
    pred = cky_decode(aug, n)
    pred_spans = tree_spans(pred)
    loss = tree_score(aug, pred) - tree_score(chart, teacher)
    if loss <= 0:
        return 0.0, {}
    coef = {}
    for s in pred_spans:
        coef[s] = coef.get(s, 0.0) + 1.0
    for s in gold:
        coef[s] = coef.get(s, 0.0) - 1.0
    return loss, span_chart_backward(embeddings, params, coef)


def fit_selftrain(data, dim: int, config: SelfTrainConfig = SelfTrainConfig(),
                  rng: np.random.Generator | None = None, params: Params | None = None) -> SelfTrainResult:
    """Fit the chart parser to teacher trees.

    ``data`` is a list of ``(segment embeddings, teacher tree)``; gold
    trees are never consulted. A snapshot of the parameters is kept every
    ``config.ckpt_every`` epochs (and after the last one) for output
    selection.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    init_rng, order_rng = rng.spawn(2)
    params = params if params is not None else init_chart_params(init_rng, dim, config.hidden)
    opt = SGD(params, config.lr, config.momentum)
    result = SelfTrainResult(params)
    usable = [(np.asarray(getattr(e, "vectors", e), float), t) for e, t in data if t.n_leaves >= 2]
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(usable))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            grads: Params = {}
            chunk = order[start:start + config.batch_size]
            for idx in chunk:
                E, teacher = usable[idx]
                loss, g = margin_loss(E, teacher, params)
                epoch_loss += loss
                for k, v in g.items():
                    grads[k] = grads.get(k, 0.0) + v / len(chunk)
            if not math.isfinite(epoch_loss):
                from .parser import TrainingDiverged
                raise TrainingDiverged(f"self-training loss is non-finite at epoch {epoch}")
            if grads:
                opt.step(grads)
        result.losses.append(epoch_loss / max(1, len(usable)))
        log.info("self-train epoch %d loss %.4f", epoch + 1, result.losses[-1])
        if config.ckpt_every and (epoch + 1) % config.ckpt_every == 0 and epoch + 1 < config.epochs:
            result.snapshots.append({k: v.copy() for k, v in params.items()})
    result.snapshots.append({k: v.copy() for k, v in params.items()})
    return result


def predict(embeddings, params: Params) -> ParseTree:
    W = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    return cky_decode(span_chart(W, params), len(W))


def predict_mbr(embeddings_per_model, models) -> ParseTree:
    """Consensus tree over several (input representation, params) pairs.

    ``embeddings_per_model[k]`` is the input for ``models[k]``, which lets
    snapshots trained on different feature layers vote together.
    """
    cands = [predict(e, p) for e, p in zip(embeddings_per_model, models, strict=True)]
    return mbr_select(cands, tree_f1_loss)[1]
