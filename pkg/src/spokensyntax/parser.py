"""Bottom-up tree induction by repeated scoring and merging of adjacent spans.

The parser keeps a row of span embeddings. At every step each adjacent pair
gets a score, one pair is picked (sampled from ``softmax(scores)`` during
training, argmax at inference), and the pair is replaced by its combined
embedding. ``build_tree`` records enough of the computation that
``trace_backward`` can return exact gradients of any weighted sum of the
per-step log-probabilities plus any loss placed on the node embeddings.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import HyperParams, ParseTree, Segmentation, Utterance, right_branching, left_branching
from .grounding import batch_concreteness, init_joint_params, project_batch, triplet_loss
from .nn import (SGD, Params, add_grads, l2_normalize, l2_normalize_backward, mlp_backward,
                 mlp_forward, mlp_init)
from .pooling import attention_pool, init_pooling_params, mean_pool, mlp_attention_pool, \
    mlp_attention_pool_backward, segment_frames

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class ParserConfig:
    combine_mode: str = "mlp"     # "mlp" | "vgnsl"
    score_input: str = "pair"     # "pair" | "right"

    @classmethod
    def from_hyper(cls, hyper: HyperParams) -> "ParserConfig":
        return cls(hyper.combine_mode, hyper.score_input)


def init_parser_params(rng: np.random.Generator, dim: int, score_hidden=(128, 128),
                       combine_hidden=(256,), config: ParserConfig = ParserConfig()) -> Params:
    s_rng, c_rng = rng.spawn(2)
    score_in = 2 * dim if config.score_input == "pair" else dim
    params = mlp_init(s_rng, "score", [score_in, *score_hidden, 1], out_scale=0.1)
    if config.combine_mode == "mlp":
        params.update(mlp_init(c_rng, "combine", [2 * dim, *combine_hidden, dim]))
    return params


def _score_input(a: np.ndarray, b: np.ndarray, config: ParserConfig) -> np.ndarray:
    if config.score_input == "pair":
        return np.concatenate([a, b], axis=-1)
    return np.array(b, dtype=np.float64)


def score_pair(w_a, w_b, params: Params, config: ParserConfig = ParserConfig()) -> float:
    y, _ = mlp_forward(params, "score", _score_input(np.asarray(w_a, float), np.asarray(w_b, float), config))
    return float(np.ravel(y)[0])


def _combine_forward(a, b, params, config):
    if config.combine_mode == "vgnsl":
        s = a + b
        try:
            y, norm = l2_normalize(s)
        except FloatingPointError:
            raise ValueError("combine: the two embeddings sum to zero") from None
        return y, ("vgnsl", y, norm)
    z, mcache = mlp_forward(params, "combine", np.concatenate([a, b]))
    try:
        y, norm = l2_normalize(z)
    except FloatingPointError:
        raise ValueError("combine: MLP output is the zero vector") from None
    return y, ("mlp", y, norm, mcache)


def _combine_backward(cache, gy, params, dim):
    if cache[0] == "vgnsl":
        _, y, norm = cache
        gs = l2_normalize_backward(y, norm, gy)
        return gs, gs, {}
    _, y, norm, mcache = cache
    gz = l2_normalize_backward(y, norm, gy)
    gx, grads = mlp_backward(params, "combine", mcache, gz)
    return gx[:dim], gx[dim:], grads


def combine(w_a, w_b, params: Params, config: ParserConfig = ParserConfig()) -> np.ndarray:
    y, _ = _combine_forward(np.asarray(w_a, float), np.asarray(w_b, float), params, config)
    return y


@dataclass
class TreeTrace:
    tree: ParseTree
    nodes: np.ndarray                       # (2N-1, D): leaves first, then merges in order
    intervals: list[tuple[int, int]]
    children: list[tuple[int, int]]         # for internal node N+t
    merges: list[int]                       # position of the merged pair at each step
    log_prob: float
    step_log_probs: list[float]
    leaf_raw: np.ndarray
    leaf_norms: np.ndarray
    score_pairs: list[tuple[int, int]] = field(default_factory=list)
    steps: list[tuple[list[int], int, np.ndarray]] = field(default_factory=list)
    combine_caches: list = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_raw)

    def internal_ids(self) -> range:
        return range(self.n_leaves, len(self.nodes))


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max())
    return e / e.sum()


def build_tree(embeddings, params: Params, mode: str = "greedy", rng: np.random.Generator | None = None,
               config: ParserConfig = ParserConfig(), forced: list[int] | None = None) -> TreeTrace:
    """Induce a binary tree over the rows of ``embeddings``.

    ``mode`` is "sample" or "greedy" (ties go to the leftmost pair).
    ``forced`` replays a given sequence of merge positions instead, which
    is how exact enumeration over merge orders is done.
    """
    X = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    N, D = X.shape
    if N < 1:
        raise ValueError("need at least one segment")
    if mode == "sample" and rng is None and forced is None:
        raise ValueError("sampling needs an rng")
    leaves, norms = l2_normalize(X)
    nodes = list(leaves)
    intervals = [(i, i + 1) for i in range(N)]
    trees = [ParseTree.leaf(i) for i in range(N)]
    trace = TreeTrace(trees[0], np.empty((0, D)), intervals, [], [], 0.0, [], X, norms)

    cur = list(range(N))
    scores: list[float] = []

    def evaluate(pairs):
        if not pairs:
            return []
        inp = np.stack([_score_input(nodes[a], nodes[b], config) for a, b in pairs])
        out, _ = mlp_forward(params, "score", inp)
        ids = []
        for (a, b), s in zip(pairs, out[:, 0]):
            trace.score_pairs.append((a, b))
            scores.append(float(s))
            ids.append(len(scores) - 1)
        return ids

    live = evaluate([(cur[k], cur[k + 1]) for k in range(N - 1)])
    for t in range(N - 1):
        s = np.array([scores[e] for e in live])
        probs = _softmax(s)
        if forced is not None:
            k = forced[t]
        elif mode == "sample":
            k = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
            k = min(k, len(probs) - 1)
        elif mode == "greedy":
            k = int(np.argmax(s))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        lp = float(np.log(probs[k]))
        trace.steps.append((list(live), k, probs))
        trace.step_log_probs.append(lp)
        trace.log_prob += lp
        trace.merges.append(k)
        a, b = cur[k], cur[k + 1]
        y, cache = _combine_forward(nodes[a], nodes[b], params, config)
        new = len(nodes)
        nodes.append(y)
        trace.combine_caches.append(cache)
        trace.children.append((a, b))
        intervals.append((intervals[a][0], intervals[b][1]))
        trees.append(ParseTree.merge(trees[a], trees[b]))
        cur[k:k + 2] = [new]
        pairs, slots = [], []
        if k > 0:
            pairs.append((cur[k - 1], new))
            slots.append(k - 1)
        if k < len(cur) - 1:
            pairs.append((new, cur[k + 1]))
            slots.append(k)
        fresh = evaluate(pairs)
        live = live[:k] + live[k + 1:]
        if k > 0:
            live[k - 1] = fresh[0]
        if k < len(cur) - 1:
            live[k] = fresh[-1]
        if len(live) != len(cur) - 1:
            raise AssertionError("pair bookkeeping out of sync")
    trace.tree = trees[-1]
    trace.nodes = np.array(nodes)
    return trace


def trace_backward(trace: TreeTrace, params: Params, step_weights=None, node_grads=None,
                   config: ParserConfig = ParserConfig()):
    """Gradient of ``sum_t w_t log p_t + <node_grads, nodes>``.

    Returns ``(param_grads, grad wrt the raw leaf embeddings)``.
    """
    n_total, D = trace.nodes.shape
    N = trace.n_leaves
    g_nodes = np.zeros((n_total, D)) if node_grads is None else np.array(node_grads, dtype=np.float64)
    grads: Params = {}
    if step_weights is not None and len(trace.steps):
        coef = np.zeros(len(trace.score_pairs))
        for w, (live, k, probs) in zip(step_weights, trace.steps):
            if w == 0:
                continue
            d = -probs * w
            d[k] += w
            coef[live] += d
        used = np.flatnonzero(coef)
        if len(used):
            pairs = [trace.score_pairs[e] for e in used]
            inp = np.stack([_score_input(trace.nodes[a], trace.nodes[b], config) for a, b in pairs])
            _, cache = mlp_forward(params, "score", inp)
            gin, sgrads = mlp_backward(params, "score", cache, coef[used][:, None])
            add_grads(grads, sgrads)
            for (a, b), g in zip(pairs, gin):
                if config.score_input == "pair":
                    g_nodes[a] += g[:D]
                    g_nodes[b] += g[D:]
                else:
                    g_nodes[b] += g
    for t in range(len(trace.children) - 1, -1, -1):
        node = N + t
        g = g_nodes[node]
        if not np.any(g):
            continue
        a, b = trace.children[t]
        ga, gb, cgrads = _combine_backward(trace.combine_caches[t], g, params, D)
        g_nodes[a] += ga
        g_nodes[b] += gb
        add_grads(grads, cgrads)
    g_leaf = l2_normalize_backward(trace.nodes[:N], trace.leaf_norms, g_nodes[:N])
    return grads, g_leaf


def trivial_tree(n_leaves: int, kind: str, rng: np.random.Generator | None = None) -> ParseTree:
    """Left/right-branching trees, or random ones by uniform split-point recursion."""
    if n_leaves < 1:
        raise ValueError("need at least one leaf")
    if kind == "left":
        return left_branching(n_leaves)
    if kind == "right":
        return right_branching(n_leaves)
    if kind != "random":
        raise ValueError(f"unknown trivial tree kind {kind!r}")
    if rng is None:
        raise ValueError("random trees need an rng")

    def build(i, j):
        if j - i == 1:
            return ParseTree.leaf(i)
        k = int(rng.integers(i + 1, j))
        return ParseTree.merge(build(i, k), build(k, j))

    return build(0, n_leaves)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class PreparedUtterance:
    """Segmented utterance with cached pooling inputs."""

    utt: Utterance
    seg: Segmentation
    fixed: np.ndarray | None        # leaf embeddings when pooling is not learned


def prepare(utterances, segmentations, hyper: HyperParams) -> list[PreparedUtterance]:
    out = []
    for u, seg in zip(utterances, segmentations, strict=True):
        segment_frames(u.frames, seg)   # validate early
        fixed = None
        if hyper.pooling == "mean":
            fixed = mean_pool(u.frames, seg).vectors
        elif hyper.pooling == "attention":
            fixed = attention_pool(u.frames, u.attention_layer(hyper.layer
                                   if hyper.layer in u.attention else None), seg)[0].vectors
        out.append(PreparedUtterance(u, seg, fixed))
    return out


@dataclass
class GroundedParser:
    params: Params
    hyper: HyperParams
    baseline: float = 0.0
    step: int = 0

    @property
    def config(self) -> ParserConfig:
        return ParserConfig.from_hyper(self.hyper)

    def leaf_embeddings(self, item: PreparedUtterance):
        if item.fixed is not None:
            return item.fixed, None
        return mlp_attention_pool(item.utt.frames, item.seg, self.params)

    def parse(self, item: PreparedUtterance, mode: str = "greedy", rng=None) -> ParseTree:
        X, _ = self.leaf_embeddings(item)
        return build_tree(X, self.params, mode, rng, self.config).tree.with_times(item.seg)


def init_model(rng: np.random.Generator, frame_dim: int, image_dim: int, hyper: HyperParams) -> GroundedParser:
    p_rng, j_rng, pool_rng = rng.spawn(3)
    params = init_parser_params(p_rng, frame_dim, hyper.score_hidden, hyper.combine_hidden,
                                ParserConfig.from_hyper(hyper))
    params.update(init_joint_params(j_rng, frame_dim, image_dim, hyper.joint_dim))
    if hyper.pooling == "mlp":
        params.update(init_pooling_params(pool_rng, frame_dim))
    return GroundedParser(params, hyper)


def update_baseline(baseline: float, reward: float, decay: float) -> float:
    return decay * baseline + (1.0 - decay) * reward


def reinforce_step(batch: list[PreparedUtterance], model: GroundedParser, optimizer: SGD | None,
                   rng: np.random.Generator) -> dict:
    """One joint update: policy gradient on concreteness rewards + triplet loss.

    Every merge is rewarded with the concreteness of the constituent it
    creates; the advantage subtracts an exponential moving average of the
    batch-mean reward. Returns diagnostics and, under key ``"grads"``, the
    gradient that was applied.
    """
    hyper = model.hyper
    cfg = model.config
    params = model.params
    traces, pool_caches = [], []
    for item in batch:
        X, pcache = model.leaf_embeddings(item)
        traces.append(build_tree(X, params, "sample", rng, cfg))
        pool_caches.append(pcache)

    span_vecs = np.concatenate([tr.nodes for tr in traces])
    groups = np.concatenate([np.full(len(tr.nodes), u) for u, tr in enumerate(traces)])
    images = np.stack([item.utt.image.vector for item in batch])
    gb = project_batch(span_vecs, images, groups, params)
    loss, jgrads, g_spans, _ = triplet_loss(gb, params, hyper.margin)
    conc = batch_concreteness(gb, hyper.margin)

    n_items = len(span_vecs)
    grads: Params = {}
    add_grads(grads, jgrads, 1.0 / n_items)
    g_spans = g_spans / n_items

    rewards = []
    offset = 0
    for tr in traces:
        ids = np.arange(offset + tr.n_leaves, offset + len(tr.nodes))
        rewards.append(conc[ids])
        offset += len(tr.nodes)
    all_r = np.concatenate(rewards) if rewards else np.zeros(0)
    mean_r = float(all_r.mean()) if len(all_r) else 0.0
    baseline = model.baseline

    offset = 0
    pg_obj = 0.0
    for item, tr, r, pcache in zip(batch, traces, rewards, pool_caches):
        adv = r - baseline
        pg_obj += float(np.dot(adv, tr.step_log_probs))
        w = -adv / len(batch)
        ng = g_spans[offset:offset + len(tr.nodes)]
        offset += len(tr.nodes)
        pgrads, g_leaf = trace_backward(tr, params, w, ng, cfg)
        add_grads(grads, pgrads)
        if pcache is not None:
            add_grads(grads, mlp_attention_pool_backward(params, pcache, g_leaf))

    total = loss / n_items - pg_obj / len(batch)
    if not math.isfinite(total) or not math.isfinite(mean_r):
        raise TrainingDiverged(f"non-finite objective at step {model.step}")
    model.baseline = update_baseline(baseline, mean_r, hyper.baseline_decay)
    gnorm = optimizer.step(grads) if optimizer is not None else float("nan")
    model.step += 1
    return {"step": model.step, "triplet": loss / n_items, "reward": mean_r,
            "baseline": model.baseline, "grad_norm": gnorm, "grads": grads}


def train(items: list[PreparedUtterance], hyper: HyperParams, rng: np.random.Generator,
          model: GroundedParser | None = None, callback=None, ckpt_every: int = 0, ckpt_dir=None,
          log_every: int = 100) -> GroundedParser:
    if not items:
        raise ValueError("empty training corpus")
    init_rng, order_rng, sample_rng = rng.spawn(3)
    if model is None:
        model = init_model(init_rng, items[0].utt.frames.dim, len(items[0].utt.image.vector), hyper)
    opt = SGD(model.params, hyper.lr, hyper.momentum)
    bs = min(hyper.batch_size, len(items))
    if bs < 2:
        raise ValueError("batches need at least two utterances for imposters")
    perm = order_rng.permutation(len(items))
    pos = 0
    for _ in range(hyper.steps):
        if pos + bs > len(perm):
            perm = order_rng.permutation(len(items))
            pos = 0
        batch = [items[i] for i in perm[pos:pos + bs]]
        pos += bs
        diag = reinforce_step(batch, model, opt, sample_rng)
        if log_every and model.step % log_every == 0:
            log.info("step %d triplet %.4f reward %.4f baseline %.4f", model.step,
                     diag["triplet"], diag["reward"], diag["baseline"])
        if callback is not None:
            callback(model, diag)
        if ckpt_every and ckpt_dir is not None and model.step % ckpt_every == 0:
            from .checkpoint import save_model
            save_model(model, f"{ckpt_dir}/step{model.step:06d}.ckpt")
    return model
