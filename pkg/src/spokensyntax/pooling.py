"""Frame-to-segment pooling: fixed attention weights, learned 1-layer scorer, mean."""
from __future__ import annotations

import logging
import math

import numpy as np

from .core import (AttentionProfile, FrameMatrix, Segmentation, SegmentEmbeddingSeq,
                   frame_indices)
from .nn import Params

log = logging.getLogger(__name__)


def segment_frames(frames: FrameMatrix, seg: Segmentation) -> list[np.ndarray]:
    out = []
    for k, span in enumerate(seg.spans):
        idx = frame_indices(span, frames.frame_rate, frames.n_frames)
        if len(idx) == 0:
            raise ValueError(f"segment {k} [{span.start}, {span.end}) contains no frame centre")
        out.append(idx)
    return out


def mean_pool(frames: FrameMatrix, seg: Segmentation) -> SegmentEmbeddingSeq:
    X = frames.frames.astype(np.float64)
    rows = [X[idx].mean(axis=0) for idx in segment_frames(frames, seg)]
    return SegmentEmbeddingSeq(np.array(rows).reshape(len(rows), frames.dim))


def attention_pool(frames: FrameMatrix, attention: AttentionProfile,
                   seg: Segmentation) -> tuple[SegmentEmbeddingSeq, list[int]]:
    """Attention-weighted average per segment.

    Returns the embeddings and the indices of segments that had zero
    attention mass and were mean-pooled instead.
    """
    if len(attention) != frames.n_frames:
        raise ValueError("attention length differs from the number of frames")
    X = frames.frames.astype(np.float64)
    w = attention.weights.astype(np.float64)
    rows, fallback = [], []
    for k, idx in enumerate(segment_frames(frames, seg)):
        a = w[idx]
        total = a.sum()
        if total <= 0:
            fallback.append(k)
            rows.append(X[idx].mean(axis=0))
        else:
            rows.append((a / total) @ X[idx])
    if fallback:
        log.debug("mean-pooled %d zero-attention segments", len(fallback))
    return SegmentEmbeddingSeq(np.array(rows).reshape(len(rows), frames.dim)), fallback


def init_pooling_params(rng: np.random.Generator, dim: int, scale: float = 0.0) -> Params:
    """Per-frame logit ``x @ v + c``. ``scale=0`` starts from mean pooling."""
    return {"pool.v": scale * rng.normal(size=dim) / math.sqrt(dim), "pool.c": np.zeros(1)}


def mlp_attention_pool(frames: FrameMatrix, seg: Segmentation, params: Params):
    """Softmax-within-segment pooling with learned per-frame logits.

    Returns ``(vectors, cache)``; feed the cache to
    :func:`mlp_attention_pool_backward`.
    """
    X = frames.frames.astype(np.float64)
    logits = X @ params["pool.v"] + params["pool.c"][0]
    rows, cache = [], []
    for idx in segment_frames(frames, seg):
        z = logits[idx]
        a = np.exp(z - z.max())
        a /= a.sum()
        rows.append(a @ X[idx])
        cache.append((idx, a))
    return np.array(rows).reshape(len(rows), frames.dim), (X, cache)


def mlp_attention_pool_backward(params: Params, cache, g_out: np.ndarray) -> Params:
    X, per_seg = cache
    gv = np.zeros_like(params["pool.v"])
    gc = 0.0
    for k, (idx, a) in enumerate(per_seg):
        Xs = X[idx]
        pooled = a @ Xs
        # d pooled / d z_t = a_t (x_t - pooled)
        gz = a * ((Xs - pooled) @ g_out[k])
        gv += gz @ Xs
        gc += gz.sum()
    return {"pool.v": gv, "pool.c": np.array([gc])}
