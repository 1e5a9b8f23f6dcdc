"""Joint speech-span / image embedding space.

Spans and images are mapped by separate affine projections followed by L2
normalisation, so cosine similarity is a plain dot product. The triplet
loss and the concreteness score below use the same hinge terms with the
sign inside ``[.]_+`` flipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Params, l2_normalize, l2_normalize_backward


def init_joint_params(rng: np.random.Generator, span_dim: int, image_dim: int,
                      joint_dim: int) -> Params:
    return {
        "joint.Ws": rng.normal(size=(span_dim, joint_dim)) / math.sqrt(span_dim),
        "joint.bs": np.zeros(joint_dim),
        "joint.Wi": rng.normal(size=(image_dim, joint_dim)) / math.sqrt(image_dim),
        "joint.bi": np.zeros(joint_dim),
    }


@dataclass
class JointSpaceParams:
    """Convenience view over the ``joint.*`` entries of a parameter dict."""

    params: Params
    margin: float = 0.2

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.params["joint.Ws"].shape[1] != self.params["joint.Wi"].shape[1]:
            raise ValueError("span and image projections must share an output dimension")


def _project(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    z = np.atleast_2d(x) @ W + b
    try:
        y, norms = l2_normalize(z)
    except FloatingPointError:
        raise ValueError("degenerate projection: zero vector before normalisation") from None
    return y, (np.atleast_2d(x), y, norms)


def project_span(span_embedding: np.ndarray, params: Params) -> np.ndarray:
    y, _ = _project(span_embedding, params["joint.Ws"], params["joint.bs"])
    return y[0] if np.ndim(span_embedding) == 1 else y


def project_image(image_embedding: np.ndarray, params: Params) -> np.ndarray:
    y, _ = _project(image_embedding, params["joint.Wi"], params["joint.bi"])
    return y[0] if np.ndim(image_embedding) == 1 else y


def _project_backward(cache, gy, W):
    x, y, norms = cache
    gz = l2_normalize_backward(y, norms, gy)
    return gz @ W.T, x.T @ gz, gz.sum(axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def hinge(x):
    return np.maximum(x, 0.0)


def triplet_terms(pos: float, span_imposters, image_imposters, margin: float) -> float:
    """Hinge loss for one pair given its positive cosine and imposter cosines."""
    s = np.asarray(span_imposters, dtype=np.float64)
    i = np.asarray(image_imposters, dtype=np.float64)
    return float(hinge(s - pos + margin).sum() + hinge(i - pos + margin).sum())


def concreteness_terms(pos: float, span_imposters, image_imposters, margin: float) -> float:
    s = np.asarray(span_imposters, dtype=np.float64)
    i = np.asarray(image_imposters, dtype=np.float64)
    return float(hinge(pos - s - margin).sum() + hinge(pos - i - margin).sum())


def concreteness(span, image, imposter_spans, imposter_images, margin: float) -> float:
    """Concreteness of ``span`` for ``image`` against imposters (no gradient).

    Vectors are compared by cosine, so any positive rescaling is harmless.
    """
    imposter_spans = np.atleast_2d(imposter_spans)
    imposter_images = np.atleast_2d(imposter_images)
    if len(imposter_spans) == 0 or len(imposter_images) == 0:
        raise ValueError("need at least one imposter of each kind")
    pos = cosine(image, span)
    return concreteness_terms(pos, [cosine(image, c) for c in imposter_spans],
                              [cosine(i, span) for i in imposter_images], margin)


def _imposter_mask(groups: np.ndarray, n_images: int) -> tuple[np.ndarray, np.ndarray]:
    """``span_mask[k, l]``: span l is an imposter for item k;
    ``img_mask[k, h]``: image h is an imposter for item k."""
    span_mask = groups[:, None] != groups[None, :]
    img_mask = groups[:, None] != np.arange(n_images)[None, :]
    return span_mask, img_mask


@dataclass
class GroundingBatch:
    """Projected batch: K spans, G images, ``groups[k]`` = image of span k."""

    spans: np.ndarray
    images: np.ndarray
    groups: np.ndarray
    span_cache: tuple
    image_cache: tuple

    @property
    def sims(self) -> np.ndarray:
        # sims[h, k] = cos(image h, span k)
        return self.images @ self.spans.T


def project_batch(span_vecs: np.ndarray, image_vecs: np.ndarray, groups, params: Params) -> GroundingBatch:
    groups = np.asarray(groups, dtype=np.int64)
    ps, scache = _project(span_vecs, params["joint.Ws"], params["joint.bs"])
    pi, icache = _project(image_vecs, params["joint.Wi"], params["joint.bi"])
    return GroundingBatch(ps, pi, groups, scache, icache)


def triplet_loss(batch: GroundingBatch, params: Params, margin: float):
    """Summed hinge triplet loss over all (span, image) items of the batch.

    For item k (span c paired with image i = images[groups[k]]) the
    imposter spans are all spans of other groups and the imposter images
    are all other images. Returns ``(loss, param_grads, span_vec_grads,
    image_vec_grads)``.
    """
    S = batch.sims
    K = len(batch.groups)
    G = len(batch.images)
    g = batch.groups
    span_mask, img_mask = _imposter_mask(g, G)
    pos = S[g, np.arange(K)]                                   # (K,)
    # term 1: [cos(i_k, c_l) - cos(i_k, c_k) + d]_+ over imposter spans l
    t1 = S[g, :] - pos[:, None] + margin                       # (K, K)
    a1 = (t1 > 0) & span_mask
    # term 2: [cos(i_h, c_k) - cos(i_k, c_k) + d]_+ over imposter images h
    t2 = S.T - pos[:, None] + margin                           # (K, G)
    a2 = (t2 > 0) & img_mask
    loss = float(np.sum(t1 * a1) + np.sum(t2 * a2))

    dS = np.zeros_like(S)
    a1f = a1.astype(np.float64)
    a2f = a2.astype(np.float64)
    np.add.at(dS, g, a1f)                                      # d/dS[g_k, l]
    dS += a2f.T                                                # d/dS[h, k]
    dpos = -(a1f.sum(axis=1) + a2f.sum(axis=1))
    np.add.at(dS, (g, np.arange(K)), dpos)

    g_spans = dS.T @ batch.images
    g_images = dS @ batch.spans
    gx_s, gWs, gbs = _project_backward(batch.span_cache, g_spans, params["joint.Ws"])
    gx_i, gWi, gbi = _project_backward(batch.image_cache, g_images, params["joint.Wi"])
    grads = {"joint.Ws": gWs, "joint.bs": gbs, "joint.Wi": gWi, "joint.bi": gbi}
    return loss, grads, gx_s, gx_i


def batch_concreteness(batch: GroundingBatch, margin: float) -> np.ndarray:
    """Concreteness of every span item against in-batch imposters."""
    S = batch.sims
    K = len(batch.groups)
    g = batch.groups
    span_mask, img_mask = _imposter_mask(g, len(batch.images))
    pos = S[g, np.arange(K)]
    t1 = hinge(pos[:, None] - S[g, :] - margin) * span_mask
    t2 = hinge(pos[:, None] - S.T - margin) * img_mask
    return t1.sum(axis=1) + t2.sum(axis=1)
