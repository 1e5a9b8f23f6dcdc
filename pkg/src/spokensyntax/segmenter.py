"""Word segmentation from attention profiles and boundary scoring."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import AttentionProfile, Segmentation, TimeSpan, Utterance, VadMask

log = logging.getLogger(__name__)


def retained_frames(weights: np.ndarray, p: float) -> np.ndarray:
    """Boolean mask of the minimal top-weight prefix holding ``p``% of the mass.

    Equal weights are ordered by frame index, so at a tie the earlier
    frames are kept and the later ones are trimmed first.
    """
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    mask = np.zeros(len(w), dtype=bool)
    if total <= 0:
        return mask
    order = np.lexsort((np.arange(len(w)), -w))
    csum = np.cumsum(w[order])
    target = total * (p / 100.0)
    # relative slack so that p=100 keeps everything despite rounding
    k = int(np.searchsorted(csum, target * (1 - 1e-12), side="left"))
    k = min(k, len(w) - 1)
    mask[order[: k + 1]] = True
    return mask


def runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open frame intervals."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    d = np.diff(m.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def threshold_segment(attention: AttentionProfile, p: float, frame_rate: float) -> Segmentation:
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    w = attention.weights
    if not np.any(w > 0):
        log.warning("attention profile (layer %s) is all zero; returning empty segmentation",
                    attention.layer_id)
        return Segmentation(())
    mask = retained_frames(w, p)
    return Segmentation(tuple(TimeSpan(a / frame_rate, b / frame_rate) for a, b in runs(mask)))


def insert_segments(seg: Segmentation, vad: VadMask, s: float, insert_len: float,
                    frame_rate: float) -> Segmentation:
    """Place one short span in every gap whose voiced part exceeds ``s`` seconds.

    Gaps are the stretches between consecutive spans plus the stretches
    before the first and after the last span. The new span is centred on
    the longest voiced run in the gap and clipped to it.
    """
    if insert_len <= 0:
        raise ValueError("insert_len must be positive")
    voiced = np.asarray(vad.voiced, dtype=bool)
    T = len(voiced)
    duration = T / frame_rate
    edges = [0.0] + [x for sp in seg.spans for x in (sp.start, sp.end)] + [duration]
    new = []
    for k in range(0, len(edges), 2):
        g0, g1 = edges[k], edges[k + 1]
        if g1 - g0 <= 0:
            continue
        # frames whose centre lies inside the gap
        lo = max(0, int(np.ceil(g0 * frame_rate - 0.5)))
        hi = min(T, int(np.ceil(g1 * frame_rate - 0.5)))
        if hi <= lo:
            continue
        gap_runs = [(lo + a, lo + b) for a, b in runs(voiced[lo:hi])]
        if not gap_runs:
            continue
        voiced_len = sum(b - a for a, b in gap_runs) / frame_rate
        if voiced_len <= s:
            continue
        a, b = max(gap_runs, key=lambda r: (r[1] - r[0], -r[0]))
        r0 = max(a / frame_rate, g0)
        r1 = min(b / frame_rate, g1)
        length = min(insert_len, r1 - r0)
        centre = 0.5 * (r0 + r1)
        new.append(TimeSpan(centre - 0.5 * length, centre + 0.5 * length))
    if not new:
        return seg
    return Segmentation(tuple(sorted(list(seg.spans) + new)))


def uniform_segmentation(n_words: int, utterance_duration: float) -> Segmentation:
    if n_words < 1 or utterance_duration <= 0:
        raise ValueError("need n_words >= 1 and a positive duration")
    edges = [utterance_duration * k / n_words for k in range(n_words + 1)]
    edges[-1] = utterance_duration
    return Segmentation(tuple(TimeSpan(a, b) for a, b in zip(edges, edges[1:])))


def boundaries(seg: Segmentation, frame_period: float = 0.02) -> list[float]:
    """Sorted span edges; edges closer than one frame period collapse into one."""
    pts = sorted(x for sp in seg.spans for x in (sp.start, sp.end))
    out = []
    for x in pts:
        if out and x - out[-1] <= frame_period + 1e-9:
            continue
        out.append(x)
    return out


@dataclass(frozen=True)
class BoundaryCounts:
    matches: int
    n_hyp: int
    n_ref: int

    def __add__(self, other):
        return BoundaryCounts(self.matches + other.matches, self.n_hyp + other.n_hyp,
                              self.n_ref + other.n_ref)

    def prf(self) -> tuple[float, float, float]:
        p = self.matches / self.n_hyp if self.n_hyp else 0.0
        r = self.matches / self.n_ref if self.n_ref else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return p, r, f


def match_boundaries(hyp: list[float], ref: list[float], tol: float) -> int:
    """Greedy left-to-right one-to-one matching; each reference boundary takes
    the nearest still-unused hypothesis boundary within ``tol``."""
    used = [False] * len(hyp)
    hyp_arr = np.asarray(hyp)
    n = 0
    for r in ref:
        if not len(hyp):
            break
        dist = np.abs(hyp_arr - r)
        best = -1
        for j in np.argsort(dist, kind="stable"):
            if dist[j] > tol + 1e-9:
                break
            if not used[j]:
                best = j
                break
        if best >= 0:
            used[best] = True
            n += 1
    return n


def boundary_counts(hyp: Segmentation, ref: Segmentation, tol: float = 0.02,
                    frame_period: float = 0.02) -> BoundaryCounts:
    hb = boundaries(hyp, frame_period)
    rb = boundaries(ref, frame_period)
    return BoundaryCounts(match_boundaries(hb, rb, tol), len(hb), len(rb))


def boundary_prf(hyp: Segmentation, ref: Segmentation, tol: float = 0.02,
                 frame_period: float = 0.02) -> tuple[float, float, float]:
    return boundary_counts(hyp, ref, tol, frame_period).prf()


def corpus_boundary_prf(hyps, refs, tol: float = 0.02, frame_period: float = 0.02):
    """Micro-averaged P/R/F1 over a corpus (counts pooled before dividing)."""
    total = BoundaryCounts(0, 0, 0)
    for h, r in zip(hyps, refs, strict=True):
        total = total + boundary_counts(h, r, tol, frame_period)
    return total.prf()


@dataclass(frozen=True)
class SegmenterConfig:
    layer: int
    p: float
    gap: float | None = None
    insert_len: float = 0.06

    def label(self) -> str:
        ins = "none" if self.gap is None else f"{self.gap:g}"
        return f"l={self.layer},p={self.p:g},s={ins},len={self.insert_len:g}"


def segment_utterance(utt: Utterance, cfg: SegmenterConfig) -> Segmentation:
    rate = utt.frames.frame_rate
    seg = threshold_segment(utt.attention[cfg.layer], cfg.p, rate)
    if cfg.gap is not None:
        seg = insert_segments(seg, utt.vad, cfg.gap, cfg.insert_len, rate)
    return seg
