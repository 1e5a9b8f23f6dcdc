"""Shared domain types, tree/span algebra and RNG plumbing.

All types are frozen after construction. Arrays held by them are marked
read-only so they can be shared freely between threads.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Iterator, Sequence

import numpy as np

LABELS = ("NP", "VP", "PP", "ADJP", "other")


def _frozen_array(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------

def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams from ``rng``."""
    return list(rng.spawn(n))


# ---------------------------------------------------------------------------
# Time spans and per-frame structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class TimeSpan:
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"non-finite span {self.start}, {self.end}")
        if self.start < 0:
            raise ValueError(f"span start {self.start} is negative")
        if not self.start < self.end:
            raise ValueError(f"empty span [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def overlap(self, other: "TimeSpan") -> float:
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))

    def iou(self, other: "TimeSpan") -> float:
        inter = self.overlap(other)
        if inter <= 0.0:
            return 0.0
        union = max(self.end, other.end) - min(self.start, other.start)
        return inter / union

    def hull(self, other: "TimeSpan") -> "TimeSpan":
        return TimeSpan(min(self.start, other.start), max(self.end, other.end))


@dataclass(frozen=True)
class FrameMatrix:
    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        arr = np.asarray(self.frames)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"frames must be T x D with T, D >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frames contain non-finite values")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "frames", _frozen_array(arr))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate


@dataclass(frozen=True)
class AttentionProfile:
    layer_id: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 1:
            raise ValueError("attention weights must be 1-D")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("attention weights must be finite and non-negative")
        object.__setattr__(self, "weights", _frozen_array(w))

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class VadMask:
    voiced: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "voiced", _frozen_array(self.voiced, dtype=bool))

    def __len__(self):
        return len(self.voiced)


@dataclass(frozen=True)
class Segmentation:
    spans: tuple[TimeSpan, ...]

    def __post_init__(self):
        spans = tuple(self.spans)
        for a, b in zip(spans, spans[1:]):
            if b.start < a.start:
                raise ValueError("spans must be sorted by start")
            if b.start < a.end - 1e-12:
                raise ValueError(f"overlapping spans {a} and {b}")
        object.__setattr__(self, "spans", spans)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "Segmentation":
        return cls(tuple(TimeSpan(float(a), float(b)) for a, b in pairs))

    def to_pairs(self) -> list[list[float]]:
        return [[s.start, s.end] for s in self.spans]

    def to_json(self) -> str:
        return json.dumps(self.to_pairs())

    @classmethod
    def from_json(cls, text: str) -> "Segmentation":
        return cls.from_pairs(json.loads(text))

    def __len__(self):
        return len(self.spans)

    def __iter__(self) -> Iterator[TimeSpan]:
        return iter(self.spans)


def frame_indices(span: TimeSpan, frame_rate: float, n_frames: int) -> np.ndarray:
    """Frames whose centre ``(t + 0.5) / frame_rate`` lies in ``[start, end)``."""
    lo = max(0, math.ceil(span.start * frame_rate - 0.5))
    hi = min(n_frames, math.ceil(span.end * frame_rate - 0.5))
    return np.arange(lo, max(lo, hi))


@dataclass(frozen=True)
class SegmentEmbeddingSeq:
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("segment embeddings must be N x D")
        if not np.all(np.isfinite(v)):
            raise ValueError("segment embeddings contain non-finite values")
        object.__setattr__(self, "vectors", _frozen_array(v))

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class ImageEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("image embedding contains non-finite values")
        if not np.any(v != 0):
            raise ValueError("image embedding is all zero")
        object.__setattr__(self, "vector", _frozen_array(v))


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParseTree:
    """Binary tree over segment intervals ``[start, end)``.

    Leaves cover exactly one segment. ``span`` is the time hull of the
    covered segments once times have been attached with :meth:`with_times`.
    """

    start: int
    end: int
    children: tuple["ParseTree", ...] = ()
    span: TimeSpan | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty interval [{self.start}, {self.end})")
        if not self.children:
            if self.end != self.start + 1:
                raise ValueError("a leaf must cover exactly one segment")
            return
        if len(self.children) != 2:
            raise ValueError("internal nodes must be binary")
        left, right = self.children
        if left.start != self.start or left.end != right.start or right.end != self.end:
            raise ValueError("children must partition the parent interval")

    @staticmethod
    def leaf(i: int) -> "ParseTree":
        return ParseTree(i, i + 1)

    @staticmethod
    def merge(left: "ParseTree", right: "ParseTree") -> "ParseTree":
        return ParseTree(left.start, right.end, (left, right))

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def n_leaves(self) -> int:
        return self.end - self.start

    @property
    def interval(self) -> tuple[int, int]:
        return (self.start, self.end)

    def nodes(self) -> Iterator["ParseTree"]:
        """Preorder traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def with_times(self, seg: Segmentation) -> "ParseTree":
        spans = seg.spans
        if self.start != 0 or self.end != len(spans):
            raise ValueError(f"tree covers [{self.start},{self.end}) but segmentation has {len(spans)} spans")

        def attach(node: ParseTree) -> ParseTree:
            hull = TimeSpan(spans[node.start].start, spans[node.end - 1].end)
            kids = tuple(attach(c) for c in node.children)
            return ParseTree(node.start, node.end, kids, hull)

        return attach(self)

    def to_sexpr(self) -> str:
        if self.is_leaf:
            return str(self.start)
        return "(" + " ".join(c.to_sexpr() for c in self.children) + ")"

    def __str__(self):
        return self.to_sexpr()


def tree_spans(tree: ParseTree, include_trivial: bool = True,
               include_leaves: bool = False) -> set[tuple[int, int]]:
    """Index intervals of the tree's nodes.

    By default returns the N-1 internal-node intervals. With
    ``include_trivial=False`` width-1 intervals and the whole-sentence
    interval are dropped; ``include_leaves`` adds the leaf intervals.
    """
    out = set()
    for node in tree.nodes():
        if node.is_leaf and not include_leaves:
            continue
        if not include_trivial and (node.n_leaves == 1 or node.interval == tree.interval):
            continue
        out.add(node.interval)
    return out


def right_branching(n: int, offset: int = 0) -> ParseTree:
    tree = ParseTree.leaf(offset + n - 1)
    for i in range(offset + n - 2, offset - 1, -1):
        tree = ParseTree.merge(ParseTree.leaf(i), tree)
    return tree


def left_branching(n: int, offset: int = 0) -> ParseTree:
    tree = ParseTree.leaf(offset)
    for i in range(offset + 1, offset + n):
        tree = ParseTree.merge(tree, ParseTree.leaf(i))
    return tree


def tree_from_spans(n: int, brackets: Iterable[tuple[int, int]]) -> ParseTree:
    """Rebuild a binary tree from its internal-node intervals."""
    brackets = set(brackets) | {(0, n)}

    def build(i, j):
        if j - i == 1:
            return ParseTree.leaf(i)
        for k in range(i + 1, j):
            left_ok = k - i == 1 or (i, k) in brackets
            right_ok = j - k == 1 or (k, j) in brackets
            if left_ok and right_ok:
                return ParseTree.merge(build(i, k), build(k, j))
        raise ValueError(f"brackets do not form a binary tree over [{i},{j})")

    return build(0, n)


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text)


def parse_sexpr(text: str) -> ParseTree:
    """Read ``((0 1) (2 3))``-style trees (leaves are segment indices)."""
    toks = _tokens(text)
    pos = 0

    def read() -> ParseTree:
        nonlocal pos
        if pos >= len(toks):
            raise ValueError("unexpected end of tree text")
        tok = toks[pos]
        pos += 1
        if tok == "(":
            kids = []
            while pos < len(toks) and toks[pos] != ")":
                kids.append(read())
            if pos >= len(toks):
                raise ValueError("unbalanced parentheses")
            pos += 1
            if len(kids) == 1:
                return kids[0]
            if len(kids) != 2:
                raise ValueError("parse trees must be binary")
            return ParseTree.merge(kids[0], kids[1])
        if tok == ")":
            raise ValueError("unexpected ')'")
        return ParseTree.leaf(int(tok))

    tree = read()
    if pos != len(toks):
        raise ValueError("trailing tokens after tree")
    return tree


@dataclass(frozen=True)
class LabeledRefTree:
    """Arbitrary-arity reference tree; every node has a time span."""

    span: TimeSpan
    label: str | None = None
    children: tuple["LabeledRefTree", ...] = ()

    def __post_init__(self):
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        prev = None
        for c in self.children:
            if c.span.start < self.span.start - 1e-9 or c.span.end > self.span.end + 1e-9:
                raise ValueError("child span not nested in parent span")
            if prev is not None and c.span.start < prev.span.end - 1e-9:
                raise ValueError("sibling spans overlap or are out of order")
            prev = c

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def nodes(self) -> Iterator["LabeledRefTree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list["LabeledRefTree"]:
        return [n for n in self.nodes() if n.is_leaf]

    def index_spans(self) -> list[tuple[tuple[int, int], "LabeledRefTree"]]:
        """(leaf-index interval, node) for every node, preorder."""
        out = []

        def walk(node, i):
            if node.is_leaf:
                out.append(((i, i + 1), node))
                return i + 1
            slot = len(out)
            out.append(None)
            j = i
            for c in node.children:
                j = walk(c, j)
            out[slot] = ((i, j), node)
            return j

        walk(self, 0)
        return out

    def to_sexpr(self) -> str:
        head = f"{self.label or '-'}:{self.span.start!r}:{self.span.end!r}"
        if self.is_leaf:
            return f"({head})"
        return f"({head} " + " ".join(c.to_sexpr() for c in self.children) + ")"

    def __str__(self):
        return self.to_sexpr()


def parse_labeled_sexpr(text: str) -> LabeledRefTree:
    """Read ``(LABEL:start:end child ...)`` trees; ``-`` marks no label."""
    toks = _tokens(text)
    pos = 0

    def read() -> LabeledRefTree:
        nonlocal pos
        if toks[pos] != "(":
            raise ValueError(f"expected '(' at token {pos}")
        head = toks[pos + 1]
        pos += 2
        try:
            label, start, end = head.split(":")
        except ValueError:
            raise ValueError(f"bad node annotation {head!r}") from None
        kids = []
        while toks[pos] != ")":
            kids.append(read())
        pos += 1
        return LabeledRefTree(TimeSpan(float(start), float(end)),
                              None if label == "-" else label, tuple(kids))

    try:
        tree = read()
    except IndexError:
        raise ValueError("unbalanced parentheses") from None
    if pos != len(toks):
        raise ValueError("trailing tokens after tree")
    return tree


def labeled_from_parse(tree: ParseTree, labels: dict[tuple[int, int], str] | None = None) -> LabeledRefTree:
    """Convert a timed ParseTree into a LabeledRefTree."""
    if tree.span is None:
        raise ValueError("attach times with ParseTree.with_times first")
    labels = labels or {}
    kids = tuple(labeled_from_parse(c, labels) for c in tree.children)
    return LabeledRefTree(tree.span, labels.get(tree.interval), kids)


def parse_from_labeled(ref: LabeledRefTree) -> ParseTree:
    """Binary LabeledRefTree -> ParseTree over its leaves (unary nodes collapse)."""
    def conv(node, i):
        if node.is_leaf:
            return ParseTree(i, i + 1, (), node.span), i + 1
        if len(node.children) == 1:
            return conv(node.children[0], i)
        if len(node.children) != 2:
            raise ValueError("reference tree is not binary")
        left, j = conv(node.children[0], i)
        right, k = conv(node.children[1], j)
        return ParseTree(i, k, (left, right), node.span), k

    return conv(ref, 0)[0]


# ---------------------------------------------------------------------------
# Utterances and hyperparameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Utterance:
    id: str
    frames: FrameMatrix
    attention: dict[int, AttentionProfile]
    vad: VadMask
    image: ImageEmbedding
    segmentation: Segmentation | None = None
    ref_tree: LabeledRefTree | None = None

    def __post_init__(self):
        T = self.frames.n_frames
        for layer, att in self.attention.items():
            if len(att) != T:
                raise ValueError(f"{self.id}: attention layer {layer} has length {len(att)}, expected T={T}")
        if len(self.vad) != T:
            raise ValueError(f"{self.id}: VAD has length {len(self.vad)}, expected T={T}")

    @property
    def duration(self) -> float:
        return self.frames.duration

    def attention_layer(self, layer: int | None = None) -> AttentionProfile:
        if layer is None:
            layer = min(self.attention)
        return self.attention[layer]


@dataclass(frozen=True)
class HyperParams:
    # segmentation
    layer: int = 1
    p: float = 80.0
    gap: float = 0.05
    insert_len: float = 0.06
    # grounding / parser
    margin: float = 0.2
    lr: float = 1e-3
    momentum: float = 0.9
    joint_dim: int = 32
    score_hidden: tuple[int, ...] = (128, 128)
    combine_hidden: tuple[int, ...] = (256,)
    combine_mode: str = "mlp"
    score_input: str = "pair"
    pooling: str = "mlp"
    batch_size: int = 16
    baseline_decay: float = 0.99
    seed: int = 0
    steps: int = 2000

    def __post_init__(self):
        if not 0 < self.p < 100:
            raise ValueError("p must be in (0, 100)")
        if not self.gap > 0:
            raise ValueError("gap must be positive")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.combine_mode not in ("mlp", "vgnsl"):
            raise ValueError(f"unknown combine mode {self.combine_mode!r}")
        if self.score_input not in ("pair", "right"):
            raise ValueError(f"unknown score input {self.score_input!r}")
        if self.pooling not in ("mlp", "attention", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        object.__setattr__(self, "score_hidden", tuple(self.score_hidden))
        object.__setattr__(self, "combine_hidden", tuple(self.combine_hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score_hidden"] = list(self.score_hidden)
        d["combine_hidden"] = list(self.combine_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "HyperParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw) -> "HyperParams":
        d = self.to_dict()
        d.update(kw)
        return HyperParams.from_dict(d)
