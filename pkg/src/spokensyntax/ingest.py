"""File formats, corpus manifests and the synthetic corpus generator.

Container layout (little-endian)::

    bytes 0..15   b"TXLSP001" padded with NUL to 16 bytes
    u32 T, u32 D, f64 frame_rate
    T*D float32, row-major

Attention and VAD files use the same container with D=1 (VAD stores
0.0/1.0). Image embeddings are stored with T=1 and frame_rate 0.

A manifest is JSON lines, one utterance per line::

    {"id": "u0", "features": "u0.feat", "attention": {"0": "u0.att0"},
     "vad": "u0.vad", "image": "u0.img",
     "segmentation": "u0.seg.json", "tree": "u0.tree"}

``segmentation`` and ``tree`` are optional. Relative paths are resolved
against the manifest's directory.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import (AttentionProfile, FrameMatrix, ImageEmbedding, LabeledRefTree, ParseTree,
                   Segmentation, TimeSpan, Utterance, VadMask, labeled_from_parse,
                   parse_labeled_sexpr)

log = logging.getLogger(__name__)

MAGIC = b"TXLSP001".ljust(16, b"\0")
_HEADER = struct.Struct("<IId")


class CorpusError(ValueError):
    pass


class MissingFileError(CorpusError, FileNotFoundError):
    pass


class DimensionMismatchError(CorpusError):
    pass


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def encode_container(array, frame_rate: float) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("container payload must be 1-D or 2-D")
    T, D = arr.shape
    return MAGIC + _HEADER.pack(T, D, float(frame_rate)) + np.ascontiguousarray(arr).tobytes()


def decode_container(data: bytes, name: str = "<bytes>") -> tuple[np.ndarray, float]:
    if data[:16] != MAGIC:
        raise CorpusError(f"{name}: bad magic {data[:16]!r}")
    T, D, rate = _HEADER.unpack_from(data, 16)
    off = 16 + _HEADER.size
    expected = off + 4 * T * D
    if len(data) != expected:
        raise CorpusError(f"{name}: expected {expected} bytes for T={T}, D={D}, got {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", count=T * D, offset=off).reshape(T, D).astype(np.float32)
    return arr, rate


def write_container(path, array, frame_rate: float) -> None:
    Path(path).write_bytes(encode_container(array, frame_rate))


def read_container(path) -> tuple[np.ndarray, float]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file {path}")
    return decode_container(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def load_utterance(record: dict, base: Path) -> Utterance:
    uid = record["id"]

    def need(key):
        path = _resolve(base, record[key])
        if not path.exists():
            raise MissingFileError(f"{uid}: missing {key} file {path}")
        return path

    frames, rate = read_container(need("features"))
    T, D = frames.shape
    att_paths = record["attention"]
    if isinstance(att_paths, str):
        att_paths = {"0": att_paths}
    attention = {}
    for layer, rel in att_paths.items():
        path = _resolve(base, rel)
        if not path.exists():
            raise MissingFileError(f"{uid}: missing attention file {path}")
        w, _ = read_container(path)
        if w.shape != (T, 1):
            raise DimensionMismatchError(
                f"{uid}: attention layer {layer} has shape T={w.shape[0]}, D={w.shape[1]}; expected T={T}, D=1")
        attention[int(layer)] = AttentionProfile(int(layer), w[:, 0])
    vad, _ = read_container(need("vad"))
    if vad.shape != (T, 1):
        raise DimensionMismatchError(
            f"{uid}: VAD has shape T={vad.shape[0]}, D={vad.shape[1]}; expected T={T}, D=1")
    img, _ = read_container(need("image"))
    if img.shape[0] != 1:
        raise DimensionMismatchError(f"{uid}: image embedding must have T=1, got T={img.shape[0]}")
    seg = None
    if record.get("segmentation"):
        seg = Segmentation.from_json(need("segmentation").read_text())
    tree = None
    if record.get("tree"):
        tree = parse_labeled_sexpr(need("tree").read_text())
    return Utterance(uid, FrameMatrix(frames, rate), attention, VadMask(vad[:, 0] > 0.5),
                     ImageEmbedding(img[0]), seg, tree)


def load_corpus(manifest_path) -> list[Utterance]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"missing manifest {manifest_path}")
    base = manifest_path.parent
    records = [json.loads(line) for line in manifest_path.read_text().splitlines() if line.strip()]
    if not records:
        log.warning("manifest %s is empty", manifest_path)
        return []
    ids = [r["id"] for r in records]
    if len(set(ids)) != len(ids):
        raise CorpusError("manifest ids are not unique")
    return [load_utterance(r, base) for r in records]


def write_corpus(utterances, out_dir) -> Path:
    """Write utterances with one file per structure; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utterances:
        rec = {"id": u.id, "features": f"{u.id}.feat", "vad": f"{u.id}.vad", "image": f"{u.id}.img"}
        write_container(out / rec["features"], u.frames.frames, u.frames.frame_rate)
        write_container(out / rec["vad"], u.vad.voiced.astype(np.float32), u.frames.frame_rate)
        write_container(out / rec["image"], u.image.vector[None, :], 0.0)
        rec["attention"] = {}
        for layer, att in sorted(u.attention.items()):
            name = f"{u.id}.att{layer}"
            write_container(out / name, att.weights, u.frames.frame_rate)
            rec["attention"][str(layer)] = name
        if u.segmentation is not None:
            rec["segmentation"] = f"{u.id}.seg.json"
            (out / rec["segmentation"]).write_text(u.segmentation.to_json())
        if u.ref_tree is not None:
            rec["tree"] = f"{u.id}.tree"
            (out / rec["tree"]).write_text(u.ref_tree.to_sexpr())
        lines.append(json.dumps(rec))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticGrammarConfig:
    vocab_size: int = 40
    # share of the vocabulary that is concrete
    concrete_fraction: float = 0.5
    embed_dim: int = 16
    image_dim: int = 24
    noise_scale: float = 0.3
    branching_bias: float = 0.5
    min_words: int = 4
    max_words: int = 10
    frame_rate: float = 50.0
    concrete_duration: tuple[float, float] = (0.24, 0.48)
    function_duration: tuple[float, float] = (0.06, 0.10)
    edge_silence: tuple[float, float] = (0.10, 0.20)
    pause_prob: float = 0.0
    pause_duration: tuple[float, float] = (0.06, 0.14)
    # per-layer log-normal attention noise; each utterance rescales a
    # layer's noise by exp(attention_jitter * N(0, 1))
    attention_layers: tuple[float, ...] = (0.35, 0.05, 0.15)
    attention_jitter: float = 0.0
    # attention at a concrete token's edges relative to its mid-token peak
    attention_edge: float = 0.8
    function_attention: float = 0.02
    image_noise: float = 0.05

    def __post_init__(self):
        for name in ("concrete_fraction", "branching_bias", "pause_prob", "attention_edge"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.embed_dim < 2 or self.image_dim < 2:
            raise ValueError("dimensions must be >= 2")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("bad utterance-length range")
        if not self.attention_layers:
            raise ValueError("need at least one attention layer")
        for name in ("concrete_duration", "function_duration", "edge_silence", "pause_duration",
                     "attention_layers"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticGrammarConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @property
    def n_concrete(self) -> int:
        return min(self.vocab_size, max(1, round(self.vocab_size * self.concrete_fraction)))


@dataclass
class Lexicon:
    latents: np.ndarray      # vocab x embed_dim, unit rows
    visuals: np.ndarray      # vocab x image_dim, zero rows for function tokens
    concrete: np.ndarray     # vocab bools


@dataclass
class SyntheticCorpus:
    utterances: list[Utterance]
    trees: list[ParseTree]
    segmentations: list[Segmentation]
    tokens: list[list[int]] = field(default_factory=list)
    lexicon: Lexicon | None = None

    def __iter__(self):
        return iter((self.utterances, self.trees, self.segmentations))

    def __len__(self):
        return len(self.utterances)

    def is_concrete(self, i: int) -> np.ndarray:
        return self.lexicon.concrete[self.tokens[i]]


def make_lexicon(config: SyntheticGrammarConfig, rng: np.random.Generator) -> Lexicon:
    V = config.vocab_size
    latents = rng.normal(size=(V, config.embed_dim))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    concrete = np.zeros(V, dtype=bool)
    concrete[: config.n_concrete] = True
    proj = rng.normal(size=(config.embed_dim, config.image_dim)) / math.sqrt(config.embed_dim)
    visuals = latents @ proj + 0.5 * rng.normal(size=(V, config.image_dim)) / math.sqrt(config.image_dim)
    visuals[~concrete] = 0.0
    return Lexicon(latents, visuals, concrete)


def _sample_shape(n: int, config: SyntheticGrammarConfig, rng) -> tuple:
    """Nested tuples: ``("leaf", slot)`` or ``(left, right)``.

    ``slot`` is "head" for leaves that end a phrase and "lead" for the single
    leaf of a right-branching expansion. Lead leaves get function tokens
    whenever the vocabulary has any, so concrete tokens cluster inside
    phrases and function tokens attach above them.
    """
    if n == 1:
        return ("leaf", "head")
    if rng.random() < config.branching_bias:
        return (("leaf", "lead"), _sample_shape(n - 1, config, rng))
    k = int(rng.integers(1, n))
    return (_sample_shape(k, config, rng), _sample_shape(n - k, config, rng))


def _frames_for(seconds: float, rate: float) -> int:
    return max(1, int(round(seconds * rate)))


def _synth_one(uid: str, config: SyntheticGrammarConfig, lex: Lexicon, rng):
    n = int(rng.integers(config.min_words, config.max_words + 1))
    shape = _sample_shape(n, config, rng)
    conc_ids = np.flatnonzero(lex.concrete)
    func_ids = np.flatnonzero(~lex.concrete)

    slots = []

    def collect(s):
        if s[0] == "leaf":
            slots.append(s[1])
        else:
            collect(s[0])
            collect(s[1])

    collect(shape)
    tokens = []
    for slot in slots:
        if slot == "lead" and len(func_ids):
            tokens.append(int(rng.choice(func_ids)))
        else:
            tokens.append(int(rng.choice(conc_ids)))

    rate = config.frame_rate
    D = config.embed_dim
    pieces, voiced, owner = [], [], []

    def emit(n_frames, mean, is_voiced, tok):
        pieces.append(np.broadcast_to(mean, (n_frames, D)) + config.noise_scale * rng.normal(size=(n_frames, D)))
        voiced.extend([is_voiced] * n_frames)
        owner.extend([tok] * n_frames)

    silence = np.zeros(D)
    emit(_frames_for(rng.uniform(*config.edge_silence), rate), silence, False, -1)
    bounds = []
    for i, tok in enumerate(tokens):
        if i > 0 and config.pause_prob > 0 and rng.random() < config.pause_prob:
            emit(_frames_for(rng.uniform(*config.pause_duration), rate), silence, False, -1)
        lo, hi = config.concrete_duration if lex.concrete[tok] else config.function_duration
        start = len(owner)
        emit(_frames_for(rng.uniform(lo, hi), rate), lex.latents[tok], True, i)
        bounds.append((start, len(owner)))
    emit(_frames_for(rng.uniform(*config.edge_silence), rate), silence, False, -1)
    frames = np.concatenate(pieces).astype(np.float32)
    T = frames.shape[0]
    owner = np.array(owner)

    attention = {}
    for layer, sigma in enumerate(config.attention_layers):
        w = np.full(T, config.function_attention * 0.25)
        for i, (a, b) in enumerate(bounds):
            if lex.concrete[tokens[i]]:
                amp = rng.uniform(0.6, 1.0)
                pos = (np.arange(b - a) + 0.5) / (b - a)
                edge = config.attention_edge
                w[a:b] = amp * (edge + (1.0 - edge) * np.sin(np.pi * pos))
            else:
                w[a:b] = config.function_attention
        if config.attention_jitter > 0:
            sigma = sigma * math.exp(config.attention_jitter * rng.normal())
        w = w * np.exp(sigma * rng.normal(size=T))
        attention[layer] = AttentionProfile(layer, w.astype(np.float32))

    seg = Segmentation(tuple(TimeSpan(a / rate, b / rate) for a, b in bounds))

    def build(s, i):
        if s[0] == "leaf":
            return ParseTree.leaf(i), i + 1
        left, j = build(s[0], i)
        right, k = build(s[1], j)
        return ParseTree.merge(left, right), k

    tree = build(shape, 0)[0].with_times(seg)
    labels = {}
    for node in tree.nodes():
        if node.is_leaf:
            continue
        toks = tokens[node.start:node.end]
        left, right = node.children
        if all(lex.concrete[t] for t in toks):
            labels[node.interval] = "NP"
        elif left.is_leaf and not lex.concrete[tokens[left.start]]:
            labels[node.interval] = "NP" if right.is_leaf else "PP"
        else:
            labels[node.interval] = "VP"
    ref = labeled_from_parse(tree, labels)

    conc = [t for t in tokens if lex.concrete[t]]
    img = lex.visuals[conc].sum(axis=0)
    img = img / np.linalg.norm(img) + config.image_noise * rng.normal(size=config.image_dim)
    utt = Utterance(uid, FrameMatrix(frames, rate), attention, VadMask(voiced),
                    ImageEmbedding(img.astype(np.float32)), seg, ref)
    return utt, tree, seg, tokens


def synth_corpus(config: SyntheticGrammarConfig, n_utterances: int, rng: np.random.Generator,
                 lexicon: Lexicon | None = None, prefix: str = "utt") -> SyntheticCorpus:
    """Sample a corpus from the toy grammar.

    Leaves reached through a right-branching expansion take function
    tokens (short, barely attended, invisible in the image); every other
    leaf is a concrete token. Passing ``lexicon`` re-uses the token
    inventory of another corpus, e.g. for held-out splits.
    """
    lex_rng, utt_rng = rng.spawn(2)
    lex = lexicon if lexicon is not None else make_lexicon(config, lex_rng)
    out = SyntheticCorpus([], [], [], [], lex)
    width = max(4, len(str(max(n_utterances - 1, 0))))
    for i, r in enumerate(utt_rng.spawn(n_utterances)):
        utt, tree, seg, toks = _synth_one(f"{prefix}{i:0{width}d}", config, lex, r)
        out.utterances.append(utt)
        out.trees.append(tree)
        out.segmentations.append(seg)
        out.tokens.append(toks)
    return out


def randomize_images(utterances, rng: np.random.Generator) -> list[Utterance]:
    """Replace every image vector with i.i.d. uniform noise (ablation)."""
    out = []
    for u in utterances:
        vec = rng.uniform(0.0, 1.0, size=u.image.vector.shape).astype(np.float32)
        out.append(Utterance(u.id, u.frames, u.attention, u.vad, ImageEmbedding(vec),
                             u.segmentation, u.ref_tree))
    return out


def with_segmentation(u: Utterance, seg: Segmentation) -> Utterance:
    return Utterance(u.id, u.frames, u.attention, u.vad, u.image, seg, u.ref_tree)
