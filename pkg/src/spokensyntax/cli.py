"""Command-line entry point: ``spokensyntax <command> ...``.

Interchange files are JSON lines keyed by utterance id:

* segmentations: ``{"id": ..., "segmentation": [[start, end], ...]}``
* trees: ``{"id": ..., "tree": "((0 1) 2)", "spans": [[start, end], ...]}``

Commands that take a directory read ``segmentations.jsonl`` or
``trees.jsonl`` inside it; a plain file path works too. An output path
without a ``.jsonl`` suffix is treated as a directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .core import AttentionProfile, HyperParams, ParseTree, Segmentation, VadMask, make_rng, \
    parse_from_labeled, parse_sexpr
from .evaluation import constituent_recall_counts, parseval_f1, saiou
from .ingest import SyntheticGrammarConfig, load_corpus, read_container, synth_corpus, write_corpus
from .mbr import mbr_select, miou_loss, tree_f1_loss, two_stage_select
from .parser import prepare, train
from .pooling import mean_pool
from .segmenter import SegmenterConfig, corpus_boundary_prf, insert_segments, segment_utterance, \
    threshold_segment
from .selftrain import SelfTrainConfig, fit_selftrain, predict, predict_mbr

log = logging.getLogger("spokensyntax")


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _jsonl_path(path, default_name: str) -> Path:
    p = Path(path)
    return p / default_name if p.is_dir() else p


def _out_path(path, default_name: str) -> Path:
    # an output path without a .jsonl suffix names a directory
    p = Path(path)
    return p / default_name if p.is_dir() or p.suffix != ".jsonl" else p


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_jsonl(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def read_segmentations(path) -> dict[str, Segmentation]:
    rows = read_jsonl(_jsonl_path(path, "segmentations.jsonl"))
    return {r["id"]: Segmentation.from_pairs(r["segmentation"]) for r in rows}


def write_segmentations(path, segs: dict[str, Segmentation]) -> Path:
    return write_jsonl(path, ({"id": k, "segmentation": s.to_pairs()} for k, s in segs.items()))


def tree_record(uid: str, tree: ParseTree, seg: Segmentation) -> dict:
    return {"id": uid, "tree": tree.to_sexpr(), "spans": seg.to_pairs()}


def read_trees(path) -> dict[str, ParseTree]:
    """Timed trees from a trees file, or gold trees from a corpus directory."""
    p = Path(path)
    if p.is_dir() and (p / "manifest.jsonl").exists() and not (p / "trees.jsonl").exists():
        out = {}
        for u in load_corpus(p / "manifest.jsonl"):
            if u.ref_tree is None:
                raise SystemExit(f"utterance {u.id} has no reference tree")
            out[u.id] = u.ref_tree
        return out
    rows = read_jsonl(_jsonl_path(p, "trees.jsonl"))
    return {r["id"]: parse_sexpr(r["tree"]).with_times(Segmentation.from_pairs(r["spans"])) for r in rows}


def _corpus_segs(utts, seg_path):
    if seg_path is not None:
        table = read_segmentations(seg_path)
        missing = [u.id for u in utts if u.id not in table]
        if missing:
            raise SystemExit(f"no segmentation for {len(missing)} utterance(s), e.g. {missing[0]}")
        return [table[u.id] for u in utts]
    if any(u.segmentation is None for u in utts):
        raise SystemExit("corpus has no oracle segmentations; pass --segmentations")
    return [u.segmentation for u in utts]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = SyntheticGrammarConfig()
    if args.config:
        cfg = SyntheticGrammarConfig.from_dict(json.loads(Path(args.config).read_text()))
    corpus = synth_corpus(cfg, args.n, make_rng(args.seed))
    manifest = write_corpus(corpus.utterances, args.out)
    print(manifest)


def _segment_grid(args) -> list[SegmenterConfig]:
    if args.grid:
        grid_def = json.loads(Path(args.grid).read_text())
        gaps = grid_def.get("gap", [None])
        return [SegmenterConfig(int(l), float(p), None if g is None else float(g),
                                float(grid_def.get("insert_len", args.insert_len)))
                for l in grid_def["layer"] for p in grid_def["p"] for g in gaps]
    return [SegmenterConfig(args.layer, args.p, args.gap, args.insert_len)]


def cmd_segment(args):
    if args.attention:
        att, rate = read_container(args.attention)
        seg = threshold_segment(AttentionProfile(args.layer, att[:, 0]), args.p, rate)
        if args.gap is not None:
            if not args.vad:
                raise SystemExit("--gap needs --vad in single-file mode")
            vad, _ = read_container(args.vad)
            seg = insert_segments(seg, VadMask(vad[:, 0] > 0.5), args.gap, args.insert_len, rate)
        text = json.dumps(seg.to_pairs())
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
        return
    if not args.corpus:
        raise SystemExit("pass --corpus or --attention")
    utts = load_corpus(args.corpus)
    grid = _segment_grid(args)
    if len(grid) == 1 and not args.grid:
        segs = {u.id: segment_utterance(u, grid[0]) for u in utts}
        out = write_segmentations(_out_path(args.out, "segmentations.jsonl") if args.out
                                  else "segmentations.jsonl", segs)
        _report_seg_f1(utts, segs)
        print(out)
        return
    if not args.out:
        raise SystemExit("--grid needs --out <dir>")
    out_dir = Path(args.out)
    for cfg in grid:
        segs = {u.id: segment_utterance(u, cfg) for u in utts}
        write_segmentations(out_dir / f"{cfg.label()}.jsonl", segs)
    print(out_dir)


def _report_seg_f1(utts, segs):
    pairs = [(segs[u.id], u.segmentation) for u in utts if u.segmentation is not None]
    if pairs:
        p, r, f = corpus_boundary_prf([a for a, _ in pairs], [b for _, b in pairs])
        log.info("boundary precision %.4f recall %.4f F1 %.4f", p, r, f)


def cmd_eval_seg(args):
    hyp = read_segmentations(args.pred)
    utts = {u.id: u for u in load_corpus(args.gold)}
    ids = [k for k in hyp if k in utts and utts[k].segmentation is not None]
    p, r, f = corpus_boundary_prf([hyp[k] for k in ids], [utts[k].segmentation for k in ids], tol=args.tol)
    report = {"precision": p, "recall": r, "f1": f, "n": len(ids)}
    print(json.dumps(report))
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")


def cmd_train(args):
    utts = load_corpus(args.corpus)
    hyper = HyperParams.load(args.hyper) if args.hyper else HyperParams()
    if args.steps is not None:
        hyper = hyper.replace(steps=args.steps)
    items = prepare(utts, _corpus_segs(utts, args.segmentations), hyper)
    ckpt_dir = Path(args.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    model = train(items, hyper, make_rng(hyper.seed), ckpt_every=args.ckpt_every, ckpt_dir=ckpt_dir)
    final = ckpt_dir / "final.ckpt"
    checkpoint.save_model(model, final)
    print(final)


def cmd_parse(args):
    model = checkpoint.load_model(args.ckpt)
    utts = load_corpus(args.corpus)
    segs = _corpus_segs(utts, args.segmentations)
    items = prepare(utts, segs, model.hyper)
    rng = make_rng(args.seed) if args.mode == "sample" else None
    records = [tree_record(it.utt.id, model.parse(it, args.mode, rng), it.seg) for it in items]
    out = _out_path(args.out, "trees.jsonl") if args.out else Path("trees.jsonl")
    print(write_jsonl(out, records))


def _tree_loss(a: ParseTree, b: ParseTree) -> float:
    # bracket F1 when both trees share a segmentation, otherwise SAIoU
    if a.n_leaves == b.n_leaves and a.span == b.span and \
            [n.span for n in a.nodes() if n.is_leaf] == [n.span for n in b.nodes() if n.is_leaf]:
        return tree_f1_loss(a, b)
    return 1.0 - saiou(a, b)


def cmd_mbr_select(args):
    cand_dir = Path(args.candidates)
    files = sorted(cand_dir.glob("*.jsonl"))
    if not files:
        raise SystemExit(f"no candidate files in {cand_dir}")
    reader = read_segmentations if args.kind == "seg" else read_trees
    tables = [reader(f) for f in files]
    ids = sorted(set.intersection(*(set(t) for t in tables)))
    n_val = len(ids) if args.validation is None else args.validation
    validation, rest = ids[:n_val], ids
    loss = miou_loss if args.kind == "seg" else _tree_loss
    chosen, outputs, tally = two_stage_select(lambda g, uid: tables[g][uid], list(range(len(files))),
                                              validation, rest, k=args.k, loss_fn=loss)
    records = []
    for uid, g, out in zip(rest, chosen, outputs):
        rec = {"id": uid, "candidate": files[g].stem}
        if args.kind == "seg":
            rec["segmentation"] = out.to_pairs()
        else:
            seg = Segmentation(tuple(n.span for n in out.nodes() if n.is_leaf))
            rec.update(tree_record(uid, _strip_times(out), seg))
        records.append(rec)
    default = "segmentations.jsonl" if args.kind == "seg" else "trees.jsonl"
    out_path = write_jsonl(_out_path(args.out, default) if args.out else Path("mbr-" + default), records)
    summary = {files[g].stem: int(tally[g]) for g in range(len(files)) if tally[g]}
    print(json.dumps({"out": str(out_path), "tally": summary}))


def _strip_times(tree: ParseTree) -> ParseTree:
    return ParseTree(tree.start, tree.end, tuple(_strip_times(c) for c in tree.children))


def _teacher_data(utts, teacher_path):
    rows = read_jsonl(_jsonl_path(teacher_path, "trees.jsonl"))
    by_id = {u.id: u for u in utts}
    data = []
    for r in rows:
        if r["id"] not in by_id:
            continue
        seg = Segmentation.from_pairs(r["spans"])
        emb = mean_pool(by_id[r["id"]].frames, seg).vectors
        data.append((r["id"], seg, emb, parse_sexpr(r["tree"])))
    if not data:
        raise SystemExit("no teacher tree matches an utterance of the corpus")
    return data


def cmd_self_train(args):
    utts = load_corpus(args.corpus)
    data = _teacher_data(utts, args.teacher_trees)
    cfg = SelfTrainConfig()
    if args.epochs is not None:
        cfg = SelfTrainConfig(epochs=args.epochs, seed=cfg.seed)
    dim = data[0][2].shape[1]
    result = fit_selftrain([(e, t) for _, _, e, t in data], dim, cfg, make_rng(args.seed))
    ckpt_dir = Path(args.ckpt_dir)
    for k, snap in enumerate(result.snapshots):
        checkpoint.save(ckpt_dir / f"chart{k:03d}.ckpt", snap, {"kind": "chart", "config": cfg.to_dict()})
    records = []
    for uid, seg, emb, _ in data:
        if args.select == "mbr":
            tree = predict_mbr([emb] * len(result.snapshots), result.snapshots)
        else:
            tree = predict(emb, result.snapshots[-1])
        records.append(tree_record(uid, tree, seg))
    out = _out_path(args.out, "trees.jsonl") if args.out else ckpt_dir / "trees.jsonl"
    print(write_jsonl(out, records))


def cmd_eval_parse(args):
    pred = read_trees(args.pred)
    gold = read_trees(args.gold)
    ids = [k for k in pred if k in gold]
    if not ids:
        raise SystemExit("no utterance id is shared by --pred and --gold")
    per = {}
    if args.metric == "recall":
        totals: dict[str, list[int]] = {}
        for k in ids:
            counts = constituent_recall_counts(pred[k], gold[k], tol=args.tol)
            per[k] = {lab: (h / t if t else None) for lab, (h, t) in counts.items()}
            for lab, (h, t) in counts.items():
                acc = totals.setdefault(lab, [0, 0])
                acc[0] += h
                acc[1] += t
        mean = {lab: (h / t if t else None) for lab, (h, t) in totals.items()}
    else:
        for k in ids:
            g = gold[k]
            if args.metric == "parseval":
                g = g if isinstance(g, ParseTree) else parse_from_labeled(g)
                try:
                    per[k] = parseval_f1(pred[k], g)[2]
                except ValueError as err:
                    raise SystemExit(f"{k}: {err}") from None
            else:
                per[k] = saiou(pred[k], g)
        mean = float(np.mean(list(per.values())))
    report = {"metric": args.metric, "n": len(ids), "mean": mean, "per_utterance": per}
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps({"metric": args.metric, "n": len(ids), "mean": mean}))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spokensyntax", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--config", help="SyntheticGrammarConfig as JSON")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="attention-threshold word segmentation")
    p.add_argument("--corpus", help="manifest.jsonl")
    p.add_argument("--attention", help="single attention container instead of a corpus")
    p.add_argument("--vad", help="VAD container (single-file mode)")
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--p", type=float, default=80.0)
    p.add_argument("--gap", type=float, default=None, help="insertion gap s in seconds")
    p.add_argument("--insert-len", type=float, default=0.06)
    p.add_argument("--grid", help="JSON {layer: [...], p: [...], gap: [...]} to write one file per setting")
    p.add_argument("--out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval-seg", help="boundary precision/recall/F1 against oracle segmentations")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True, help="manifest.jsonl")
    p.add_argument("--tol", type=float, default=0.02)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("train", help="train the grounded parser")
    p.add_argument("--corpus", required=True)
    p.add_argument("--hyper", help="HyperParams as JSON")
    p.add_argument("--segmentations", help="defaults to the corpus' oracle segmentations")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--ckpt-every", type=int, default=500)
    p.add_argument("--steps", type=int, default=None, help="overrides the step budget in --hyper")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse a corpus with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--segmentations")
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--seed", type=int, default=0, help="RNG seed for --mode sample")
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("mbr-select", help="two-stage consensus selection over candidate outputs")
    p.add_argument("--kind", choices=["seg", "tree"], required=True)
    p.add_argument("--candidates", required=True, help="directory with one .jsonl per candidate system")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--validation", type=int, default=None,
                   help="number of utterances (sorted by id) used for the first-stage tally")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mbr_select)

    p = sub.add_parser("self-train", help="fit a span-chart parser to teacher trees")
    p.add_argument("--teacher-trees", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--select", choices=["last", "mbr"], default="mbr")
    p.add_argument("--out")
    p.set_defaults(func=cmd_self_train)

    p = sub.add_parser("eval-parse", help="score predicted trees against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True, help="corpus directory or trees file")
    p.add_argument("--metric", choices=["parseval", "saiou", "recall"], default="saiou")
    p.add_argument("--tol", type=float, default=0.02, help="endpoint tolerance in seconds for --metric recall")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_parse)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
