"""Batch command-line entry points.

Every command reads JSON-lines records, is deterministic under ``--seed``
and writes UTF-8 files with LF line endings. Numbers in reports carry six
significant digits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, synthetic
from .autograd import ConfigurationError
from .checkpoint import load_checkpoint, save_checkpoint
from .eup import collect_label_pairs, eup_scores, eup_weighted_f1, read_eup_table, write_eup_table
from .features import item_label
from .metrics import bootstrap_compare, compute_f1, segment_head_torso_tail
from .model import FRAMEWORKS, ModelConfig, default_threads, predict_class
from .reachability import fit_node_proportions, item_reachability, taxonomy_children
from .records import RecordError, ingest_items, ingest_sessions, join_path, split_path, write_jsonl
from .trainer import TrainConfig, train

log = logging.getLogger("mohe")


class UsageError(Exception):
    pass


def sig6(obj):
    """Round every float in a JSON-like structure to six significant digits."""
    if isinstance(obj, float):
        return float(f"{obj:.6g}")
    if isinstance(obj, dict):
        return {k: sig6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sig6(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sig6(obj), fh, indent=1, ensure_ascii=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def read_predictions(path) -> dict[str, str]:
    """id -> predicted class label from a prediction file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if not isinstance(rec, dict) or not isinstance(rec.get("id"), str) \
                    or not isinstance(rec.get("class"), str):
                raise RecordError([(lineno, "prediction needs string fields 'id' and 'class'")], path)
            out[rec["id"]] = rec["class"]
    return out


# ---------------------------------------------------------------------------
# train / predict
# ---------------------------------------------------------------------------

def build_model_config(raw: dict, framework: str | None, num_classes: int) -> ModelConfig:
    raw = dict(raw)
    if framework is not None:
        raw["framework"] = framework
    raw.setdefault("framework", "mohe2")
    if "threads" not in raw:
        raw["threads"] = default_threads(raw.pop("dataset", "ichiba"), raw.pop("thread_count", 7))
    raw.pop("dataset", None)
    raw.pop("thread_count", None)
    raw["num_classes"] = num_classes
    return ModelConfig.from_dict(raw)


def cmd_train(args) -> int:
    _require(args, "items", "out")
    cfg = read_json(args.config) if args.config else {}
    raw_model = cfg.get("model", {})
    fw = args.framework or raw_model.get("framework", "mohe2")
    if fw not in FRAMEWORKS:
        raise UsageError(f"unknown framework {fw!r}; valid names: {', '.join(FRAMEWORKS)}")
    level = args.level if args.level is not None else cfg.get("label_level")
    items = ingest_items(args.items, args.error_budget)
    valid = ingest_items(args.valid, args.error_budget) if args.valid else None
    train_cfg = TrainConfig(**{**cfg.get("train", {}), "seed": args.seed,
                               **({"epochs": args.epochs} if args.epochs else {})})
    num_classes = len({item_label(it, level) for it in items})
    config = build_model_config(raw_model, args.framework, num_classes)
    model, featurizer, history = train(config, items, train_cfg, valid, level)
    out = Path(args.out)
    save_checkpoint(out, model, featurizer)
    history.write(out / "history.jsonl")
    print(f"trained {config.framework} on {len(items)} items, {featurizer.num_classes} classes; "
          f"final loss {history.losses[-1]:.6g}; checkpoint in {out}")
    return 0


def cmd_predict(args) -> int:
    _require(args, "model", "items", "out")
    model, featurizer = load_checkpoint(args.model)
    items = ingest_items(args.items, args.error_budget)
    probs = model.predict_proba(featurizer.encode_items(items, model.input_specs()))
    cls = predict_class(probs)
    write_jsonl(args.out, [{"id": it.id, "class": featurizer.labels[c], "probability": float(f"{probs[i, c]:.6g}")}
                           for i, (it, c) in enumerate(zip(items, cls))])
    print(f"wrote {len(items)} predictions to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _aligned(items, preds: dict[str, str], path) -> list[str]:
    missing = [it.id for it in items if it.id not in preds]
    if missing:
        raise UsageError(f"{path}: no prediction for {len(missing)} item(s), e.g. {missing[0]!r}")
    return [preds[it.id] for it in items]


def segment_table(gold: list[str], pred: list[str]) -> list[dict]:
    """Macro-F1 of the head, torso and tail label segments of the gold set."""
    hist: dict[str, int] = {}
    for g in gold:
        hist[g] = hist.get(g, 0) + 1
    seg = segment_head_torso_tail(hist)
    labels = sorted(set(gold) | set(pred))
    index = {lab: i for i, lab in enumerate(labels)}
    report = compute_f1([index[p] for p in pred], [index[g] for g in gold], len(labels))
    rows = []
    for name in ("head", "torso", "tail"):
        members = seg.members(name)
        f1 = [report.f1[index[m]] for m in members]
        rows.append({"segment": name, "nodes": len(members), "items": sum(hist[m] for m in members),
                     "macro_f1": float(np.mean(f1)) if f1 else None})
    return rows


def cmd_eval(args) -> int:
    _require(args, "items", "predictions", "out")
    items = ingest_items(args.items, args.error_budget)
    gold = [item_label(it, args.level) for it in items]
    pred = _aligned(items, read_predictions(args.predictions), args.predictions)
    if args.level is not None:
        pred = [join_path(split_path(p)[:args.level]) for p in pred]
    baseline = None
    if args.baseline:
        baseline = _aligned(items, read_predictions(args.baseline), args.baseline)
        if args.level is not None:
            baseline = [join_path(split_path(p)[:args.level]) for p in baseline]
    labels = sorted(set(gold) | set(pred) | set(baseline or []))
    index = {lab: i for i, lab in enumerate(labels)}
    g = np.array([index[x] for x in gold], dtype=np.int64)
    p = np.array([index[x] for x in pred], dtype=np.int64)
    report = {"items": len(items), **compute_f1(p, g, len(labels)).to_json(labels),
              "segments": segment_table(gold, pred) if items else []}
    if baseline is not None:
        b = np.array([index[x] for x in baseline], dtype=np.int64)
        report["bootstrap"] = bootstrap_compare(p, b, g, resamples=args.resamples, seed=args.seed).to_json()
    write_json(args.out, report)
    print(f"micro_f1 {report['micro_f1']:.6g} macro_f1 {report['macro_f1']:.6g}")
    if baseline is not None:
        bs = report["bootstrap"]
        print(f"vs baseline: delta {bs['delta']:.6g} significant {bs['significant']}")
    return 0


# ---------------------------------------------------------------------------
# eup / reach
# ---------------------------------------------------------------------------

def cmd_eup(args) -> int:
    _require(args, "sessions", "items", "provided", "level", "out")
    sessions = ingest_sessions(args.sessions, args.error_budget)
    catalog = {it.id: it.genre_path for it in ingest_items(args.items, args.error_budget)}
    provided = {it.id: it.genre_path for it in ingest_items(args.provided, args.error_budget)}
    table = eup_scores(collect_label_pairs(sessions, catalog, provided, args.level))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eup_table(out / "eup.tsv", table)
    summary = {"level": args.level, "genres": len(table), "pairs": sum(e.pair_count for e in table.values())}
    if args.predictions:
        preds = read_predictions(args.predictions)
        ids = [i for i in catalog if i in preds]
        gold = [catalog[i][:args.level] for i in ids]
        pred = [split_path(preds[i])[:args.level] for i in ids]
        labels = sorted(set(gold) | set(pred) | set(table))
        index = {lab: k for k, lab in enumerate(labels)}
        rep = compute_f1([index[x] for x in pred], [index[x] for x in gold], len(labels))
        summary["weighted_f1"] = eup_weighted_f1({lab: float(rep.f1[index[lab]]) for lab in labels}, table)
    write_json(out / "summary.json", summary)
    print(json.dumps(sig6(summary)))
    return 0


def cmd_reach(args) -> int:
    _require(args, "items", "heldout", "predictions", "eup", "level", "out")
    train_items = ingest_items(args.items, args.error_budget)
    heldout = ingest_items(args.heldout, args.error_budget)
    preds = {k: split_path(v) for k, v in read_predictions(args.predictions).items()}
    eup = read_eup_table(args.eup)
    taxonomy = taxonomy_children([*train_items, *heldout], args.level)
    props = fit_node_proportions(train_items, args.level, args.seed, taxonomy)
    report = item_reachability(heldout, preds, eup, props, args.level)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_table(out / "reachability.tsv")
    write_json(out / "proportions.json", [
        {"node": join_path(p.node), "children": [join_path(c) for c in p.children],
         "theta": p.theta.tolist(), "alpha": p.alpha.tolist()} for p in props.values()])
    summary = {"level": args.level, "scored": report.count, "mean_score": report.mean_score,
               "skipped_interacted": report.skipped_interacted, "skipped_no_eup": report.skipped_no_eup,
               "skipped_shallow": report.skipped_shallow}
    write_json(out / "summary.json", summary)
    print(json.dumps(sig6(summary)))
    return 0


# ---------------------------------------------------------------------------
# gradcheck / synth
# ---------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    suite = gradcheck.run_suite(seed=args.seed)
    for c in suite.checks:
        print(f"{c.name:24s} points {c.points:4d} max_rel_error {c.max_rel_error:.6g}")
    ok = suite.passed()
    print(f"{'PASS' if ok else 'FAIL'}: {suite.points} points, max relative error "
          f"{suite.max_rel_error:.6g} (tolerance {gradcheck.TOLERANCE:g})")
    return 0 if ok else 1


def cmd_synth(args) -> int:
    _require(args, "out")
    out = Path(args.out)
    if args.kind == "keyword":
        items = synthetic.keyword_catalog(seed=args.seed, with_shop=True)
        train_items, test_items = synthetic.split(items, 0.2, args.seed)
        write_jsonl(out / "train.jsonl", train_items)
        write_jsonl(out / "test.jsonl", test_items)
    elif args.kind == "taxonomy":
        items = synthetic.taxonomy_items(seed=args.seed)
        train_items, test_items = synthetic.split(items, 0.2, args.seed)
        write_jsonl(out / "train.jsonl", train_items)
        write_jsonl(out / "heldout.jsonl", test_items)
    else:
        sessions, catalog, provided = synthetic.eup_fixture()
        write_jsonl(out / "sessions.jsonl", sessions)
        write_jsonl(out / "catalog.jsonl", [{"id": k, "title": k, "genre_path": list(v)} for k, v in catalog.items()])
        write_jsonl(out / "provided.jsonl", [{"id": k, "title": k, "genre_path": list(v)}
                                             for k, v in provided.items()])
    print(f"wrote {args.kind} data to {out}")
    return 0


COMMANDS = {
    "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "eup": cmd_eup,
    "reach": cmd_reach, "gradcheck": cmd_gradcheck, "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mohe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        p.add_argument("--out")
        p.add_argument("--error-budget", type=int, default=0,
                       help="malformed input lines tolerated before aborting")
        return p

    p = common(sub.add_parser("train", help="fit a model and write a checkpoint directory"))
    p.add_argument("--config")
    p.add_argument("--items")
    p.add_argument("--valid")
    p.add_argument("--framework", choices=FRAMEWORKS)
    p.add_argument("--level", type=int)
    p.add_argument("--epochs", type=int)

    p = common(sub.add_parser("predict", help="write id/class/probability records"))
    p.add_argument("--model")
    p.add_argument("--items")

    p = common(sub.add_parser("eval", help="F1 report, segment table and optional bootstrap"))
    p.add_argument("--items")
    p.add_argument("--predictions")
    p.add_argument("--baseline")
    p.add_argument("--level", type=int)
    p.add_argument("--resamples", type=int, default=10000)

    p = common(sub.add_parser("eup", help="EuP table and EuP-weighted F1 from sessions"))
    p.add_argument("--sessions")
    p.add_argument("--items", help="catalog labels")
    p.add_argument("--provided", help="merchant-provided labels")
    p.add_argument("--predictions")
    p.add_argument("--level", type=int)

    p = common(sub.add_parser("reach", help="item reachability of non-purchased held-out items"))
    p.add_argument("--items", help="training items for child proportions")
    p.add_argument("--heldout")
    p.add_argument("--predictions")
    p.add_argument("--eup")
    p.add_argument("--level", type=int)

    common(sub.add_parser("gradcheck", help="finite-difference gradient suite"))

    p = common(sub.add_parser("synth", help="write seeded synthetic data"))
    p.add_argument("--kind", choices=("keyword", "taxonomy", "eup"), default="keyword")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except ConfigurationError as exc:
        print(f"mohe {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (RecordError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"mohe {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
