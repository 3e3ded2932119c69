"""Command-line entry point: ``treenav <command> ...``.

Exit codes: 0 success, 1 invalid input (bad flag, config or data file),
2 failure while running.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .baselines import (
    CorpusIndex,
    doc_tfidf_select,
    ensemble_answer,
    ensemble_threshold,
    global_tfidf_select,
    random_para,
    random_walk,
    read_top,
)
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusSpec, generate_corpus
from .doctree import (
    DocTreeError,
    QASample,
    assemble_samples,
    fao_histogram,
    load_dataset,
    load_documents,
    read_jsonl,
    save_dataset,
    split_samples,
    write_jsonl,
)
from .env import NavEnv
from .evaluation import outcomes_from_records, read_traces, report, write_report, write_traces
from .qnet import CachedQ, load_checkpoint
from .reader import ExtractionContext, make_extractor
from .rng import fork
from .train import TrainConfig, TrainingDiverged, run_policy, train

log = logging.getLogger("treenav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers


def data_hash(data_dir: Path | str) -> str:
    h = hashlib.sha256()
    for name in ("docs.jsonl", "qa.jsonl"):
        p = Path(data_dir) / name
        if p.exists():
            h.update(name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, config: Any = None, data: Optional[Path] = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"},
        "config": config,
        "data_hash": data_hash(data) if data is not None else None,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_split(data: Path, split: str) -> list[QASample]:
    if not (data / "docs.jsonl").exists() or not (data / "qa.jsonl").exists():
        raise UsageError(f"{data} is not a dataset directory (docs.jsonl and qa.jsonl expected)")
    samples = split_samples(load_dataset(data), split)
    if not samples:
        raise UsageError(f"split {split!r} of {data} is empty")
    return samples


def _extractor(cfg: RunConfig):
    r = cfg.reader
    return make_extractor(r.kind, path=r.path, top_probability=r.top_probability, max_span_len=r.max_span_len)


def _answer_dict(pred) -> dict[str, Any]:
    return pred.to_dict() if pred is not None else None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    docs = load_documents(args.docs)
    samples, rejections = assemble_samples(docs, read_jsonl(args.qa), keep_preface=args.keep_preface)
    save_dataset(args.out, samples)
    write_jsonl(args.out / "rejections.jsonl", ({"qid": r.qid, "doc_id": r.doc_id, "reason": r.reason} for r in rejections))
    write_manifest(args.out, "ingest", args, data=args.out)
    print(json.dumps({"samples": len(samples), "rejections": len(rejections)}))
    return 0


def _read_mapping(path: Path) -> dict:
    import yaml

    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: expected a mapping")
    return raw


def cmd_gen_corpus(args) -> int:
    spec = CorpusSpec.from_dict(_read_mapping(args.spec)) if args.spec else CorpusSpec()
    samples = generate_corpus(spec)
    save_dataset(args.out, samples)
    with open(args.out / "spec.json", "w") as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(args.out, "gen-corpus", args, config=spec.to_dict(), data=args.out)
    hist = fao_histogram(samples)
    print(json.dumps({"samples": len(samples), "documents": hist.total, "fao_median": hist.median}))
    return 0


def cmd_stats(args) -> int:
    samples = _load_split(args.data, args.split)
    hist = fao_histogram(samples)
    args.fao_csv.parent.mkdir(parents=True, exist_ok=True)
    hist.to_csv(args.fao_csv)
    write_manifest(args.fao_csv.parent, "stats", args, data=args.data)
    n_docs = sum(len(s.documents) for s in samples)
    print(json.dumps({"questions": len(samples), "documents": n_docs, "fao_median": hist.median}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.mode:
        overrides["mode"] = args.mode
    if args.coupled:
        overrides["coupled"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    try:
        tcfg = TrainConfig(**{**cfg.train.to_dict(), **overrides})
    except ValueError as e:
        raise ConfigError(f"train.{e}") from None
    cfg = RunConfig(cfg.preset, tcfg, cfg.encoder, cfg.reader, cfg.baselines)
    samples = _load_split(args.data, args.split)
    write_manifest(args.out, "train", args, config=cfg.to_dict(), data=args.data)
    res = train(tcfg, samples, cfg.encoder, _extractor(cfg), out_dir=args.out)
    print(json.dumps({"steps": res.steps, "episodes": res.episodes, "updates": res.updates, "seconds": round(res.seconds, 1)}))
    return 0


def _navigate_records(args, cfg: RunConfig, samples: Sequence[QASample]) -> list[dict[str, Any]]:
    extractor = _extractor(cfg)
    budget = args.budget or cfg.train.eval_budget
    records = []
    if args.policy == "checkpoint":
        if not args.checkpoint:
            raise UsageError("--policy checkpoint requires --checkpoint FILE")
        ck = load_checkpoint(args.checkpoint)
        coupled = bool(ck.config.get("train", {}).get("coupled", False))
        qfn = CachedQ(ck.online)
        for s in samples:
            for d in s.documents:
                env = NavEnv(d, s.question_tokens, extractor, budget, coupled, s.question_id, s.answer_aliases)
                ep = run_policy(env, qfn, ck.vocab, budget)
                records.append({"qid": s.question_id, "doc_id": d.doc_id, "policy": "checkpoint", "steps": ep.trace})
    elif args.policy == "random":
        rng = fork(args.seed, "navigate.random")
        for s in samples:
            for d in s.documents:
                env = NavEnv(d, s.question_tokens, extractor, budget, False, s.question_id, s.answer_aliases)
                random_walk(env, rng, budget)
                records.append({"qid": s.question_id, "doc_id": d.doc_id, "policy": "random", "steps": env.episode.trace})
    else:
        for s in samples:
            for d in s.documents:
                sel = doc_tfidf_select(s.question_tokens, d)
                env = NavEnv(d, s.question_tokens, extractor, budget, False, s.question_id, s.answer_aliases)
                pred = env.extract(sel.node)
                records.append(
                    {"qid": s.question_id, "doc_id": d.doc_id, "policy": "tfidf", "node_id": sel.node,
                     "fallback": sel.fallback, "answer": _answer_dict(pred)}
                )
    return records


def cmd_navigate(args) -> int:
    cfg = load_config(args.config)
    samples = _load_split(args.data, args.split)
    write_manifest(args.trace.parent, "navigate", args, config=cfg.to_dict(), data=args.data)
    records = _navigate_records(args, cfg, samples)
    write_traces(args.trace, records)
    print(json.dumps({"episodes": len(records), "trace": str(args.trace)}))
    return 0


def cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    samples = _load_split(args.data, args.split)
    extractor = _extractor(cfg)
    write_manifest(args.out.parent, "baseline", args, config=cfg.to_dict(), data=args.data)
    rng = fork(args.seed, f"baseline.{args.kind}")
    corpus = CorpusIndex(d for s in load_dataset(args.data) for d in s.documents) if args.kind == "tfidf" else None
    agent = {}
    if args.ensemble:
        if not args.agent_trace:
            raise UsageError("--ensemble requires --agent-trace FILE")
        for r in read_traces(args.agent_trace):
            agent[(r["qid"], r["doc_id"])] = r
    records = []
    for s in samples:
        for d in s.documents:
            env = NavEnv(d, s.question_tokens, extractor, cfg.train.eval_budget, False, s.question_id, s.answer_aliases)
            rec: dict[str, Any] = {"qid": s.question_id, "doc_id": d.doc_id, "policy": args.kind}
            if args.kind == "randomwalk":
                random_walk(env, rng, cfg.train.eval_budget)
                rec["steps"] = env.episode.trace
            elif args.kind == "readtop":
                pred = read_top(d, s.question_tokens, extractor, cfg.baselines.readtop_tokens,
                                ExtractionContext(s.question_id, d.doc_id, -1, s.answer_aliases))
                rec["node_id"] = 0
                rec["answer"] = _answer_dict(pred)
            else:
                if args.kind == "randompara":
                    node = random_para(d, rng)
                elif args.kind == "doctfidf":
                    node = doc_tfidf_select(s.question_tokens, d).node
                else:
                    node = global_tfidf_select(s.question_tokens, d, corpus).node
                rec["node_id"] = node
                rec["answer"] = _answer_dict(env.extract(node))
            if args.ensemble:
                a = agent.get((s.question_id, d.doc_id))
                if a is None:
                    raise UsageError(f"agent trace has no episode for {s.question_id}/{d.doc_id}")
                a_node = d[int(a["steps"][-1]["node_id"])] if a.get("steps") else d[int(a["node_id"])]
                a_ans = (a["steps"][-1].get("answer") if a.get("steps") else a.get("answer")) or {}
                if args.ensemble == "threshold":
                    b_node = d[rec.get("node_id", a_node.id)] if "node_id" in rec else d[rec["steps"][-1]["node_id"]]
                    chosen = ensemble_threshold(a_node, b_node, args.l)
                    rec = {"qid": s.question_id, "doc_id": d.doc_id, "policy": f"ensemble-threshold-{args.kind}",
                           "node_id": chosen.id, "answer": _answer_dict(env.extract(chosen.id))}
                else:
                    b_ans = (rec.get("answer") or (rec["steps"][-1].get("answer") if rec.get("steps") else None)) or {}
                    pairs_a = [(a_ans["answer"], a_ans["probability"])] if a_ans.get("answer") else []
                    pairs_b = [(b_ans["answer"], b_ans["probability"])] if b_ans.get("answer") else []
                    rec = {"qid": s.question_id, "doc_id": d.doc_id, "policy": f"ensemble-answer-{args.kind}",
                           "node_id": a_node.id, "agent_answer": a_ans or None, "other_answer": b_ans or None}
                    rec["combined"] = {"agent": pairs_a, "other": pairs_b}
                    if pairs_a or pairs_b:
                        ans = ensemble_answer(pairs_a, pairs_b)
                        mass = sum(p for x, p in pairs_a + pairs_b if x == ans)
                        rec["answer"] = {"answer": ans, "probability": mass}
            records.append(rec)
    write_traces(args.out, records)
    print(json.dumps({"episodes": len(records), "out": str(args.out)}))
    return 0


def cmd_eval(args) -> int:
    samples = load_dataset(args.data)
    trees = {d.doc_id: d for s in samples for d in s.documents}
    paths = sorted(args.traces.glob("*.jsonl")) if args.traces.is_dir() else [args.traces]
    if not paths:
        raise UsageError(f"no trace files under {args.traces}")
    write_manifest(args.report.parent, "eval", args, data=args.data)
    reports = {}
    for p in paths:
        outcomes = outcomes_from_records(read_traces(p), trees)
        if not outcomes:
            continue
        rep = report(outcomes, samples)
        reports[p.stem] = rep
        write_report(args.report.with_name(f"{args.report.stem}.{p.stem}.json"), rep, outcomes, samples)
    with open(args.report, "w") as f:
        json.dump({"methods": reports}, f, indent=2, sort_keys=True)
        f.write("\n")
    summary = {k: {"navigation_accuracy": v["navigation_accuracy"], "em": v["em"], "f1": v["f1"]} for k, v in reports.items()}
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treenav", description="Document-tree navigation with deep Q-learning.")
    p.add_argument("--version", action="version", version=f"treenav {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("ingest", help="build a dataset directory from document and question files")
    s.add_argument("--docs", type=Path, required=True)
    s.add_argument("--qa", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--keep-preface", action="store_true")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("gen-corpus", help="generate a synthetic dataset")
    s.add_argument("--spec", type=Path, help="YAML/JSON corpus spec (defaults if omitted)")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_gen_corpus)

    s = sub.add_parser("stats", help="FAO histogram of a dataset")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--fao-csv", type=Path, required=True)
    s.add_argument("--split", default="all", choices=["train", "dev", "test", "all"])
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", help="train a DocQN or DQN agent")
    s.add_argument("--config", type=Path)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--mode", choices=["dqn", "docqn"])
    s.add_argument("--coupled", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, help="override train.steps")
    s.add_argument("--split", default="train", choices=["train", "dev", "test", "all"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("navigate", help="run a policy and write per-episode traces")
    s.add_argument("--config", type=Path)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--policy", choices=["checkpoint", "random", "tfidf"], required=True)
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--trace", type=Path, required=True)
    s.add_argument("--split", default="dev", choices=["train", "dev", "test", "all"])
    s.add_argument("--budget", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_navigate)

    s = sub.add_parser("baseline", help="run a non-learned baseline")
    s.add_argument("--config", type=Path)
    s.add_argument("--kind", choices=["randomwalk", "randompara", "tfidf", "doctfidf", "readtop"], required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--split", default="dev", choices=["train", "dev", "test", "all"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ensemble", choices=["threshold", "answer"])
    s.add_argument("--l", type=float, default=5, help="threshold for --ensemble threshold ('inf' keeps the agent)")
    s.add_argument("--agent-trace", type=Path, help="agent trace file for ensembles")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", help="metrics report from trace files")
    s.add_argument("--traces", type=Path, required=True, help="trace file or directory of *.jsonl traces")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--report", type=Path, required=True)
    s.set_defaults(func=cmd_eval)
    return p


def _setup_logging() -> None:
    level = os.environ.get("TREENAV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DocTreeError) as e:
        print(f"treenav {args.command}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"treenav {args.command}: {e.filename}: no such file", file=sys.stderr)
        return 1
    except TrainingDiverged as e:
        print(f"treenav {args.command}: {e} (checkpoint: {e.checkpoint})", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - top-level reporter
        log.debug("failure", exc_info=True)
        print(f"treenav {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
