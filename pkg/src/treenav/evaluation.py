"""Navigation outcomes and the metrics computed from them.

Everything here is a pure function of episode traces (as written by the
``navigate`` and ``baseline`` commands) plus the dataset, so reports can be
recomputed bit-exactly from stored files.

Token consumption counts, per touched non-sentence node, the largest amount
of its label that the agent saw: the 20-token prefix for every node on the
root path of a visited node, the whole label for every node the extractor
read. Sentence prefixes are charged to their paragraph. The sum is capped
per node by the label length, so the fraction of the document never
exceeds 1.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .doctree import DocTree, Histogram, NodeKind, QASample
from .env import NODE_PREFIX_TOKENS
from .reader import aggregate_answer, score_em_f1


@dataclass(frozen=True)
class NavOutcome:
    qid: str
    doc_id: str
    stop_index: int
    stop_kind: str
    correct: bool
    path_length: int
    answer_action_count: int = 0
    tokens_consumed: int = 0
    token_fraction: float = 0.0
    final_answer: Optional[str] = None
    answer_probability: float = 0.0
    fao: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NavOutcome":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def tokens_consumed(tree: DocTree, visited: Iterable[int], read: Iterable[int] = ()) -> int:
    seen: dict[int, int] = defaultdict(int)
    sentence_extra: dict[int, int] = defaultdict(int)
    for u in set(visited):
        node = tree[u]
        if node.kind == NodeKind.SENTENCE:
            sentence_extra[node.parent] += min(NODE_PREFIX_TOKENS, len(node.label_tokens))
            u = node.parent
        while u is not None:
            n = tree[u]
            seen[u] = max(seen[u], min(NODE_PREFIX_TOKENS, len(n.label_tokens)))
            u = n.parent
    for p, extra in sentence_extra.items():
        seen[p] = min(len(tree[p].label_tokens), seen[p] + extra)
    for u in set(read):
        r = tree.reading_node(u)
        seen[r.id] = len(r.label_tokens)
    return sum(seen.values())


def outcome_from_trace(
    tree: DocTree,
    qid: str,
    steps: Sequence[Mapping[str, Any]],
) -> NavOutcome:
    """Outcome of one episode from its per-step trace (see ``NavEnv.step``)."""
    if not steps:
        raise ValueError(f"empty trace for {qid}/{tree.doc_id}")
    last = steps[-1]
    stop = int(last["node_id"])
    visited = [int(s["node_id"]) for s in steps]
    read = [int(s["node_id"]) for s in steps if s["action"] in ("ANSWER", "STOP")]
    consumed = tokens_consumed(tree, visited, read)
    ans = last.get("answer") or {}
    return NavOutcome(
        qid=qid,
        doc_id=tree.doc_id,
        stop_index=tree[stop].index,
        stop_kind=tree[stop].kind.name.lower(),
        correct=tree.has_answer_at(stop),
        path_length=len(steps),
        answer_action_count=sum(s["action"] == "ANSWER" for s in steps),
        tokens_consumed=consumed,
        token_fraction=consumed / tree.token_count if tree.token_count else 0.0,
        final_answer=ans.get("answer"),
        answer_probability=float(ans.get("probability", 0.0)),
        fao=tree.fao,
    )


def outcome_at_node(
    tree: DocTree,
    qid: str,
    node_id: int,
    answer: Optional[str] = None,
    probability: float = 0.0,
    read: bool = True,
) -> NavOutcome:
    """Outcome for a method that picks a node directly (tf-idf, RandomPara)."""
    consumed = tokens_consumed(tree, [node_id], [node_id] if read else [])
    return NavOutcome(
        qid=qid,
        doc_id=tree.doc_id,
        stop_index=tree[node_id].index,
        stop_kind=tree[node_id].kind.name.lower(),
        correct=tree.has_answer_at(node_id),
        path_length=0,
        tokens_consumed=consumed,
        token_fraction=consumed / tree.token_count if tree.token_count else 0.0,
        final_answer=answer,
        answer_probability=probability,
        fao=tree.fao,
    )


# ---------------------------------------------------------------------------
# metrics


def navigation_accuracy(outcomes: Sequence[NavOutcome]) -> float:
    if not outcomes:
        raise ValueError("no outcomes")
    return sum(o.correct for o in outcomes) / len(outcomes)


def by_question(outcomes: Iterable[NavOutcome]) -> dict[str, list[NavOutcome]]:
    groups: dict[str, list[NavOutcome]] = defaultdict(list)
    for o in outcomes:
        groups[o.qid].append(o)
    return dict(groups)


def aggregated_accuracy(outcomes: Sequence[NavOutcome]) -> float:
    """Per question: credit when any of its documents was navigated correctly."""
    groups = by_question(outcomes)
    if not groups:
        raise ValueError("no outcomes")
    return sum(any(o.correct for o in g) for g in groups.values()) / len(groups)


def qa_metrics(outcomes: Sequence[NavOutcome], aliases: Mapping[str, Sequence[str]]) -> tuple[float, float]:
    """Mean (EM, F1) over the questions in ``aliases``.

    Each question's answer is aggregated over its documents by summed
    probability; a question without any prediction scores (0, 0).
    """
    if not aliases:
        return 0.0, 0.0
    groups = by_question(outcomes)
    em_sum = f1_sum = 0.0
    for qid, gold in aliases.items():
        preds = [(o.final_answer, o.answer_probability) for o in groups.get(qid, []) if o.final_answer]
        if preds:
            em, f1 = score_em_f1(aggregate_answer(preds), gold)
            em_sum += em
            f1_sum += f1
    return em_sum / len(aliases), f1_sum / len(aliases)


@dataclass(frozen=True)
class PathStats:
    n: int
    path_length_mean: float
    path_length_min: int
    path_length_max: int
    answer_actions_mean: float
    token_percent_mean: float
    stop_kind_percent: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def path_stats(outcomes: Sequence[NavOutcome]) -> PathStats:
    if not outcomes:
        raise ValueError("no outcomes")
    lengths = [o.path_length for o in outcomes]
    kinds = Counter(o.stop_kind for o in outcomes)
    n = len(outcomes)
    return PathStats(
        n=n,
        path_length_mean=sum(lengths) / n,
        path_length_min=min(lengths),
        path_length_max=max(lengths),
        answer_actions_mean=sum(o.answer_action_count for o in outcomes) / n,
        token_percent_mean=100.0 * sum(o.token_fraction for o in outcomes) / n,
        stop_kind_percent={k: 100.0 * v / n for k, v in sorted(kinds.items())},
    )


def stop_index_histogram(outcomes: Sequence[NavOutcome]) -> Histogram:
    return Histogram.of([o.stop_index for o in outcomes])


def accuracy_by_fao(
    outcomes: Sequence[NavOutcome],
    edges: Sequence[int],
    fao: Optional[Mapping[tuple[str, str], int]] = None,
) -> list[dict[str, Any]]:
    """Navigation accuracy per FAO bucket ``[edges[i], edges[i+1])``.

    Buckets without samples are omitted. ``fraction`` is the share of all
    outcomes falling in the bucket.
    """
    if len(edges) < 2 or list(edges) != sorted(edges):
        raise ValueError("edges must be increasing with at least two entries")
    vals = []
    for o in outcomes:
        f = fao[(o.qid, o.doc_id)] if fao is not None else o.fao
        if f is None:
            raise ValueError(f"no FAO for {o.qid}/{o.doc_id}")
        vals.append((f, o.correct))
    rows = []
    total = len(vals)
    for lo, hi in zip(edges[:-1], edges[1:]):
        hits = [c for f, c in vals if lo <= f < hi]
        if hits:
            rows.append({"lo": lo, "hi": hi, "accuracy": sum(hits) / len(hits), "count": len(hits), "fraction": len(hits) / total})
    return rows


def deep_accuracy(outcomes: Sequence[NavOutcome], min_fao: int = 20) -> Optional[float]:
    """Navigation accuracy on pairs whose FAO index exceeds ``min_fao``."""
    deep = [o for o in outcomes if o.fao is not None and o.fao > min_fao]
    return navigation_accuracy(deep) if deep else None


DEFAULT_FAO_EDGES = (0, 5, 10, 15, 20, 30, 50, 100, 701)


def report(
    outcomes: Sequence[NavOutcome],
    samples: Sequence[QASample],
    fao_edges: Sequence[int] = DEFAULT_FAO_EDGES,
) -> dict[str, Any]:
    aliases = {s.question_id: s.answer_aliases for s in samples if s.question_id in {o.qid for o in outcomes}}
    em, f1 = qa_metrics(outcomes, aliases)
    hist = stop_index_histogram(outcomes)
    return {
        "n_pairs": len(outcomes),
        "n_questions": len(by_question(outcomes)),
        "navigation_accuracy": navigation_accuracy(outcomes),
        "aggregated_accuracy": aggregated_accuracy(outcomes),
        "deep_accuracy": deep_accuracy(outcomes),
        "em": em,
        "f1": f1,
        "path": path_stats(outcomes).to_dict(),
        "stop_index_median": hist.median,
        "accuracy_by_fao": accuracy_by_fao(outcomes, fao_edges),
    }


# ---------------------------------------------------------------------------
# trace files


def write_traces(path: Path | str, records: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_traces(path: Path | str) -> list[dict[str, Any]]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def outcomes_from_records(records: Iterable[Mapping[str, Any]], trees: Mapping[str, DocTree]) -> list[NavOutcome]:
    """Rebuild outcomes from trace records (``steps`` lists or direct ``node_id`` picks)."""
    out = []
    for r in records:
        tree = trees[r["doc_id"]]
        if r.get("steps"):
            out.append(outcome_from_trace(tree, r["qid"], r["steps"]))
        else:
            ans = r.get("answer") or {}
            out.append(outcome_at_node(tree, r["qid"], int(r["node_id"]), ans.get("answer"), float(ans.get("probability", 0.0))))
    return out


def write_report(out: Path | str, rep: Mapping[str, Any], outcomes: Sequence[NavOutcome], samples: Sequence[QASample]) -> None:
    """JSON report plus CSVs for the stop-index histogram, FAO accuracy and FAO histogram."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(rep, f, indent=2, sort_keys=True)
        f.write("\n")
    stem = out.with_suffix("")
    stop_index_histogram(outcomes).to_csv(f"{stem}.stop_index.csv")
    with open(f"{stem}.accuracy_by_fao.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["lo", "hi", "accuracy", "count", "fraction"])
        for row in rep["accuracy_by_fao"]:
            w.writerow([row["lo"], row["hi"], f"{row['accuracy']:.6g}", row["count"], f"{row['fraction']:.6g}"])
    from .doctree import fao_histogram

    fao_histogram(samples).to_csv(f"{stem}.fao.csv")
