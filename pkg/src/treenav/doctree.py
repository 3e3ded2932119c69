"""Document trees: data model, ingestion, preface removal, answer annotation
and dataset filtering.

Documents arrive as nested JSON records::

    {"doc_id": "d1", "title": "Phuket Province",
     "nodes": [{"kind": "section", "text": "History", "children": [...]}]}

and become immutable :class:`DocTree` objects. Nodes live in an arena (a
tuple ordered by a pre-order walk over *all* nodes); ``DocNode.id`` is the
arena position and ``DocNode.index`` is the navigation index n(u).
"""

from __future__ import annotations

import enum
import json
import logging
import statistics
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence

from .text import contains_subsequence, normalize_answer, normalize_tokens, tokenize

log = logging.getLogger(__name__)

MAX_FAO_INDEX = 700


class NodeKind(enum.IntEnum):
    TITLE = 0
    SECTION = 1
    SUBSECTION = 2
    PARAGRAPH = 3
    SENTENCE = 4

    @classmethod
    def parse(cls, name: str) -> "NodeKind":
        return cls[name.strip().upper()]

    @property
    def is_heading(self) -> bool:
        return self in (NodeKind.TITLE, NodeKind.SECTION, NodeKind.SUBSECTION)


# Which kinds may appear directly below each kind. Heading levels may be
# skipped downward, sentences only ever sit under paragraphs.
_ALLOWED_CHILDREN = {
    NodeKind.TITLE: {NodeKind.SECTION, NodeKind.SUBSECTION, NodeKind.PARAGRAPH},
    NodeKind.SECTION: {NodeKind.SUBSECTION, NodeKind.PARAGRAPH},
    NodeKind.SUBSECTION: {NodeKind.PARAGRAPH},
    NodeKind.PARAGRAPH: {NodeKind.SENTENCE},
    NodeKind.SENTENCE: set(),
}


class DocTreeError(ValueError):
    """Base class for ingestion failures. ``path`` locates the offending node."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class ParseError(DocTreeError):
    pass


class ValidationError(DocTreeError):
    pass


@dataclass(frozen=True)
class DocNode:
    id: int
    kind: NodeKind
    text: str
    label_tokens: tuple[str, ...]
    children: tuple[int, ...]
    parent: Optional[int]
    index: int


@dataclass(frozen=True)
class DocTree:
    doc_id: str
    nodes: tuple[DocNode, ...]
    answer_node_ids: frozenset[int] = frozenset()

    @property
    def root(self) -> DocNode:
        return self.nodes[0]

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> DocNode:
        return self.nodes[node_id]

    @cached_property
    def max_index(self) -> int:
        return max(n.index for n in self.nodes)

    @cached_property
    def token_count(self) -> int:
        # Paragraph labels already hold their sentences' text; counting both
        # would double the body.
        return sum(len(n.label_tokens) for n in self.nodes if n.kind != NodeKind.SENTENCE)

    @cached_property
    def depths(self) -> tuple[int, ...]:
        d = [0] * len(self.nodes)
        for n in self.nodes[1:]:
            d[n.id] = d[n.parent] + 1  # parents precede children in the arena
        return tuple(d)

    @cached_property
    def heights(self) -> tuple[int, ...]:
        h = [0] * len(self.nodes)
        for n in reversed(self.nodes):
            if n.children:
                h[n.id] = 1 + max(h[c] for c in n.children)
        return tuple(h)

    @cached_property
    def sibling_pos(self) -> tuple[tuple[int, int], ...]:
        """(offset from first sibling, offset from last sibling) per node."""
        pos = [(0, 0)] * len(self.nodes)
        for n in self.nodes:
            k = len(n.children)
            for i, c in enumerate(n.children):
                pos[c] = (i, k - 1 - i)
        return tuple(pos)

    @cached_property
    def non_sentence_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind != NodeKind.SENTENCE)

    @cached_property
    def sentence_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind == NodeKind.SENTENCE)

    @cached_property
    def paragraph_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind == NodeKind.PARAGRAPH)

    @cached_property
    def by_index(self) -> dict[int, int]:
        """Navigation index -> id of the non-sentence node carrying it."""
        return {self.nodes[i].index: i for i in self.non_sentence_ids}

    @property
    def fao(self) -> Optional[int]:
        """First answer occurrence: smallest index among answer nodes."""
        if not self.answer_node_ids:
            return None
        return min(self.nodes[i].index for i in self.answer_node_ids)

    @cached_property
    def answer_indices(self) -> tuple[int, ...]:
        return tuple(sorted({self.nodes[i].index for i in self.answer_node_ids}))

    def reading_node(self, node_id: int) -> DocNode:
        """The node whose text is read at ``node_id`` (sentences read their paragraph)."""
        n = self.nodes[node_id]
        if n.kind == NodeKind.SENTENCE:
            return self.nodes[n.parent]
        return n

    def has_answer_at(self, node_id: int) -> bool:
        return self.reading_node(node_id).id in self.answer_node_ids

    def walk(self) -> Iterator[DocNode]:
        return iter(self.nodes)


@dataclass(frozen=True)
class QASample:
    question_id: str
    question: str
    question_tokens: tuple[str, ...]
    answer_aliases: tuple[str, ...]
    documents: tuple[DocTree, ...] = ()


@dataclass(frozen=True)
class Rejection:
    qid: str
    doc_id: Optional[str]
    reason: str


# ---------------------------------------------------------------------------
# ingestion


def _build(record: dict[str, Any]) -> DocTree:
    if not isinstance(record, dict):
        raise ParseError("document record must be an object")
    for key in ("doc_id", "title"):
        if key not in record:
            raise ParseError(f"missing key {key!r}")
        if not isinstance(record[key], str):
            raise ParseError(f"{key!r} must be a string", f"$.{key}")
    nodes_raw = record.get("nodes", [])
    if not isinstance(nodes_raw, list):
        raise ParseError("'nodes' must be a list", "$.nodes")

    arena: list[DocNode] = []
    counter = 0

    def add(kind, text, parent, parent_index, path, raw_children):
        nonlocal counter
        if kind == NodeKind.SENTENCE:
            index = parent_index
        else:
            index = counter
            counter += 1
        node_id = len(arena)
        arena.append(None)  # placeholder, children fixed up below
        child_ids = []
        for j, child in enumerate(raw_children):
            cpath = f"{path}.children[{j}]" if parent is not None else f"$.nodes[{j}]"
            ckind, ctext, cchildren = _read_node(child, cpath)
            if ckind not in _ALLOWED_CHILDREN[kind]:
                raise ValidationError(f"{ckind.name.lower()} cannot be a child of {kind.name.lower()}", cpath)
            child_ids.append(add(ckind, ctext, node_id, index, cpath, cchildren))
        if kind == NodeKind.PARAGRAPH and not text.strip() and child_ids:
            text = " ".join(arena[c].text for c in child_ids)
        arena[node_id] = DocNode(
            id=node_id,
            kind=kind,
            text=text,
            label_tokens=tuple(tokenize(text)),
            children=tuple(child_ids),
            parent=parent,
            index=index,
        )
        return node_id

    add(NodeKind.TITLE, record["title"], None, -1, "$", nodes_raw)
    return DocTree(doc_id=record["doc_id"], nodes=tuple(arena))


def _read_node(raw: Any, path: str) -> tuple[NodeKind, str, list]:
    if not isinstance(raw, dict):
        raise ParseError("node must be an object", path)
    if "kind" not in raw:
        raise ParseError("missing key 'kind'", path)
    try:
        kind = NodeKind.parse(str(raw["kind"]))
    except KeyError:
        raise ParseError(f"unknown node kind {raw['kind']!r}", path) from None
    if kind == NodeKind.TITLE:
        raise ValidationError("title may only appear as the document root", path)
    text = raw.get("text", "")
    if not isinstance(text, str):
        raise ParseError("'text' must be a string", path)
    children = raw.get("children", [])
    if not isinstance(children, list):
        raise ParseError("'children' must be a list", path)
    return kind, text, children


def ingest_document(record: dict[str, Any]) -> DocTree:
    """Build a :class:`DocTree` from a nested JSON document record."""
    return _build(record)


def to_record(tree: DocTree) -> dict[str, Any]:
    """Inverse of :func:`ingest_document` (answer annotations are not stored)."""

    def node_rec(nid: int) -> dict[str, Any]:
        n = tree.nodes[nid]
        rec: dict[str, Any] = {"kind": n.kind.name.lower(), "text": n.text}
        if n.children:
            rec["children"] = [node_rec(c) for c in n.children]
        return rec

    return {
        "doc_id": tree.doc_id,
        "title": tree.root.text,
        "nodes": [node_rec(c) for c in tree.root.children],
    }


def remove_preface(tree: DocTree) -> DocTree:
    """Drop everything between the title and the first heading child."""
    kids = tree.root.children
    first = next((i for i, c in enumerate(kids) if tree.nodes[c].kind.is_heading), len(kids))
    if first == 0:
        return tree
    rec = to_record(tree)
    rec["nodes"] = rec["nodes"][first:]
    out = _build(rec)
    if tree.answer_node_ids:
        log.debug("remove_preface drops answer annotations of %s", tree.doc_id)
    return out


def annotate_answers(tree: DocTree, aliases: Iterable[str]) -> DocTree:
    needles = [normalize_tokens(tokenize(a)) for a in aliases]
    needles = [n for n in needles if n]
    hits = set()
    for node in tree.nodes:
        hay = normalize_tokens(node.label_tokens)
        if any(contains_subsequence(hay, nd) for nd in needles):
            hits.add(node.id)
    return replace(tree, answer_node_ids=frozenset(hits))


def _single_character(alias: str) -> bool:
    return len(normalize_answer(alias).replace(" ", "")) <= 1


def filter_sample(sample: QASample) -> tuple[Optional[QASample], list[Rejection]]:
    """Apply the dataset filters; returns the kept sample (or None) and every rejection."""
    rejections: list[Rejection] = []
    if all(_single_character(a) for a in sample.answer_aliases):
        return None, [Rejection(sample.question_id, None, "single_character_answer")]
    kept = []
    for doc in sample.documents:
        fao = doc.fao
        if fao is None:
            reason = "no_answer"
        elif all(doc.nodes[i].kind.is_heading for i in doc.answer_node_ids):
            reason = "answer_only_in_titles"
        elif fao > MAX_FAO_INDEX:
            reason = "fao_beyond_limit"
        else:
            kept.append(doc)
            continue
        rejections.append(Rejection(sample.question_id, doc.doc_id, reason))
    if not kept:
        rejections.append(Rejection(sample.question_id, None, "no_documents_left"))
        return None, rejections
    return replace(sample, documents=tuple(kept)), rejections


# ---------------------------------------------------------------------------
# FAO statistics


@dataclass
class Histogram:
    counts: dict[int, int] = field(default_factory=dict)
    median: Optional[float] = None

    @classmethod
    def of(cls, values: Sequence[int]) -> "Histogram":
        if not values:
            return cls()
        return cls(dict(sorted(Counter(values).items())), float(statistics.median(values)))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_csv(self, path: Path | str, key: str = "index") -> None:
        with open(path, "w") as f:
            f.write(f"{key},count\n")
            for k, v in self.counts.items():
                f.write(f"{k},{v}\n")
            if self.median is not None:
                f.write(f"median,{self.median:g}\n")


def fao_histogram(samples: Iterable[QASample]) -> Histogram:
    faos = [doc.fao for s in samples for doc in s.documents if doc.fao is not None]
    return Histogram.of(faos)


# ---------------------------------------------------------------------------
# dataset directories
#
# A dataset directory holds docs.jsonl (one document record per line) and
# qa.jsonl ({"qid","question","answers","doc_ids"} per line).


def read_jsonl(path: Path | str) -> Iterator[dict[str, Any]]:
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", f"{path}:{lineno}") from None


def write_jsonl(path: Path | str, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def assemble_samples(
    docs: dict[str, DocTree],
    qa_rows: Iterable[dict[str, Any]],
    keep_preface: bool = False,
) -> tuple[list[QASample], list[Rejection]]:
    """Attach documents to questions, strip prefaces, annotate and filter."""
    if not keep_preface:
        docs = {k: remove_preface(v) for k, v in docs.items()}
    samples, rejections = [], []
    for row in qa_rows:
        qid = str(row["qid"])
        aliases = tuple(row["answers"])
        trees = []
        for d in row["doc_ids"]:
            if d not in docs:
                rejections.append(Rejection(qid, d, "unknown_document"))
                continue
            trees.append(annotate_answers(docs[d], aliases))
        sample = QASample(qid, row["question"], tuple(tokenize(row["question"])), aliases, tuple(trees))
        kept, rej = filter_sample(sample)
        rejections.extend(rej)
        if kept is not None:
            samples.append(kept)
    for r in rejections:
        log.info("rejected qid=%s doc=%s reason=%s", r.qid, r.doc_id, r.reason)
    return samples, rejections


def sample_to_row(sample: QASample) -> dict[str, Any]:
    return {
        "qid": sample.question_id,
        "question": sample.question,
        "answers": list(sample.answer_aliases),
        "doc_ids": [d.doc_id for d in sample.documents],
    }


def save_dataset(out_dir: Path | str, samples: Sequence[QASample]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seen: dict[str, DocTree] = {}
    for s in samples:
        for d in s.documents:
            seen.setdefault(d.doc_id, d)
    write_jsonl(out / "docs.jsonl", (to_record(d) for d in seen.values()))
    write_jsonl(out / "qa.jsonl", (sample_to_row(s) for s in samples))


def load_documents(path: Path | str) -> dict[str, DocTree]:
    docs = {}
    for i, rec in enumerate(read_jsonl(path)):
        try:
            tree = ingest_document(rec)
        except DocTreeError as e:
            raise type(e)(str(e), f"{path}#{i}") from None
        docs[tree.doc_id] = tree
    return docs


def load_dataset(data_dir: Path | str) -> list[QASample]:
    """Load an already-processed dataset directory (no preface removal)."""
    d = Path(data_dir)
    docs = load_documents(d / "docs.jsonl")
    samples, _ = assemble_samples(docs, read_jsonl(d / "qa.jsonl"), keep_preface=True)
    return samples


def split_of(qid: str) -> str:
    """Deterministic 80/10/10 train/dev/test assignment by question-id hash."""
    import hashlib

    bucket = int(hashlib.md5(qid.encode("utf-8")).hexdigest()[:8], 16) % 10
    if bucket == 8:
        return "dev"
    if bucket == 9:
        return "test"
    return "train"


def split_samples(samples: Iterable[QASample], split: str) -> list[QASample]:
    if split == "all":
        return list(samples)
    return [s for s in samples if split_of(s.question_id) == split]
