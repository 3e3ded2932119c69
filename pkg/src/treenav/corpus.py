"""Synthetic question/document corpora with a controllable answer-position bias.

Documents are built from pseudo-words. Each question is tied to a heading
category and a pair of key words; every document attached to the question
plants the answer and the key words in one paragraph under a section whose
heading is that category. The paragraph is chosen by a geometric draw over
paragraph ordinals, so ``fao_bias`` controls how early answers sit.

Two kinds of noise make the retrieval problem non-trivial:

* the document's entity word (from the title) is scattered over many
  paragraphs and also appears in the question, which misleads scoring that
  uses corpus-wide idf;
* with probability ``distractor_rate`` a paragraph under a different heading
  repeats the key words without the answer, which misleads any purely
  lexical paragraph scorer but not one that also reads the headings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .doctree import QASample, annotate_answers, ingest_document
from .rng import fork
from .text import tokenize

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr", "ch", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_FUNCTION_WORDS = ["the", "of", "and", "in", "to", "was", "is", "for", "with", "by", "on", "as"]
_QWORDS = ["what", "which", "who", "where"]


@dataclass(frozen=True)
class CorpusSpec:
    num_docs: int = 200
    depth_range: tuple[int, int] = (2, 3)
    branching_range: tuple[int, int] = (3, 8)
    fao_bias: float = 0.07
    vocab_size: int = 2000
    seed: int = 1
    n_categories: int = 30
    distractor_rate: float = 0.3
    entity_rate: float = 0.35

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 2 <= lo <= hi <= 3:
            raise ValueError("depth_range must lie within [2, 3]")
        lo, hi = self.branching_range
        if not 1 <= lo <= hi:
            raise ValueError("branching_range must satisfy 1 <= min <= max")
        if not 0.0 < self.fao_bias <= 1.0:
            raise ValueError("fao_bias must be in (0, 1]")
        if self.num_docs < 1 or self.vocab_size < 50:
            raise ValueError("num_docs >= 1 and vocab_size >= 50 required")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CorpusSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown corpus spec keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("depth_range", "branching_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class _Words:
    """Disjoint pseudo-word pools."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, n_categories: int):
        self._rng = rng
        self._seen: set[str] = set(_FUNCTION_WORDS) | set(_QWORDS)
        self.filler = [self.fresh(2) for _ in range(vocab_size)]
        ranks = np.arange(1, vocab_size + 1)
        self.filler_cdf = np.cumsum(1.0 / ranks) / np.sum(1.0 / ranks)
        self.headings = [self.fresh(3) for _ in range(n_categories)]
        self.cues = [[self.fresh(2) for _ in range(12)] for _ in range(n_categories)]
        self.subheadings = [self.fresh(2) for _ in range(40)]
        self.keys = [self.fresh(3) for _ in range(max(200, vocab_size // 5))]

    def fresh(self, syllables: int) -> str:
        # indexing with integers() draws the same stream as rng.choice on a list, without the array conversion
        rng = self._rng
        while True:
            w = "".join(
                _ONSETS[int(rng.integers(0, len(_ONSETS)))] + _VOWELS[int(rng.integers(0, len(_VOWELS)))]
                for _ in range(syllables)
            )
            if w not in self._seen:
                self._seen.add(w)
                return w


def _geometric_ordinal(rng: np.random.Generator, p: float, n: int) -> int:
    if p >= 1.0:
        return 0
    for _ in range(64):
        k = int(rng.geometric(p)) - 1
        if k < n:
            return k
    return n - 1


class _DocBuilder:
    def __init__(self, spec: CorpusSpec, words: _Words, rng: np.random.Generator):
        self.spec = spec
        self.w = words
        self.rng = rng

    def filler(self, n: int) -> list[str]:
        rng = self.rng
        u = rng.random(n)
        fw = rng.integers(0, len(_FUNCTION_WORDS), size=n)
        ranks = np.searchsorted(self.w.filler_cdf, rng.random(n), side="right")
        ranks = np.minimum(ranks, len(self.w.filler) - 1)
        return [_FUNCTION_WORDS[f] if x < 0.3 else self.w.filler[r] for x, f, r in zip(u, fw, ranks)]

    def sentence(self, extra: list[str], cat: int) -> list[str]:
        rng = self.rng
        toks = self.filler(int(rng.integers(6, 13)))
        if rng.random() < 0.5:
            cues = self.w.cues[cat]
            toks.insert(int(rng.integers(0, len(toks) + 1)), cues[int(rng.integers(0, len(cues)))])
        for t in extra:
            toks.insert(int(rng.integers(0, len(toks) + 1)), t)
        return toks

    def skeleton(self, answer_cat: int) -> list[dict[str, Any]]:
        """Sections (with optional subsections) and empty paragraph slots."""
        rng, spec = self.rng, self.spec
        lo, hi = spec.branching_range
        n_sections = int(rng.integers(lo, hi + 1))
        others = [c for c in range(spec.n_categories) if c != answer_cat]
        cats = list(rng.choice(others, size=min(n_sections, len(others)), replace=False))
        cats[int(rng.integers(0, len(cats)))] = answer_cat
        sections = []
        for cat in cats:
            depth = int(rng.integers(spec.depth_range[0], spec.depth_range[1] + 1))
            sec = {"kind": "section", "text": self.w.headings[int(cat)], "cat": int(cat), "children": []}
            if depth == 3:
                n_sub = int(rng.integers(lo, hi + 1))
                subs = rng.choice(len(self.w.subheadings), size=min(n_sub, len(self.w.subheadings)), replace=False)
                for s in subs:
                    sub = {"kind": "subsection", "text": self.w.subheadings[int(s)], "children": []}
                    sub["children"] = [{"kind": "paragraph"} for _ in range(int(rng.integers(lo, hi + 1)))]
                    sec["children"].append(sub)
            else:
                sec["children"] = [{"kind": "paragraph"} for _ in range(int(rng.integers(lo, hi + 1)))]
            sections.append(sec)
        return sections

    def build(self, doc_id: str, entity: list[str], cat: int, keys: list[str], answer: str) -> dict[str, Any]:
        rng, spec = self.rng, self.spec
        sections = self.skeleton(cat)

        slots = []  # (paragraph dict, section category) in pre-order
        for sec in sections:
            for ch in sec["children"]:
                if ch["kind"] == "paragraph":
                    slots.append((ch, sec["cat"]))
                else:
                    slots.extend((p, sec["cat"]) for p in ch["children"])

        # FAO ordinal first, then move the answer section so the draw holds:
        # the answer paragraph must sit under the question's heading category.
        k = _geometric_ordinal(rng, spec.fao_bias, len(slots))
        target_cat = slots[k][1]
        if target_cat != cat:
            for sec in sections:
                if sec["cat"] == cat:
                    sec["cat"] = target_cat
                    sec["text"] = self.w.headings[target_cat]
                elif sec["cat"] == target_cat:
                    sec["cat"] = cat
                    sec["text"] = self.w.headings[cat]
            slots = [(p, cat if c == target_cat else (target_cat if c == cat else c)) for p, c in slots]

        plants: dict[int, list[str]] = {k: list(keys) + [answer]}
        later = [i for i in range(k + 1, len(slots))]
        for i in rng.choice(later, size=min(len(later), int(rng.integers(0, 3))), replace=False) if later else []:
            plants.setdefault(int(i), []).append(answer)
        if rng.random() < spec.distractor_rate:
            off = [i for i in range(len(slots)) if slots[i][1] != cat and i not in plants]
            if off:
                j = int(rng.choice(off))
                plants[j] = list(keys) * 2

        for i, (para, pcat) in enumerate(slots):
            n_sent = int(rng.integers(2, 5))
            extras: list[list[str]] = [[] for _ in range(n_sent)]
            for t in plants.get(i, []):
                s = 0 if rng.random() < 0.6 else int(rng.integers(0, n_sent))
                extras[s].append(t)
            if rng.random() < spec.entity_rate:
                for _ in range(int(rng.integers(1, 4))):
                    extras[int(rng.integers(0, n_sent))].append(entity[0])
            sents = []
            for s in range(n_sent):
                toks = self.sentence(extras[s], pcat)
                toks[0] = toks[0].capitalize()
                sents.append({"kind": "sentence", "text": " ".join(toks) + " ."})
            para["children"] = sents
            para["text"] = " ".join(s["text"] for s in sents)

        def clean(node):
            node.pop("cat", None)
            for ch in node.get("children", []):
                clean(ch)
            return node

        return {
            "doc_id": doc_id,
            "title": " ".join(w.capitalize() for w in entity),
            "nodes": [clean(s) for s in sections],
        }


def generate_corpus(spec: CorpusSpec) -> list[QASample]:
    """Deterministic under ``spec.seed``; returns annotated samples with 1-3 documents each."""
    words = _Words(fork(spec.seed, "corpus.words"), spec.vocab_size, spec.n_categories)
    rng = fork(spec.seed, "corpus.docs")
    builder = _DocBuilder(spec, words, rng)
    samples = []
    n_docs = 0
    q = 0
    while n_docs < spec.num_docs:
        n = min(int(rng.integers(1, 4)), spec.num_docs - n_docs)
        cat = int(rng.integers(0, spec.n_categories))
        keys = [words.keys[int(i)] for i in rng.choice(len(words.keys), size=2, replace=False)]
        answer = words.fresh(3).capitalize()
        trees = []
        entities = []
        for j in range(n):
            entity = [words.fresh(2), words.fresh(2)]
            entities.append(entity)
            rec = builder.build(f"s{spec.seed}-d{n_docs + j:05d}", entity, cat, keys, answer)
            trees.append(annotate_answers(ingest_document(rec), [answer]))
        extra = str(rng.choice(_FUNCTION_WORDS))
        qtoks = [str(rng.choice(_QWORDS)), keys[0], extra, keys[1], words.headings[cat], "of", entities[0][0].capitalize()]
        question = " ".join(qtoks) + " ?"
        samples.append(
            QASample(f"s{spec.seed}-q{q:05d}", question, tuple(tokenize(question)), (answer,), tuple(trees))
        )
        n_docs += n
        q += 1
    return samples
