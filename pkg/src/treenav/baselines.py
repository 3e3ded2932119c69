"""Non-learned navigation baselines and the agent/tf-idf ensembles.

tf-idf uses raw term counts and the smoothed idf ``ln((N + 1) / (df + 1)) + 1``
where ``N`` counts the paragraphs in scope: one document's paragraphs for
:func:`doc_tfidf_select`, every paragraph of the corpus for
:func:`global_tfidf_select`. No stopwords are removed.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .doctree import DocNode, DocTree, NodeKind
from .env import EVAL_BUDGET, NavEnv
from .reader import AnswerPrediction, ExtractionContext, Extractor, aggregate_answer
from .text import normalize_tokens

READ_TOP_TOKENS = 800
DEFAULT_THRESHOLD = 5


# ---------------------------------------------------------------------------
# random baselines


def random_walk(env: NavEnv, rng: np.random.Generator, budget: int = EVAL_BUDGET) -> int:
    """Uniformly random actions from the root until STOP or the budget; returns the stop node."""
    env.reset(budget)
    actions = env.actions
    while True:
        res = env.step(actions[int(rng.integers(len(actions)))])
        if res.terminal:
            return res.next_state.node


def random_para(tree: DocTree, rng: np.random.Generator) -> int:
    """A uniformly chosen non-sentence node."""
    ids = tree.non_sentence_ids
    return int(ids[int(rng.integers(len(ids)))])


# ---------------------------------------------------------------------------
# tf-idf


def _terms(tokens: Iterable[str]) -> list[str]:
    return normalize_tokens(tokens)


class TfIdfIndex:
    """Document frequencies over a set of text units plus their L2-normalized vectors."""

    def __init__(self, units: Sequence[Sequence[str]]):
        self.n_units = len(units)
        self.df: Counter = Counter()
        counts = [Counter(_terms(u)) for u in units]
        for c in counts:
            self.df.update(c.keys())
        self.vectors = [self._normalize(self._weigh(c)) for c in counts]

    def idf(self, term: str) -> float:
        return math.log((self.n_units + 1) / (self.df.get(term, 0) + 1)) + 1.0

    def _weigh(self, counts: Counter) -> dict[str, float]:
        return {t: n * self.idf(t) for t, n in counts.items()}

    @staticmethod
    def _normalize(vec: dict[str, float]) -> dict[str, float]:
        norm = math.sqrt(sum(v * v for v in vec.values()))
        return {t: v / norm for t, v in vec.items()} if norm > 0 else {}

    def vector(self, tokens: Sequence[str]) -> dict[str, float]:
        return self._normalize(self._weigh(Counter(_terms(tokens))))

    @staticmethod
    def cosine(a: dict[str, float], b: dict[str, float]) -> float:
        if len(a) > len(b):
            a, b = b, a
        return sum(v * b.get(t, 0.0) for t, v in a.items())

    def scores(self, query: Sequence[str], unit_vectors: Optional[Sequence[dict[str, float]]] = None) -> np.ndarray:
        q = self.vector(query)
        vecs = self.vectors if unit_vectors is None else unit_vectors
        return np.array([self.cosine(q, v) for v in vecs], dtype=np.float64)


@dataclass(frozen=True)
class Selection:
    node: int
    score: float
    fallback: bool = False


def _paragraphs(tree: DocTree) -> tuple[int, ...]:
    paras = tree.paragraph_ids
    if not paras:
        raise ValueError(f"document {tree.doc_id} has no paragraphs")
    return paras


def _argmax(paras: Sequence[int], scores: np.ndarray) -> Selection:
    # paragraph ids are in index order, so the first maximum has the smallest index
    best = int(np.argmax(scores))
    if scores[best] <= 0.0:
        return Selection(int(paras[0]), 0.0, True)
    return Selection(int(paras[best]), float(scores[best]))


def doc_tfidf_select(question: Sequence[str], tree: DocTree) -> Selection:
    """Paragraph most similar to the question with idf over this document's paragraphs."""
    paras = _paragraphs(tree)
    index = TfIdfIndex([tree[p].label_tokens for p in paras])
    return _argmax(paras, index.scores(question))


class CorpusIndex:
    """Corpus-wide idf over every paragraph of every document."""

    def __init__(self, trees: Iterable[DocTree]):
        self.trees = {}
        units = []
        spans = {}
        for t in trees:
            if t.doc_id in self.trees:
                continue
            self.trees[t.doc_id] = t
            start = len(units)
            units.extend(t[p].label_tokens for p in t.paragraph_ids)
            spans[t.doc_id] = (start, len(units))
        self.index = TfIdfIndex(units)
        self.spans = spans

    def paragraph_vectors(self, tree: DocTree) -> list[dict[str, float]]:
        span = self.spans.get(tree.doc_id)
        if span is None:
            return [self.index.vector(tree[p].label_tokens) for p in tree.paragraph_ids]
        return self.index.vectors[span[0] : span[1]]


def global_tfidf_select(question: Sequence[str], tree: DocTree, corpus: CorpusIndex) -> Selection:
    """As :func:`doc_tfidf_select` but with idf from the whole corpus."""
    paras = _paragraphs(tree)
    return _argmax(paras, corpus.index.scores(question, corpus.paragraph_vectors(tree)))


# ---------------------------------------------------------------------------
# reading baselines


def top_tokens(tree: DocTree, n_tokens: int = READ_TOP_TOKENS) -> tuple[str, ...]:
    """The first ``n_tokens`` tokens of the document, reading labels in index order."""
    out: list[str] = []
    for nid in tree.non_sentence_ids:
        out.extend(tree[nid].label_tokens)
        if len(out) >= n_tokens:
            break
    return tuple(out[:n_tokens])


def read_top(
    tree: DocTree,
    question: Sequence[str],
    extractor: Extractor,
    n_tokens: int = READ_TOP_TOKENS,
    ctx: Optional[ExtractionContext] = None,
) -> AnswerPrediction:
    context = top_tokens(tree, n_tokens) or ("",)
    return extractor.extract(question, context, ctx or ExtractionContext(doc_id=tree.doc_id, node_index=-1))


# ---------------------------------------------------------------------------
# ensembles


def ensemble_threshold(agent_stop: DocNode, tfidf_stop: DocNode, l: float = DEFAULT_THRESHOLD) -> DocNode:
    """Keep the agent's stop if its index is at most ``l``; otherwise defer to tf-idf.

    ``l = math.inf`` always keeps the agent.
    """
    if l < 0:
        raise ValueError("threshold must be >= 0")
    return agent_stop if agent_stop.index <= l else tfidf_stop


def ensemble_answer(
    agent_preds: Sequence[tuple[str, float]], tfidf_preds: Sequence[tuple[str, float]] = ()
) -> str:
    """Summed-probability answer over both models' per-document predictions."""
    return aggregate_answer(list(agent_preds) + list(tfidf_preds))


def tune_threshold(
    agent_stops: Sequence[DocNode],
    tfidf_stops: Sequence[DocNode],
    trees: Sequence[DocTree],
    candidates: Optional[Iterable[int]] = None,
) -> tuple[int, float]:
    """Threshold with the best ensemble navigation accuracy; ties go to the smaller threshold."""
    if not trees:
        raise ValueError("nothing to tune on")
    if candidates is None:
        candidates = range(0, max(n.index for n in agent_stops) + 1)
    best = None
    for l in candidates:
        hits = sum(
            t.has_answer_at(ensemble_threshold(a, b, l).id) for a, b, t in zip(agent_stops, tfidf_stops, trees)
        )
        acc = hits / len(trees)
        if best is None or acc > best[1]:
            best = (int(l), acc)
    return best
