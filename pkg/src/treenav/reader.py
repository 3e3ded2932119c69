"""Answer extraction interface, built-in extractors and EM/F1 scoring.

The navigation agent treats the reading-comprehension model as a black box
that maps (question, context) to a distribution over answer spans. Two
deterministic extractors ship with the toolkit; predictions of an external
model can be replayed from a JSON-lines file.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .text import normalize_answer, normalize_tokens, tokenize

PROB_FLOOR = 1e-12
DEFAULT_MAX_SPAN_LEN = 8


@dataclass(frozen=True)
class AnswerPrediction:
    tokens: tuple[str, ...]
    span_distribution: np.ndarray = field(repr=False)
    top_logit: float
    entropy: float
    context_token_count: int
    top_probability: float

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def features(self) -> tuple[float, float, float]:
        """(entropy, logit, context length) as fed to the Q-network."""
        return (self.entropy, self.top_logit, float(self.context_token_count))

    def to_dict(self) -> dict:
        return {
            "answer": self.text,
            "probability": self.top_probability,
            "logit": self.top_logit,
            "entropy": self.entropy,
            "context_tokens": self.context_token_count,
        }


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    return float(-np.sum(p * np.log(np.maximum(p, PROB_FLOOR))))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def enumerate_spans(n: int, max_span_len: int) -> list[tuple[int, int]]:
    """All [start, end) spans ordered by start, then length."""
    return [(i, j) for i in range(n) for j in range(i + 1, min(n, i + max_span_len) + 1)]


def _prediction(context: Sequence[str], spans, probs: np.ndarray, logit: float) -> AnswerPrediction:
    top = int(np.argmax(probs))  # first maximum: earliest start, then shortest
    s, e = spans[top]
    return AnswerPrediction(
        tokens=tuple(context[s:e]),
        span_distribution=probs,
        top_logit=float(logit),
        entropy=entropy(probs),
        context_token_count=len(context),
        top_probability=float(probs[top]),
    )


def extract_overlap(
    question: Sequence[str],
    context: Sequence[str],
    max_span_len: int = DEFAULT_MAX_SPAN_LEN,
    length_penalty: float = 0.5,
) -> AnswerPrediction:
    """Score every span by the number of distinct question words it covers.

    ``score = overlap * (1 - length_penalty * (len - 1) / max_span_len)``; the
    scores are softmax-normalized. Zero overlap everywhere gives a uniform
    distribution.
    """
    if not context:
        raise ValueError("empty context")
    if max_span_len < 1:
        raise ValueError("max_span_len must be >= 1")
    qset = set(normalize_tokens(question))
    hit = [t if t in qset else None for t in normalize_tokens_keep(context)]
    spans = enumerate_spans(len(context), max_span_len)
    scores = np.empty(len(spans))
    k = 0
    n = len(context)
    for i in range(n):
        seen: set[str] = set()
        for j in range(i, min(n, i + max_span_len)):
            if hit[j] is not None:
                seen.add(hit[j])
            length = j - i + 1
            scores[k] = len(seen) * (1.0 - length_penalty * (length - 1) / max_span_len)
            k += 1
    probs = _softmax(scores)
    return _prediction(context, spans, probs, scores[int(np.argmax(probs))])


def normalize_tokens_keep(tokens: Sequence[str]) -> list[str]:
    """Per-position normalization; punctuation-only tokens become ''."""
    return [(normalize_tokens([t]) or [""])[0] for t in tokens]


def find_alias(context: Sequence[str], aliases: Iterable[str]) -> Optional[tuple[int, int]]:
    """[start, end) of the earliest alias occurrence in ``context`` (normalized match)."""
    norm = normalize_tokens_keep(context)
    compact = [(i, t) for i, t in enumerate(norm) if t]
    ctoks = [t for _, t in compact]
    best = None
    for alias in aliases:
        needle = normalize_tokens(tokenize(alias))
        if not needle:
            continue
        m = len(needle)
        for s in range(len(ctoks) - m + 1):
            if ctoks[s : s + m] == needle:
                span = (compact[s][0], compact[s + m - 1][0] + 1)
                if best is None or span < best:
                    best = span
                break
    return best


def extract_oracle(
    question: Sequence[str],
    context: Sequence[str],
    aliases: Iterable[str],
    top_probability: float = 0.9,
    max_span_len: int = DEFAULT_MAX_SPAN_LEN,
) -> AnswerPrediction:
    """Peaked on the first gold-alias occurrence, uniform when no alias is present."""
    if not context:
        raise ValueError("empty context")
    spans = enumerate_spans(len(context), max_span_len)
    hit = find_alias(context, aliases)
    if hit is None:
        probs = np.full(len(spans), 1.0 / len(spans))
        return _prediction(context, spans, probs, math.log(probs[0]))
    if hit not in spans:
        spans.append(hit)
    spans.sort()
    n = len(spans)
    if n == 1:
        probs = np.ones(1)
    else:
        probs = np.full(n, (1.0 - top_probability) / (n - 1))
        probs[spans.index(hit)] = top_probability
    top = spans.index(hit)
    s, e = hit
    return AnswerPrediction(
        tokens=tuple(context[s:e]),
        span_distribution=probs,
        top_logit=math.log(max(probs[top], PROB_FLOOR)),
        entropy=entropy(probs),
        context_token_count=len(context),
        top_probability=float(probs[top]),
    )


# ---------------------------------------------------------------------------
# pluggable extractors


@dataclass(frozen=True)
class ExtractionContext:
    qid: str = ""
    doc_id: str = ""
    node_index: int = -1
    aliases: tuple[str, ...] = ()


class Extractor:
    kind = "abstract"

    def extract(self, question: Sequence[str], context: Sequence[str], ctx: ExtractionContext) -> AnswerPrediction:
        raise NotImplementedError


class OverlapExtractor(Extractor):
    kind = "overlap"

    def __init__(self, max_span_len: int = DEFAULT_MAX_SPAN_LEN):
        self.max_span_len = max_span_len

    def extract(self, question, context, ctx):
        return extract_overlap(question, context, self.max_span_len)


class OracleExtractor(Extractor):
    kind = "oracle"

    def __init__(self, top_probability: float = 0.9, max_span_len: int = DEFAULT_MAX_SPAN_LEN):
        self.top_probability = top_probability
        self.max_span_len = max_span_len

    def extract(self, question, context, ctx):
        return extract_oracle(question, context, ctx.aliases, self.top_probability, self.max_span_len)


class ExternalExtractor(Extractor):
    """Replays predictions from a JSON-lines file.

    Each line: ``{"qid", "doc_id", "node_index", "answer", "probability"}``
    plus optional ``"logit"``, ``"entropy"`` and ``"span_distribution"``.
    Lookups without a stored prediction fall back to ``fallback``.
    """

    kind = "external"

    def __init__(self, path: Path | str, fallback: Optional[Extractor] = None):
        self.fallback = fallback or OverlapExtractor()
        self.table: dict[tuple[str, str, int], dict] = {}
        with open(path) as f:
            for line in f:
                if line.strip():
                    row = json.loads(line)
                    key = (str(row["qid"]), str(row.get("doc_id", "")), int(row["node_index"]))
                    self.table[key] = row

    def extract(self, question, context, ctx):
        row = self.table.get((ctx.qid, ctx.doc_id, ctx.node_index))
        if row is None:
            row = self.table.get((ctx.qid, "", ctx.node_index))
        if row is None:
            return self.fallback.extract(question, context, ctx)
        p = float(row["probability"])
        if "span_distribution" in row:
            dist = np.asarray(row["span_distribution"], dtype=np.float64)
            dist = dist / dist.sum()
        else:
            dist = np.array([p, 1.0 - p]) if p < 1.0 else np.ones(1)
        return AnswerPrediction(
            tokens=tuple(tokenize(row["answer"])),
            span_distribution=dist,
            top_logit=float(row.get("logit", math.log(max(p, PROB_FLOOR)))),
            entropy=float(row.get("entropy", entropy(dist))),
            context_token_count=len(context),
            top_probability=p,
        )


def make_extractor(kind: str = "overlap", **kwargs) -> Extractor:
    if kind == "overlap":
        return OverlapExtractor(kwargs.get("max_span_len", DEFAULT_MAX_SPAN_LEN))
    if kind == "oracle":
        return OracleExtractor(kwargs.get("top_probability", 0.9), kwargs.get("max_span_len", DEFAULT_MAX_SPAN_LEN))
    if kind == "external":
        if not kwargs.get("path"):
            raise ValueError("reader.kind=external requires reader.path")
        return ExternalExtractor(kwargs["path"])
    raise ValueError(f"unknown reader kind {kind!r}")


# ---------------------------------------------------------------------------
# scoring


def _f1(pred_toks: list[str], gold_toks: list[str]) -> float:
    common = Counter(pred_toks) & Counter(gold_toks)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred_toks)
    recall = same / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def score_em_f1(prediction: Optional[str], aliases: Iterable[str]) -> tuple[int, float]:
    if not prediction or not normalize_answer(prediction):
        return 0, 0.0
    p = normalize_answer(prediction)
    em, f1 = 0, 0.0
    for a in aliases:
        g = normalize_answer(a)
        em = max(em, int(p == g))
        f1 = max(f1, _f1(p.split(), g.split()))
    return em, f1


def aggregate_answer(per_doc: Sequence[tuple[str, float]]) -> str:
    """Answer with the largest probability summed over documents (normalized forms)."""
    if not per_doc:
        raise ValueError("nothing to aggregate")
    mass: dict[str, float] = defaultdict(float)
    surface: dict[str, str] = {}
    for ans, p in per_doc:
        key = normalize_answer(ans)
        mass[key] += p
        surface.setdefault(key, ans)
    best = min(mass, key=lambda k: (-mass[k], k))
    return surface[best]
