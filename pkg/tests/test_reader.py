import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treenav.reader import (
    ExternalExtractor,
    ExtractionContext,
    aggregate_answer,
    enumerate_spans,
    extract_oracle,
    extract_overlap,
    make_extractor,
    score_em_f1,
)
from treenav.text import tokenize


def brute_force_overlap(question, context, max_len, penalty=0.5):
    """Score every span directly from its definition."""
    q = {t.lower() for t in question}
    rows = []
    for i in range(len(context)):
        for j in range(i + 1, min(len(context), i + max_len) + 1):
            words = {t.lower() for t in context[i:j]}
            overlap = len(words & q)
            rows.append(((i, j), overlap * (1 - penalty * (j - i - 1) / max_len)))
    scores = np.array([s for _, s in rows])
    probs = np.exp(scores - scores.max())
    probs /= probs.sum()
    return [sp for sp, _ in rows], probs, scores


def test_overlap_matches_brute_force():
    q = tokenize("capital of France")
    c = tokenize("Paris is the capital of France")
    spans, probs, scores = brute_force_overlap(q, c, 8)
    pred = extract_overlap(q, c, 8)
    np.testing.assert_allclose(pred.span_distribution, probs, rtol=0, atol=1e-12)
    best = spans[int(np.argmax(probs))]
    assert pred.tokens == tuple(c[best[0] : best[1]]) == ("capital", "of", "France")
    assert abs(pred.span_distribution.sum() - 1) < 1e-9
    assert pred.top_logit == pytest.approx(scores.max())
    assert pred.context_token_count == 6


def test_overlap_zero_overlap_is_uniform():
    c = tokenize("nothing matches here at all")
    pred = extract_overlap(tokenize("zebra"), c, 8)
    n = len(enumerate_spans(len(c), 8))
    np.testing.assert_allclose(pred.span_distribution, np.full(n, 1 / n))
    assert pred.entropy == pytest.approx(math.log(n))
    assert pred.tokens == ("nothing",)  # earliest start, then shortest


def test_overlap_single_token_context():
    pred = extract_overlap(["a"], ["b"], 8)
    assert list(pred.span_distribution) == [1.0]
    assert pred.entropy == 0.0 and pred.top_probability == 1.0


def test_overlap_errors():
    with pytest.raises(ValueError):
        extract_overlap(["a"], [], 8)
    with pytest.raises(ValueError):
        extract_overlap(["a"], ["a"], 0)


words = st.sampled_from(["alpha", "beta", "gamma", "delta", "the", "of", ",", "Paris"])


@given(st.lists(words, min_size=1, max_size=6), st.lists(words, min_size=1, max_size=20), st.randoms())
@settings(max_examples=200, deadline=None)
def test_overlap_invariants(question, context, rnd):
    pred = extract_overlap(question, context)
    n = len(pred.span_distribution)
    assert abs(pred.span_distribution.sum() - 1) < 1e-9
    assert -1e-12 <= pred.entropy <= math.log(n) + 1e-9
    assert pred.top_probability == pred.span_distribution.max()
    shuffled = list(question)
    rnd.shuffle(shuffled)
    assert extract_overlap(shuffled, context).tokens == pred.tokens


def test_oracle_peaked_on_alias():
    c = tokenize("It became part of Thailand in 1933")
    pred = extract_oracle([], c, ["Thailand"])
    assert pred.tokens == ("Thailand",)
    assert pred.top_probability == pytest.approx(0.9)
    assert abs(pred.span_distribution.sum() - 1) < 1e-9


def test_oracle_absent_alias_is_uniform():
    c = tokenize("no answer here")
    pred = extract_oracle([], c, ["Thailand"])
    n = len(pred.span_distribution)
    np.testing.assert_allclose(pred.span_distribution, np.full(n, 1 / n))


def test_oracle_picks_first_occurrence():
    c = tokenize("Kingdom of Thailand , later Thailand again")
    pred = extract_oracle([], c, ["Thailand"])
    top = int(np.argmax(pred.span_distribution))
    spans = sorted(enumerate_spans(len(c), 8))
    assert spans[top] == (2, 3)


def test_em_f1_examples():
    assert score_em_f1("Thailand", ["Thailand"]) == (1, 1.0)
    assert score_em_f1("the Thailand", ["Thailand"]) == (1, 1.0)
    em, f1 = score_em_f1("Kingdom of Thailand", ["Thailand"])
    assert em == 0 and f1 == pytest.approx(2 * (1 / 3 * 1) / (1 / 3 + 1))
    assert score_em_f1("", ["Thailand"]) == (0, 0.0)
    assert score_em_f1(None, ["Thailand"]) == (0, 0.0)


@given(st.lists(words, min_size=1, max_size=5), st.lists(words, min_size=1, max_size=5))
@settings(max_examples=200, deadline=None)
def test_em_f1_properties(a, b):
    pa, pb = " ".join(a), " ".join(b)
    em, f1 = score_em_f1(pa, [pb])
    if em:
        assert f1 == 1.0
    assert 0.0 <= f1 <= 1.0
    assert score_em_f1(pb, [pa])[1] == pytest.approx(f1)


def test_aggregate_answer():
    assert aggregate_answer([("A", 0.4), ("B", 0.3), ("A", 0.2)]) == "A"
    assert aggregate_answer([("B", 0.1)]) == "B"
    assert aggregate_answer([("B", 0.5), ("A", 0.5)]) == "A"
    # normalized forms are pooled
    assert aggregate_answer([("the Cat", 0.3), ("cat", 0.3), ("Dog", 0.5)]) == "the Cat"
    with pytest.raises(ValueError):
        aggregate_answer([])


def test_external_extractor(tmp_path):
    p = tmp_path / "preds.jsonl"
    p.write_text('{"qid": "q1", "doc_id": "d1", "node_index": 4, "answer": "Thailand", "probability": 0.7}\n')
    ext = ExternalExtractor(p)
    hit = ext.extract(["q"], ["some", "text"], ExtractionContext("q1", "d1", 4))
    assert hit.tokens == ("Thailand",) and hit.top_probability == 0.7
    assert hit.context_token_count == 2
    miss = ext.extract(["text"], ["some", "text"], ExtractionContext("q1", "d1", 5))
    assert miss.tokens == ("text",)
    with pytest.raises(ValueError):
        make_extractor("external")
    with pytest.raises(ValueError):
        make_extractor("bogus")
