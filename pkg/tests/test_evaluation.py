import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treenav.baselines import random_walk
from treenav.env import Action, NavEnv
from treenav.evaluation import (
    NavOutcome,
    accuracy_by_fao,
    aggregated_accuracy,
    by_question,
    deep_accuracy,
    navigation_accuracy,
    outcome_at_node,
    outcome_from_trace,
    outcomes_from_records,
    path_stats,
    qa_metrics,
    read_traces,
    report,
    stop_index_histogram,
    tokens_consumed,
    write_report,
    write_traces,
)
from treenav.reader import OracleExtractor


def outcome(qid, doc, correct, *, length=1, index=0, kind="paragraph", answers=0, frac=0.0, answer=None, p=0.0, fao=None):
    return NavOutcome(qid, doc, index, kind, correct, length, answers, 0, frac, answer, p, fao)


# Six outcomes over four questions. Hand counts are in the comments.
SIX = [
    outcome("q1", "d1", True, length=3, index=4, answers=1, frac=0.10, answer="Paris", p=0.6, fao=4),
    outcome("q1", "d2", False, length=10, index=9, kind="sentence", frac=0.20, answer="Lyon", p=0.5, fao=2),
    outcome("q2", "d1", False, length=100, index=4, answers=2, frac=0.05, answer="New York City", p=0.4, fao=25),
    outcome("q3", "d1", True, length=1, index=0, kind="title", fao=7),
    outcome("q4", "d1", False, length=7, index=12, answers=1, frac=0.30, answer="Rome", p=0.2, fao=12),
    outcome("q4", "d2", False, length=20, index=30, kind="section", answers=3, frac=0.15, answer="Milan", p=0.15, fao=40),
]
ALIASES = {"q1": ["Paris"], "q2": ["New York"], "q3": ["Oslo"], "q4": ["Milan"]}


def test_navigation_accuracy():
    assert navigation_accuracy(SIX) == pytest.approx(2 / 6)
    assert navigation_accuracy([outcome("a", "d", True)] * 3) == 1.0
    assert navigation_accuracy([outcome("a", "d", True), outcome("b", "d", False)]) == 0.5
    with pytest.raises(ValueError):
        navigation_accuracy([])


def test_aggregated_accuracy():
    # q1 credited through d1, q3 correct; q2 and q4 never
    assert aggregated_accuracy(SIX) == 0.5
    assert aggregated_accuracy([outcome("q", "a", False), outcome("q", "b", True)]) == 1.0
    with pytest.raises(ValueError):
        aggregated_accuracy([])


def test_qa_metrics_fixture():
    em, f1 = qa_metrics(SIX, ALIASES)
    # q1: Paris (0.6) beats Lyon -> 1/1; q2: "New York City" vs "New York": P=2/3, R=1 -> F1 0.8
    # q3: no prediction -> 0/0; q4: Rome 0.2 beats Milan 0.15 -> 0/0
    assert em == pytest.approx(1 / 4)
    assert f1 == pytest.approx((1 + 0.8) / 4)


def test_qa_metrics_perfect_and_missing():
    outs = [outcome("a", "d", True, answer="x", p=0.9), outcome("b", "d", True, answer="y", p=0.9)]
    assert qa_metrics(outs, {"a": ["x"], "b": ["y"]}) == (1.0, 1.0)
    assert qa_metrics(outs, {"a": ["x"], "b": ["y"], "c": ["z"]}) == (pytest.approx(2 / 3), pytest.approx(2 / 3))


def test_path_stats_fixture():
    ps = path_stats(SIX)
    assert ps.n == 6
    assert ps.path_length_mean == pytest.approx(141 / 6)
    assert (ps.path_length_min, ps.path_length_max) == (1, 100)
    assert ps.answer_actions_mean == pytest.approx(7 / 6)
    assert ps.token_percent_mean == pytest.approx(100 * 0.8 / 6)
    assert ps.stop_kind_percent == pytest.approx({"paragraph": 50.0, "section": 100 / 6, "sentence": 100 / 6, "title": 100 / 6})
    assert sum(ps.stop_kind_percent.values()) == pytest.approx(100.0)
    single = path_stats(SIX[:1])
    assert single.path_length_min == single.path_length_max == 3


def test_stop_index_histogram_fixture():
    h = stop_index_histogram(SIX)
    assert h.counts == {0: 1, 4: 2, 9: 1, 12: 1, 30: 1}
    assert h.median == 6.5
    assert stop_index_histogram([]).median is None


def test_accuracy_by_fao_fixture():
    rows = accuracy_by_fao(SIX, [0, 5, 10, 11, 50])
    # [0,5): fao 4 right, 2 wrong; [5,10): fao 7 right; [10,11) empty; [11,50): 25, 12, 40 all wrong
    assert [(r["lo"], r["hi"], r["count"]) for r in rows] == [(0, 5, 2), (5, 10, 1), (11, 50, 3)]
    assert [r["accuracy"] for r in rows] == [0.5, 1.0, 0.0]
    assert sum(r["fraction"] for r in rows) == pytest.approx(1.0)
    whole = accuracy_by_fao(SIX, [0, 1000])
    assert len(whole) == 1 and whole[0]["accuracy"] == navigation_accuracy(SIX)
    with pytest.raises(ValueError):
        accuracy_by_fao(SIX, [5])
    with pytest.raises(ValueError):
        accuracy_by_fao([outcome("a", "d", True)], [0, 5])


def test_accuracy_by_fao_external_map():
    outs = [outcome("a", "d", True), outcome("b", "d", False)]
    rows = accuracy_by_fao(outs, [0, 10, 20], {("a", "d"): 3, ("b", "d"): 15})
    assert [r["accuracy"] for r in rows] == [1.0, 0.0]


def test_deep_accuracy():
    assert deep_accuracy(SIX) == 0.0  # faos 25 and 40, both wrong
    assert deep_accuracy(SIX, min_fao=3) == pytest.approx(2 / 5)  # 4 and 7 right; 25, 12, 40 wrong
    assert deep_accuracy(SIX[:1]) is None


# --- token consumption on the Phuket tree (ids: 0 title[2], 1 Name[1], 2 para[25]
# with sentences 3[13] and 4[12], 5 History[1], 6 para[12] > 7 sentence, 8 Geography[1], 9 para[15])


def test_token_count(phuket):
    assert phuket.token_count == 2 + 1 + 25 + 1 + 12 + 1 + 15


def test_tokens_consumed_prefixes(phuket):
    assert tokens_consumed(phuket, [0]) == 2
    assert tokens_consumed(phuket, [0, 1, 2]) == 2 + 1 + 20  # 20-token prefix of the paragraph
    assert tokens_consumed(phuket, [2]) == 23  # ancestors are observed too
    assert tokens_consumed(phuket, [0, 0, 1, 1]) == 3  # revisits are free


def test_tokens_consumed_sentences_and_reading(phuket):
    # the sentence's 13 tokens add to the paragraph's 20-token prefix, capped at 25
    assert tokens_consumed(phuket, [3]) == 2 + 1 + 25
    assert tokens_consumed(phuket, [7]) == 2 + 1 + 12
    # reading a paragraph sees all of it
    assert tokens_consumed(phuket, [2], read=[2]) == 28
    assert tokens_consumed(phuket, [4], read=[4]) == 28  # sentence reads its paragraph
    everything = tokens_consumed(phuket, range(10), read=[2, 6, 9])
    assert everything == phuket.token_count


def test_outcome_from_trace(phuket):
    env = NavEnv(phuket, ["q"], extractor=OracleExtractor(), aliases=["Thailand"], qid="qp")
    env.reset(budget=100)
    for a in (Action.RIGHT, Action.DOWN, Action.ANSWER, Action.STOP):
        env.step(a)
    o = outcome_from_trace(phuket, "qp", env.episode.trace)
    # 0 -> (RIGHT stays) 0 -> DOWN 1; ANSWER and STOP at 1 read the section label
    assert o.stop_index == 1 and o.stop_kind == "section" and not o.correct
    assert (o.path_length, o.answer_action_count) == (4, 1)
    assert o.tokens_consumed == 3
    assert o.token_fraction == pytest.approx(3 / 57)
    with pytest.raises(ValueError):
        outcome_from_trace(phuket, "qp", [])


def test_outcome_at_node(phuket):
    o = outcome_at_node(phuket, "q", 6, "Thailand", 0.9)
    assert o.correct and o.stop_index == 4 and o.path_length == 0
    assert o.tokens_consumed == 2 + 1 + 12
    assert outcome_at_node(phuket, "q", 7, read=False).correct  # sentence evaluated at its paragraph


def test_outcome_contract_on_random_walks(small_corpus):
    rng = np.random.default_rng(0)
    for s in small_corpus:
        for tree in s.documents:
            env = NavEnv(tree, s.question_tokens, qid=s.question_id)
            random_walk(env, rng, budget=100)
            o = outcome_from_trace(tree, s.question_id, env.episode.trace)
            assert 0.0 <= o.token_fraction <= 1.0
            assert 1 <= o.path_length <= 100


outcomes = st.lists(
    st.builds(
        lambda q, d, c, a, p: outcome(f"q{q}", f"d{d}", c, answer=a, p=p),
        st.integers(0, 5),
        st.integers(0, 2),
        st.booleans(),
        st.sampled_from([None, "red", "blue", "red car", "the blue"]),
        st.floats(0.0, 1.0),
    ),
    min_size=1,
    max_size=20,
)


@given(outcomes)
@settings(max_examples=200, deadline=None)
def test_single_document_questions_agree(outs):
    groups = by_question(outs)
    single = [g[0] for g in groups.values() if len(g) == 1]
    if single:
        assert aggregated_accuracy(single) == navigation_accuracy(single)


@given(outcomes, st.dictionaries(st.sampled_from([f"q{i}" for i in range(6)]), st.lists(st.sampled_from(["red", "blue car", "the red"]), min_size=1, max_size=2)))
@settings(max_examples=200, deadline=None)
def test_em_at_most_f1(outs, aliases):
    em, f1 = qa_metrics(outs, aliases)
    assert em <= f1 + 1e-12


def test_reports_reproducible_from_trace_files(small_corpus, tmp_path):
    rng = np.random.default_rng(1)
    trees = {}
    records = []
    for s in small_corpus:
        for tree in s.documents:
            trees[tree.doc_id] = tree
            env = NavEnv(tree, s.question_tokens, qid=s.question_id)
            random_walk(env, rng)
            records.append({"qid": s.question_id, "doc_id": tree.doc_id, "steps": env.episode.trace})
    records.append({"qid": small_corpus[0].question_id, "doc_id": small_corpus[0].documents[0].doc_id, "node_id": 1})
    write_traces(tmp_path / "t.jsonl", records)
    a = outcomes_from_records(read_traces(tmp_path / "t.jsonl"), trees)
    b = outcomes_from_records(records, trees)
    assert a == b
    rep = report(a, small_corpus)
    assert rep["n_pairs"] == len(records)
    write_report(tmp_path / "r1" / "report.json", rep, a, small_corpus)
    write_report(tmp_path / "r2" / "report.json", report(b, small_corpus), b, small_corpus)
    for name in ("report.json", "report.stop_index.csv", "report.accuracy_by_fao.csv", "report.fao.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    rows = list(csv.reader(open(tmp_path / "r1" / "report.stop_index.csv")))
    assert rows[0] == ["index", "count"] and rows[-1][0] == "median"


def test_outcome_dict_round_trip():
    o = SIX[2]
    assert NavOutcome.from_dict(o.to_dict()) == o
