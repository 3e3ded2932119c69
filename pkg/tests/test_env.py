import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from treenav.doctree import annotate_answers, ingest_document
from treenav.env import (
    MAX_OBSERVATION_TOKENS,
    MOVES,
    NODE_PREFIX_TOKENS,
    Action,
    NavEnv,
    legal_actions,
    move,
    observation,
    reward,
)
from treenav.reader import OracleExtractor


def flat_tree(n_paragraphs, answer_at):
    """Title over ``n_paragraphs`` paragraphs; the answer word sits in paragraph ``answer_at`` (1-based index)."""
    nodes = [
        {"kind": "paragraph", "text": ("gold nugget here" if i == answer_at else f"filler text {i}")}
        for i in range(1, n_paragraphs + 1)
    ]
    return annotate_answers(ingest_document({"doc_id": "flat", "title": "Flat", "nodes": nodes}), ["nugget"])


def test_reward_cases():
    tree = flat_tree(50, 10)
    assert tree.max_index == 50
    assert reward(tree, tree.by_index[10], Action.STOP) == 2.0
    assert reward(tree, tree.by_index[5], Action.STOP) == pytest.approx(0.9, abs=1e-12)
    assert reward(tree, tree.by_index[15], Action.STOP) == pytest.approx(0.9, abs=1e-12)
    assert reward(tree, 0, Action.ANSWER) == -0.06
    for a in MOVES:
        assert reward(tree, 0, a) == -0.02


def test_reward_uses_nearest_answer():
    tree = flat_tree(10, 3)
    assert reward(tree, tree.by_index[8], Action.STOP) == pytest.approx(1 - 5 / 10)


def test_stop_at_sentence_uses_paragraph_index(phuket):
    assert reward(phuket, 7, Action.STOP) == 2.0


def test_reward_requires_answer(phuket_preface):
    with pytest.raises(ValueError):
        reward(phuket_preface, 0, Action.STOP)


def load_golden():
    with open(FIXTURES / "phuket_transitions.csv") as f:
        rows = [r for r in csv.DictReader(line for line in f if not line.startswith("#"))]
    return rows


def test_golden_table_is_complete(phuket):
    rows = load_golden()
    assert len(rows) == 70
    assert {(int(r["node"]), r["action"]) for r in rows} == {(n, a.name) for n in range(10) for a in Action}


@pytest.mark.parametrize("row", load_golden(), ids=lambda r: f"{r['node']}-{r['action']}")
def test_golden_transition(phuket, row):
    env = NavEnv(phuket, ["where", "is", "Phuket"])
    state = env.make_state(int(row["node"]), 0)
    res = env.transition(state, Action[row["action"]])
    assert res.next_state.node == int(row["next"])
    expected = row["reward"]
    if expected.startswith("stop:"):
        assert res.reward == 1 - int(expected[5:]) / 6
    else:
        assert res.reward == float(expected)
    assert res.terminal == bool(int(row["terminal"]))


def test_table3_row(phuket):
    env = NavEnv(phuket, ["q"])
    s = env.reset()
    s = env.step(Action.DOWN).next_state
    assert " ".join(s.observation_tokens) == "Phuket Province Name"
    assert s.phi_n == (2, 1, 0, 2, 0, 0, 1)
    assert s.phi_z == (0.0, 0.0, 0.0)


def test_up_moves_on_sibling_example():
    # v1, v2, v3 under the title; w is the child of v2
    rec = {
        "doc_id": "w",
        "title": "T",
        "nodes": [
            {"kind": "section", "text": "v1", "children": [{"kind": "paragraph", "text": "a"}]},
            {"kind": "section", "text": "v2", "children": [{"kind": "paragraph", "text": "w"}]},
            {"kind": "section", "text": "v3", "children": [{"kind": "paragraph", "text": "c"}]},
        ],
    }
    tree = ingest_document(rec)
    v1, v2, v3 = tree.root.children
    w = tree[v2].children[0]
    assert move(tree, w, Action.UP_LEFT) == v1
    assert move(tree, w, Action.UP_RIGHT) == v3
    assert move(tree, v2, Action.UP_LEFT) == v2  # no grandparent
    assert move(tree, w, Action.RIGHT) == w


def test_answer_at_sentence_reads_paragraph(phuket):
    seen = []

    class Spy(OracleExtractor):
        def extract(self, question, context, ctx):
            seen.append((tuple(context), ctx.node_index))
            return super().extract(question, context, ctx)

    env = NavEnv(phuket, ["q"], extractor=Spy(), aliases=["Thailand"])
    res = env.transition(env.make_state(7, 0), Action.ANSWER)
    assert res.reward == -0.06 and not res.terminal
    assert seen == [(phuket[6].label_tokens, 4)]
    assert res.next_state.answer_tokens == ("Thailand",)
    assert res.next_state.phi_z == res.next_state.answer_pred.features


def test_move_drops_answer_and_illegal_keeps_it(phuket):
    env = NavEnv(phuket, ["q"])
    s = env.transition(env.make_state(7, 0), Action.ANSWER).next_state
    kept = env.transition(s, Action.DOWN).next_state  # leaf: stays put
    assert kept.node == 7 and kept.answer_pred is s.answer_pred
    assert env.transition(s, Action.UP_RIGHT).next_state.answer_pred is s.answer_pred  # no uncle
    s6 = env.transition(env.make_state(6, 0), Action.ANSWER).next_state
    dropped = env.transition(s6, Action.UP_RIGHT).next_state
    assert dropped.node == 8
    assert dropped.answer_pred is None and dropped.phi_z == (0.0, 0.0, 0.0)
    stop = env.transition(s, Action.STOP)
    assert stop.emitted_answer is s.answer_pred


def test_stop_without_answer_extracts(phuket):
    env = NavEnv(phuket, ["q"], extractor=OracleExtractor(), aliases=["Thailand"])
    res = env.transition(env.make_state(6, 0), Action.STOP)
    assert res.terminal and res.emitted_answer.tokens == ("Thailand",)


def test_coupled_mode(phuket):
    env = NavEnv(phuket, ["q"], coupled=True)
    assert Action.ANSWER not in env.actions
    assert legal_actions(True) == MOVES + (Action.STOP,)
    with pytest.raises(ValueError):
        env.transition(env.make_state(0, 0), Action.ANSWER)


def test_budget_forces_stop(phuket):
    env = NavEnv(phuket, ["q"], budget=4)
    env.reset()
    results = [env.step(Action.RIGHT) for _ in range(4)]
    assert [r.terminal for r in results] == [False, False, False, True]
    assert results[-1].action == Action.STOP
    assert env.episode.done and len(env.episode.trace) == 4
    assert env.episode.trace[-1]["action"] == "STOP"
    with pytest.raises(RuntimeError):
        env.step(Action.DOWN)


def test_step_counter_in_features(phuket):
    env = NavEnv(phuket, ["q"])
    env.reset()
    for i in range(1, 4):
        s = env.step(Action.LEFT).next_state
        assert s.phi_n[6] == i


def deep_path_tree(width=30):
    """title > section > subsection > paragraph > sentence, each label ``width`` tokens long."""
    def words(tag):
        return " ".join(f"{tag}{i}" for i in range(width))

    sent = {"kind": "sentence", "text": words("s")}
    para = {"kind": "paragraph", "text": "", "children": [sent]}
    sub = {"kind": "subsection", "text": words("u"), "children": [para]}
    sec = {"kind": "section", "text": words("c"), "children": [sub]}
    return ingest_document({"doc_id": "deep", "title": words("t"), "nodes": [sec]})


def test_observation_cap_fixture():
    # Paragraph labels are their sentences' text, so the path is t, c, u, s, s.
    tree = deep_path_tree()
    leaf = len(tree) - 1
    assert tree[leaf].label_tokens[:1] == ("s0",)
    # 5 nodes x 30-token prefixes = 150 tokens; the cap drops the earliest 30
    obs = observation(tree, leaf, k=30)
    assert len(obs) == MAX_OBSERVATION_TOKENS
    assert obs[0] == "c0" and obs[-1] == "s29"
    # with the default 20-token prefix the deepest valid path is 100 tokens
    obs20 = observation(tree, leaf)
    assert len(obs20) == 5 * NODE_PREFIX_TOKENS
    assert obs20[:2] == ("t0", "t1") and obs20[-1] == "s19"


# --- randomized trees ------------------------------------------------------

token = st.sampled_from(["alpha", "beta", "gamma", "delta", "eps", ",", "."])
label = st.lists(token, min_size=1, max_size=40).map(" ".join)


@st.composite
def paragraph(draw):
    sentences = draw(st.lists(label, max_size=3))
    if not sentences:
        return {"kind": "paragraph", "text": draw(label)}
    return {"kind": "paragraph", "text": "", "children": [{"kind": "sentence", "text": t} for t in sentences]}


@st.composite
def section_tree(draw, depth=0):
    if depth >= 2 or draw(st.booleans()):
        return draw(paragraph())
    kids = draw(st.lists(section_tree(depth + 1), min_size=1, max_size=3))
    return {"kind": ("section", "subsection")[depth], "text": draw(label), "children": kids}


records = st.builds(
    lambda title, nodes: {"doc_id": "r", "title": title, "nodes": nodes},
    label,
    st.lists(section_tree(), min_size=1, max_size=4),
)


def path_to_root(tree, u):
    out = []
    while u is not None:
        out.append(u)
        u = tree[u].parent
    return out[::-1]


@given(records)
@settings(max_examples=1000, deadline=None)
def test_observation_contract(rec):
    tree = ingest_document(rec)
    for u in range(len(tree)):
        obs = observation(tree, u)
        assert len(obs) <= MAX_OBSERVATION_TOKENS
        full = [t for v in path_to_root(tree, u) for t in tree[v].label_tokens[:NODE_PREFIX_TOKENS]]
        assert list(obs) == full[-MAX_OBSERVATION_TOKENS:]
        for v in path_to_root(tree, u):
            contributed = tree[v].label_tokens[:NODE_PREFIX_TOKENS]
            assert len(contributed) <= NODE_PREFIX_TOKENS


@given(records, st.data())
@settings(max_examples=200, deadline=None)
def test_moves_stay_in_tree_and_are_local(rec, data):
    tree = ingest_document(rec)
    u = data.draw(st.integers(0, len(tree) - 1))
    for a in MOVES:
        v = move(tree, u, a)
        assert 0 <= v < len(tree)
        if v != u:
            du, dv = tree.depths[u], tree.depths[v]
            assert dv == du + (1 if a == Action.DOWN else 0) - (1 if a in (Action.UP_LEFT, Action.UP_RIGHT) else 0)
    # LEFT undoes RIGHT
    r = move(tree, u, Action.RIGHT)
    if r != u:
        assert move(tree, r, Action.LEFT) == u


@given(records, st.data())
@settings(max_examples=200, deadline=None)
def test_features_match_tree(rec, data):
    tree = ingest_document(rec)
    u = data.draw(st.integers(0, len(tree) - 1))
    env = NavEnv(tree, ["q"])
    s = env.make_state(u, 3)
    h, d, start, end, pstart, pend, step = s.phi_n
    node = tree[u]
    assert d == len(path_to_root(tree, u)) - 1
    assert step == 3
    if node.parent is None:
        assert (start, end, pstart, pend) == (0, 0, 0, 0)
    else:
        sibs = tree[node.parent].children
        assert start == sibs.index(u) and end == len(sibs) - 1 - sibs.index(u)
    assert h == (0 if not node.children else 1 + max(tree.heights[c] for c in node.children))
