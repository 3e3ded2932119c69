import json
from pathlib import Path

import pytest
import torch

from treenav.corpus import CorpusSpec, generate_corpus
from treenav.doctree import annotate_answers, ingest_document

FIXTURES = Path(__file__).parent / "fixtures"

torch.set_num_threads(1)


def load_record(name):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture
def phuket():
    """10-node tree; "Thailand" sits in the History paragraph (index 4)."""
    return annotate_answers(ingest_document(load_record("phuket.json")), ["Thailand"])


@pytest.fixture
def phuket_preface():
    return ingest_document(load_record("phuket_preface.json"))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusSpec(num_docs=20, seed=3))


def phuket_transitions():
    """Three transitions on the Phuket tree, one with a multi-token answer attached."""
    from treenav.env import Action, NavEnv, make_state
    from treenav.reader import extract_oracle

    tree = annotate_answers(ingest_document(load_record("phuket.json")), ["Thailand"])
    env = NavEnv(tree, ["where", "is", "Phuket", "?"])
    pred = extract_oracle([], list(tree[6].label_tokens), ["Kingdom of Thailand"])
    out = []
    for node, action, ap in ((1, Action.DOWN, None), (6, Action.ANSWER, None), (6, Action.STOP, pred)):
        st = make_state(tree, node, env.question, 1, ap)
        out.append((st, action, env.transition(st, action)))
    return tree, out


def qnet_fixture(dtype=torch.float64, seed=0):
    """Desk-config online/target nets, vocab and a 3-transition batch."""
    import numpy as np

    from treenav.qnet import Batch, EncoderConfig, Vocab, build_qnet, encode_state

    _, trans = phuket_transitions()
    seqs = []
    for st, _, res in trans:
        seqs += [st.question_tokens, st.observation_tokens, st.answer_tokens, res.next_state.observation_tokens, res.next_state.answer_tokens]
    vocab = Vocab.build(seqs)
    online = build_qnet(EncoderConfig.preset("desk"), vocab, seed=seed, dtype=dtype)
    target = build_qnet(EncoderConfig.preset("desk"), vocab, seed=seed + 1, dtype=dtype)
    batch = Batch(
        [encode_state(st, vocab) for st, _, _ in trans],
        np.array([int(a) for _, a, _ in trans]),
        np.array([r.reward for _, _, r in trans]),
        [encode_state(r.next_state, vocab) for _, _, r in trans],
        np.array([r.terminal for _, _, r in trans]),
    )
    return online, target, vocab, batch


def random_nav_states(samples, n, seed=0):
    """``n`` states at random nodes of random (question, document) pairs; about
    a third carry an answer prediction."""
    import numpy as np

    from treenav.env import Action, NavEnv

    rng = np.random.default_rng(seed)
    pairs = [(s, d) for s in samples for d in s.documents]
    out = []
    for _ in range(n):
        s, d = pairs[int(rng.integers(len(pairs)))]
        env = NavEnv(d, s.question_tokens)
        st = env.make_state(int(rng.integers(len(d))), int(rng.integers(0, 30)))
        if rng.random() < 0.33:
            st = env.transition(st, Action.ANSWER).next_state
        out.append(st)
    return out


# --- acceptance summary ----------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
