"""Tree-navigation MDP: states, movement rules, reward and episode control."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .doctree import DocTree, NodeKind
from .reader import AnswerPrediction, ExtractionContext, Extractor, OverlapExtractor

NODE_PREFIX_TOKENS = 20
MAX_OBSERVATION_TOKENS = 120
TRAIN_BUDGET = 30
EVAL_BUDGET = 100

STOP_HIT_REWARD = 2.0
ANSWER_PENALTY = -0.06
MOVE_PENALTY = -0.02


class Action(enum.IntEnum):
    DOWN = 0
    RIGHT = 1
    LEFT = 2
    UP_RIGHT = 3
    UP_LEFT = 4
    ANSWER = 5
    STOP = 6

    @property
    def is_move(self) -> bool:
        return self < Action.ANSWER


MOVES = tuple(a for a in Action if a.is_move)
N_ACTIONS = len(Action)


def legal_actions(coupled: bool = False) -> tuple[Action, ...]:
    if coupled:
        return MOVES + (Action.STOP,)
    return tuple(Action)


def move(tree: DocTree, node_id: int, action: Action) -> int:
    """Target of a movement action; illegal moves leave the agent in place."""
    node = tree[node_id]
    if action == Action.DOWN:
        return node.children[0] if node.children else node_id
    if node.parent is None:
        return node_id
    parent = tree[node.parent]
    pos = parent.children.index(node_id)
    if action == Action.RIGHT:
        return parent.children[pos + 1] if pos + 1 < len(parent.children) else node_id
    if action == Action.LEFT:
        return parent.children[pos - 1] if pos > 0 else node_id
    if parent.parent is None:
        return node_id
    grand = tree[parent.parent]
    ppos = grand.children.index(parent.id)
    if action == Action.UP_RIGHT:
        return grand.children[ppos + 1] if ppos + 1 < len(grand.children) else node_id
    if action == Action.UP_LEFT:
        return grand.children[ppos - 1] if ppos > 0 else node_id
    raise ValueError(f"{action!r} is not a movement action")


def observation(tree: DocTree, node_id: int, k: int = NODE_PREFIX_TOKENS, cap: int = MAX_OBSERVATION_TOKENS) -> tuple[str, ...]:
    path = []
    u: Optional[int] = node_id
    while u is not None:
        path.append(u)
        u = tree[u].parent
    toks: list[str] = []
    for u in reversed(path):
        toks.extend(tree[u].label_tokens[:k])
    return tuple(toks[-cap:])


def navigation_features(tree: DocTree, node_id: int, step: int) -> tuple[float, ...]:
    start, end = tree.sibling_pos[node_id]
    parent = tree[node_id].parent
    pstart, pend = tree.sibling_pos[parent] if parent is not None else (0, 0)
    return (
        float(tree.heights[node_id]),
        float(tree.depths[node_id]),
        float(start),
        float(end),
        float(pstart),
        float(pend),
        float(step),
    )


NULL_ANSWER_FEATURES = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class NavState:
    node: int
    index: int
    kind: NodeKind
    question_tokens: tuple[str, ...]
    observation_tokens: tuple[str, ...]
    answer_pred: Optional[AnswerPrediction]
    phi_n: tuple[float, ...]
    phi_z: tuple[float, ...]

    @property
    def step(self) -> int:
        return int(self.phi_n[6])

    @property
    def answer_tokens(self) -> tuple[str, ...]:
        return self.answer_pred.tokens if self.answer_pred is not None else ()


def make_state(
    tree: DocTree,
    node_id: int,
    question: Sequence[str],
    step: int,
    answer_pred: Optional[AnswerPrediction] = None,
) -> NavState:
    node = tree[node_id]
    return NavState(
        node=node_id,
        index=node.index,
        kind=node.kind,
        question_tokens=tuple(question),
        observation_tokens=observation(tree, node_id),
        answer_pred=answer_pred,
        phi_n=navigation_features(tree, node_id, step),
        phi_z=answer_pred.features if answer_pred is not None else NULL_ANSWER_FEATURES,
    )


def stop_distance(tree: DocTree, node_id: int) -> int:
    """Index distance from ``node_id`` to the nearest answer node."""
    answers = tree.answer_indices
    if not answers:
        raise ValueError(f"document {tree.doc_id} has no answer node")
    n = tree[node_id].index
    return min(abs(n - a) for a in answers)


def reward(tree: DocTree, node_id: int, action: Action) -> float:
    if action == Action.STOP:
        d = stop_distance(tree, node_id)
        if d == 0:
            return STOP_HIT_REWARD
        return 1.0 - d / tree.max_index
    if action == Action.ANSWER:
        return ANSWER_PENALTY
    return MOVE_PENALTY


@dataclass(frozen=True)
class StepResult:
    next_state: NavState
    reward: float
    terminal: bool
    emitted_answer: Optional[AnswerPrediction] = None
    action: Action = Action.STOP


@dataclass
class Episode:
    qid: str
    doc_id: str
    budget: int
    step_count: int = 0
    trace: list[dict] = field(default_factory=list)
    done: bool = False
    final_answer: Optional[AnswerPrediction] = None


class NavEnv:
    """One (question, document) pair.

    Transitions are a pure function of (state, action): an answer prediction
    stays attached to the state while the agent remains on the node where it
    was produced and is dropped on any successful move.
    """

    def __init__(
        self,
        tree: DocTree,
        question: Sequence[str],
        extractor: Optional[Extractor] = None,
        budget: int = TRAIN_BUDGET,
        coupled: bool = False,
        qid: str = "",
        aliases: Sequence[str] = (),
    ):
        self.tree = tree
        self.question = tuple(question)
        self.extractor = extractor or OverlapExtractor()
        self.budget = budget
        self.coupled = coupled
        self.qid = qid
        self.aliases = tuple(aliases)
        self.actions = legal_actions(coupled)
        self._extract_cache: dict[int, AnswerPrediction] = {}
        self.episode: Optional[Episode] = None
        self.state: Optional[NavState] = None

    # --- pure pieces -----------------------------------------------------

    def make_state(self, node_id: int, step: int, answer_pred: Optional[AnswerPrediction] = None) -> NavState:
        return make_state(self.tree, node_id, self.question, step, answer_pred)

    def state_at(self, node_id: int) -> NavState:
        """State for an arbitrary node; the step counter is the node's depth."""
        return self.make_state(node_id, self.tree.depths[node_id])

    def extract(self, node_id: int) -> AnswerPrediction:
        reading = self.tree.reading_node(node_id)
        pred = self._extract_cache.get(reading.id)
        if pred is None:
            context = reading.label_tokens or ("",)
            ctx = ExtractionContext(self.qid, self.tree.doc_id, reading.index, self.aliases)
            pred = self.extractor.extract(self.question, context, ctx)
            self._extract_cache[reading.id] = pred
        return pred

    def transition(self, state: NavState, action: Action) -> StepResult:
        action = Action(action)
        if self.coupled and action == Action.ANSWER:
            raise ValueError("ANSWER is not available in coupled mode")
        r = reward(self.tree, state.node, action)
        step = state.step + 1
        if action.is_move:
            nxt = move(self.tree, state.node, action)
            pred = state.answer_pred if nxt == state.node else None
            return StepResult(self.make_state(nxt, step, pred), r, False, None, action)
        pred = state.answer_pred or self.extract(state.node)
        terminal = action == Action.STOP
        return StepResult(self.make_state(state.node, step, pred), r, terminal, pred if terminal else None, action)

    # --- episode control -------------------------------------------------

    def reset(self, budget: Optional[int] = None) -> NavState:
        if budget is not None:
            self.budget = budget
        self.episode = Episode(self.qid, self.tree.doc_id, self.budget)
        self.state = self.make_state(0, 0)
        return self.state

    def step(self, action: Action) -> StepResult:
        """Advance the episode; the last step of the budget is forced to STOP."""
        ep = self.episode
        if ep is None or ep.done:
            raise RuntimeError("episode not running; call reset()")
        action = Action(action)
        if ep.step_count >= self.budget - 1:
            action = Action.STOP
        state = self.state
        res = self.transition(state, action)
        ep.step_count += 1
        ep.trace.append(
            {
                "step": ep.step_count - 1,
                "node_id": state.node,
                "node_index": state.index,
                "node_kind": state.kind.name.lower(),
                "observation": " ".join(state.observation_tokens),
                "action": action.name,
                "reward": res.reward,
                "answer": res.next_state.answer_pred.to_dict()
                if action in (Action.ANSWER, Action.STOP) and res.next_state.answer_pred is not None
                else None,
            }
        )
        self.state = res.next_state
        if res.terminal:
            ep.done = True
            ep.final_answer = res.emitted_answer
        return res
