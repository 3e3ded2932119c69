"""DocQN / DQN training: node samplers, episode runners and the update loop.

A training episode is either a sequential rollout from the root or, with
probability ``epsilon_s`` (DocQN only), ``K`` single transitions taken from
nodes drawn out of a sampling distribution over the tree. All transitions
go to one prioritized replay buffer and one gradient update follows each
episode once the buffer holds ``memory_init`` items.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np
import torch

from .doctree import DocTree, QASample
from .env import EVAL_BUDGET, MOVES, TRAIN_BUDGET, Action, NavEnv, legal_actions, move
from .qnet import (
    Batch,
    CachedQ,
    EncodedState,
    EncoderConfig,
    Optimizer,
    QNetwork,
    Vocab,
    build_qnet,
    encode_state,
    save_checkpoint,
    sync_target,
    td_loss,
)
from .reader import Extractor, make_extractor
from .replay import PrioritizedBuffer, Transition
from .rng import fork, fork_seed

log = logging.getLogger(__name__)

SAMPLERS = ("mixture", "uniform", "backward", "sequential")
METRIC_COLUMNS = (
    "step",
    "episode",
    "loss",
    "mean_return",
    "epsilon",
    "epsilon_s",
    "beta",
    "stop_index_median",
    "sampled_episode_frac",
)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "docqn"
    coupled: bool = False
    seed: int = 1
    steps: int = 50_000
    train_budget: int = TRAIN_BUDGET
    eval_budget: int = EVAL_BUDGET
    gamma: float = 0.996
    lr: float = 1e-4
    batch_size: int = 64
    target_period: int = 100
    memory_init: int = 500
    memory_max: int = 3_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_s_start: float = 1.0
    epsilon_s_end: float = 0.5
    anneal_steps: int = 12_000
    K: int = 5
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    priority_eps: float = 1e-3
    sampler: str = "mixture"
    mixture_lambda: float = 0.5
    leaf_prob: float = 0.2
    double_q: bool = True
    clip_norm: float = 10.0
    update_unit: str = "episode"
    log_interval: int = 1_000
    checkpoint_interval: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, key: str, msg: str):
            if not cond:
                raise ValueError(f"{key}: {msg}")

        need(self.mode in ("dqn", "docqn"), "mode", "must be 'dqn' or 'docqn'")
        need(self.sampler in SAMPLERS, "sampler", f"must be one of {SAMPLERS}")
        need(
            self.sampler != "sequential",
            "sampler",
            "a sequential node distribution is not defined; sequential rollouts are the non-sampled branch",
        )
        need(0.0 <= self.gamma < 1.0, "gamma", "must be in [0, 1)")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.steps >= 0, "steps", "must be >= 0")
        need(self.train_budget >= 1, "train_budget", "must be >= 1")
        need(self.eval_budget >= 1, "eval_budget", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.target_period >= 1, "target_period", "must be >= 1")
        need(self.memory_max >= 1, "memory_max", "must be >= 1")
        need(0 <= self.memory_init <= self.memory_max, "memory_init", "must be in [0, memory_max]")
        for k in ("epsilon_start", "epsilon_end", "epsilon_s_start", "epsilon_s_end", "mixture_lambda", "leaf_prob"):
            need(0.0 <= getattr(self, k) <= 1.0, k, "must be in [0, 1]")
        for k in ("beta_start", "beta_end"):
            need(0.0 <= getattr(self, k) <= 1.0, k, "must be in [0, 1]")
        need(self.anneal_steps >= 1, "anneal_steps", "must be >= 1")
        need(self.K >= 0, "K", "must be >= 0")
        need(self.alpha >= 0, "alpha", "must be >= 0")
        need(self.priority_eps > 0, "priority_eps", "must be > 0")
        need(self.clip_norm > 0, "clip_norm", "must be > 0")
        need(self.update_unit in ("episode", "step"), "update_unit", "must be 'episode' or 'step'")
        need(self.log_interval >= 1, "log_interval", "must be >= 1")
        need(self.checkpoint_interval >= 0, "checkpoint_interval", "must be >= 0")
        need(self.dtype in ("float32", "float64"), "dtype", "must be 'float32' or 'float64'")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name == "paper":
            base = cls(
                steps=2_400_000,
                target_period=10_000,
                memory_init=50_000,
                memory_max=300_000,
                anneal_steps=1_200_000,
                log_interval=10_000,
            )
        elif name == "desk":
            # about 5k updates instead of 240k: at 1e-4 the network barely leaves its initialization
            base = cls(lr=1e-3)
        else:
            raise ValueError(f"unknown preset {name!r}")
        return replace(base, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


# ---------------------------------------------------------------------------
# schedules


def linear(start: float, end: float, step: int, horizon: int) -> float:
    frac = min(max(step / horizon, 0.0), 1.0)
    return (1.0 - frac) * start + frac * end  # exact at both endpoints


def schedules(cfg: TrainConfig, step: int) -> tuple[float, float, float]:
    """(epsilon, epsilon_s, beta) at ``step``; epsilon_s is pinned to 0 for plain DQN."""
    eps = linear(cfg.epsilon_start, cfg.epsilon_end, step, cfg.anneal_steps)
    eps_s = linear(cfg.epsilon_s_start, cfg.epsilon_s_end, step, cfg.anneal_steps) if cfg.mode == "docqn" else 0.0
    beta = linear(cfg.beta_start, cfg.beta_end, step, cfg.anneal_steps)
    return eps, eps_s, beta


# ---------------------------------------------------------------------------
# node samplers


def sample_f_U(tree: DocTree, rng: np.random.Generator, leaf_prob: float = 0.2) -> int:
    """A sentence with probability ``leaf_prob``, otherwise an inner (non-sentence) node."""
    leaves, inner = tree.sentence_ids, tree.non_sentence_ids
    pool = leaves if (rng.random() < leaf_prob and leaves) or not inner else inner
    if not pool:
        pool = leaves
    return int(pool[int(rng.integers(len(pool)))])


def answer_paragraphs(tree: DocTree) -> tuple[int, ...]:
    return tuple(i for i in tree.paragraph_ids if i in tree.answer_node_ids)


def sample_f_B(tree: DocTree, rng: np.random.Generator) -> int:
    """Start at a random answer paragraph and take 1-3 random movement actions."""
    paras = answer_paragraphs(tree)
    if not paras:
        raise ValueError(f"document {tree.doc_id} has no paragraph containing the answer")
    u = int(paras[int(rng.integers(len(paras)))])
    for _ in range(int(rng.integers(1, 4))):
        u = move(tree, u, MOVES[int(rng.integers(len(MOVES)))])
    return u


def make_sampler(cfg: TrainConfig) -> Callable[[DocTree, np.random.Generator], int]:
    if cfg.sampler == "uniform":
        return lambda tree, rng: sample_f_U(tree, rng, cfg.leaf_prob)
    if cfg.sampler == "backward":
        return sample_f_B

    def mixture(tree, rng):
        if rng.random() < cfg.mixture_lambda:
            return sample_f_U(tree, rng, cfg.leaf_prob)
        return sample_f_B(tree, rng)

    return mixture


# ---------------------------------------------------------------------------
# episodes

QFunction = Callable[[Sequence[EncodedState]], torch.Tensor]


def select_actions(
    qfn: Optional[QFunction],
    states: Sequence[EncodedState],
    epsilon: float,
    rng: np.random.Generator,
    actions: Sequence[Action],
) -> list[Action]:
    """Epsilon-greedy over ``actions``; the network is only queried for greedy picks."""
    picks: list[Optional[Action]] = []
    for _ in states:
        if rng.random() < epsilon:
            picks.append(actions[int(rng.integers(len(actions)))])
        else:
            picks.append(None)
    greedy = [i for i, a in enumerate(picks) if a is None]
    if greedy:
        if qfn is None:
            raise ValueError("greedy action requested without a Q-function")
        q = qfn([states[i] for i in greedy])
        legal = torch.tensor([int(a) for a in actions])
        best = q[:, legal].argmax(dim=1)
        for row, i in enumerate(greedy):
            picks[i] = actions[int(best[row])]
    return picks  # type: ignore[return-value]


@dataclass
class EpisodeResult:
    transitions: list[Transition]
    sampled: bool
    ret: float = 0.0
    stop_node: Optional[int] = None
    stop_index: Optional[int] = None


def run_episode_sequential(
    env: NavEnv,
    qfn: Optional[QFunction],
    epsilon: float,
    rng: np.random.Generator,
    vocab: Vocab,
    budget: Optional[int] = None,
) -> EpisodeResult:
    state = env.reset(budget)
    enc = encode_state(state, vocab)
    out: list[Transition] = []
    ret = 0.0
    while True:
        action = select_actions(qfn, [enc], epsilon, rng, env.actions)[0]
        res = env.step(action)
        nxt = encode_state(res.next_state, vocab)
        out.append(Transition(enc, int(res.action), res.reward, nxt, res.terminal))
        ret += res.reward
        enc = nxt
        if res.terminal:
            break
    return EpisodeResult(out, False, ret, res.next_state.node, res.next_state.index)


def run_episode_sampled(
    env: NavEnv,
    qfn: Optional[QFunction],
    sampler: Callable[[DocTree, np.random.Generator], int],
    K: int,
    epsilon: float,
    rng: np.random.Generator,
    vocab: Vocab,
) -> EpisodeResult:
    """K one-step transitions from sampled nodes (step counter = node depth)."""
    states = [env.state_at(sampler(env.tree, rng)) for _ in range(K)]
    encs = [encode_state(s, vocab) for s in states]
    acts = select_actions(qfn, encs, epsilon, rng, env.actions) if K else []
    out = []
    ret = 0.0
    for s, e, a in zip(states, encs, acts):
        res = env.transition(s, a)
        out.append(Transition(e, int(a), res.reward, encode_state(res.next_state, vocab), res.terminal))
        ret += res.reward
    return EpisodeResult(out, True, ret)


def run_policy(env: NavEnv, qfn: QFunction, vocab: Vocab, budget: int = EVAL_BUDGET):
    """Greedy navigation from the root; returns the finished ``Episode``."""
    state = env.reset(budget)
    legal = torch.tensor([int(a) for a in env.actions])
    while True:
        q = qfn([encode_state(state, vocab)])
        action = env.actions[int(q[0, legal].argmax())]
        res = env.step(action)
        state = res.next_state
        if res.terminal:
            return env.episode


# ---------------------------------------------------------------------------
# training loop


def build_vocab(samples: Iterable[QASample]) -> Vocab:
    def seqs():
        for s in samples:
            yield s.question_tokens
            for d in s.documents:
                for n in d.nodes:
                    yield n.label_tokens

    return Vocab.build(seqs())


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Optional[Path]):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    online: QNetwork
    target: QNetwork
    vocab: Vocab
    config: TrainConfig
    metrics: list[dict[str, Any]]
    steps: int
    episodes: int
    sampled_episodes: int
    updates: int
    target_syncs: list[int] = field(default_factory=list)
    first_update_step: Optional[int] = None
    buffer_stats: dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0


def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        samples: Sequence[QASample],
        encoder: Optional[EncoderConfig] = None,
        extractor: Optional[Extractor] = None,
        vocab: Optional[Vocab] = None,
        out_dir: Optional[Path | str] = None,
    ):
        self.cfg = config
        self.encoder = encoder or EncoderConfig.preset("desk")
        self.extractor = extractor or make_extractor("overlap")
        self.pairs = [(s, d) for s in samples for d in s.documents]
        if not self.pairs:
            raise ValueError("no (question, document) pairs to train on")
        self.vocab = vocab or build_vocab(samples)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = fork(config.seed, "train.episodes")
        self.replay_rng = fork(config.seed, "train.replay")
        self.online = build_qnet(self.encoder, self.vocab, fork_seed(config.seed, "qnet.init"), config.torch_dtype)
        self.online.train()
        self.target = sync_target(self.online)
        self.opt = Optimizer(self.online, config.lr, config.clip_norm)
        self.qfn = CachedQ(self.online)
        self.buffer: PrioritizedBuffer[Transition] = PrioritizedBuffer(config.memory_max, config.alpha, config.priority_eps)
        self.sampler = make_sampler(config)
        self.envs: dict[int, NavEnv] = {}
        self.action_mask = None
        if config.coupled:
            mask = torch.zeros(len(Action), dtype=torch.bool)
            for a in legal_actions(True):
                mask[int(a)] = True
            self.action_mask = mask.unsqueeze(0)

    def env(self, i: int) -> NavEnv:
        e = self.envs.get(i)
        if e is None:
            s, d = self.pairs[i]
            e = NavEnv(d, s.question_tokens, self.extractor, self.cfg.train_budget, self.cfg.coupled, s.question_id, s.answer_aliases)
            self.envs[i] = e
        return e

    def update(self, beta: float) -> float:
        cfg = self.cfg
        items, ids, weights = self.buffer.sample(cfg.batch_size, beta, self.replay_rng)
        batch = Batch(
            [t.state for t in items],
            np.array([t.action for t in items], dtype=np.int64),
            np.array([t.reward for t in items], dtype=np.float64),
            [t.next_state for t in items],
            np.array([t.terminal for t in items], dtype=bool),
        )
        mask = self.action_mask.expand(len(items), -1) if self.action_mask is not None else None
        loss, err = td_loss(self.online, self.target, batch, cfg.gamma, weights, cfg.double_q, mask)
        self.opt.step(loss)
        self.qfn.clear()
        self.buffer.update_priorities(ids, err)
        return loss.item()

    def checkpoint(self, path: Path, step: int) -> None:
        save_checkpoint(
            path,
            self.online,
            self.target,
            self.vocab,
            self.opt,
            {"train": self.cfg.to_dict(), "encoder": asdict(self.encoder)},
            {"episodes": self.rng.bit_generator.state, "replay": self.replay_rng.bit_generator.state},
            step,
        )

    def run(self) -> TrainResult:
        cfg = self.cfg
        t0 = time.time()
        metrics: list[dict[str, Any]] = []
        step = episodes = sampled = updates = 0
        syncs: list[int] = []
        first_update = None
        next_sync = cfg.target_period
        next_log = cfg.log_interval
        next_ckpt = cfg.checkpoint_interval or None
        losses: list[float] = []
        returns: list[float] = []
        stops: list[int] = []
        writer = None
        fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            fh = open(self.out_dir / "metrics.csv", "w", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)
        try:
            while step < cfg.steps:
                eps, eps_s, beta = schedules(cfg, step)
                env = self.env(int(self.rng.integers(len(self.pairs))))
                use_sampled = cfg.mode == "docqn" and self.rng.random() < eps_s
                if use_sampled:
                    res = run_episode_sampled(env, self.qfn, self.sampler, cfg.K, eps, self.rng, self.vocab)
                    sampled += 1
                else:
                    res = run_episode_sequential(env, self.qfn, eps, self.rng, self.vocab, cfg.train_budget)
                    returns.append(res.ret)
                    stops.append(res.stop_index)
                for t in res.transitions:
                    self.buffer.push(t)
                step += len(res.transitions)
                episodes += 1

                if len(self.buffer) >= max(cfg.memory_init, cfg.batch_size):
                    n = 1 if cfg.update_unit == "episode" else len(res.transitions)
                    for _ in range(n):
                        try:
                            losses.append(self.update(beta))
                        except FloatingPointError as e:
                            path = None
                            if self.out_dir is not None:
                                path = self.out_dir / "checkpoint.diverged.pt"
                                self.checkpoint(path, step)
                            raise TrainingDiverged(f"training diverged at step {step}: {e}", path) from e
                        updates += 1
                        if first_update is None:
                            first_update = step

                while step >= next_sync:
                    self.target = sync_target(self.online)
                    syncs.append(next_sync)
                    next_sync += cfg.target_period

                if next_ckpt is not None and step >= next_ckpt and self.out_dir is not None:
                    self.checkpoint(self.out_dir / "checkpoint.pt", step)
                    while next_ckpt <= step:
                        next_ckpt += cfg.checkpoint_interval

                if step >= next_log or step >= cfg.steps:
                    row = {
                        "step": step,
                        "episode": episodes,
                        "loss": float(np.mean(losses)) if losses else None,
                        "mean_return": float(np.mean(returns)) if returns else None,
                        "epsilon": eps,
                        "epsilon_s": eps_s,
                        "beta": beta,
                        "stop_index_median": float(np.median(stops)) if stops else None,
                        "sampled_episode_frac": sampled / episodes,
                    }
                    metrics.append(row)
                    if writer is not None:
                        writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                        fh.flush()
                    log.info(
                        "step %d episode %d loss %s return %s stop-median %s",
                        step, episodes, _fmt(row["loss"]), _fmt(row["mean_return"]), _fmt(row["stop_index_median"]),
                    )
                    losses, returns, stops = [], [], []
                    while next_log <= step:
                        next_log += cfg.log_interval
        finally:
            if fh is not None:
                fh.close()

        if self.out_dir is not None:
            self.checkpoint(self.out_dir / "checkpoint.pt", step)
            with open(self.out_dir / "events.jsonl", "w") as f:
                for s in syncs:
                    f.write(json.dumps({"event": "target_sync", "step": s}) + "\n")
        st = self.buffer.stats()
        return TrainResult(
            self.online,
            self.target,
            self.vocab,
            cfg,
            metrics,
            step,
            episodes,
            sampled,
            updates,
            syncs,
            first_update,
            asdict(st),
            time.time() - t0,
        )


def train(
    config: TrainConfig,
    samples: Sequence[QASample],
    encoder: Optional[EncoderConfig] = None,
    extractor: Optional[Extractor] = None,
    out_dir: Optional[Path | str] = None,
) -> TrainResult:
    return Trainer(config, samples, encoder, extractor, out_dir=out_dir).run()
