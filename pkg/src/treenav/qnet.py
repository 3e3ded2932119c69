"""Dueling action-value network over navigation states.

Tokens are embedded as ``[word ; char-CNN]``; the question goes through a
bidirectional LSTM and the observation through a unidirectional LSTM, each
summarized by self-attention. The answer prediction's last LSTM state is
joined with its confidence features. A fusion layer feeds separate value and
advantage branches, both of which also see the navigation features.

Batches are right-padded; the backward direction of the question encoder
runs on sequences reversed within their own lengths, so no packed sequences
are needed.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .env import N_ACTIONS, NavState

PAD, UNK, NULL = 0, 1, 2
NULL_TOKEN = "<null>"
CHECKPOINT_FORMAT = "treenav-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    word_dim: int = 16
    char_dim: int = 8
    conv_filter_size: int = 3
    hidden_dim: int = 32
    ffnn1_dim: int = 64
    ffnn2_dim: int = 32
    dropout_rate: float = 0.0
    attention_dim: Optional[int] = None  # None -> hidden_dim
    max_word_chars: int = 16

    def __post_init__(self):
        for f in ("word_dim", "char_dim", "conv_filter_size", "hidden_dim", "ffnn1_dim", "ffnn2_dim", "max_word_chars"):
            if getattr(self, f) < 1:
                raise ValueError(f"encoder.{f} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("encoder.dropout_rate must be in [0, 1)")
        if self.max_word_chars < self.conv_filter_size:
            raise ValueError("encoder.max_word_chars must be >= conv_filter_size")

    @property
    def att_dim(self) -> int:
        return self.attention_dim or self.hidden_dim

    @classmethod
    def preset(cls, name: str) -> "EncoderConfig":
        if name == "paper":
            return cls(300, 20, 5, 300, 512, 256, 0.2)
        if name == "desk":
            return cls(16, 8, 3, 32, 64, 32, 0.0)
        raise ValueError(f"unknown encoder preset {name!r}")


class Vocab:
    """Word indices (lowercased; row 1 is the trained UNK) plus a token table.

    Every distinct token string ever encoded gets a token id whose character
    row is stored once, so a batch runs the char CNN on its distinct tokens
    only.
    """

    def __init__(self, words: Sequence[str], chars: Sequence[str], max_word_chars: int = 16):
        self.words = ["<pad>", "<unk>", NULL_TOKEN] + [w for w in words if w not in ("<pad>", "<unk>", NULL_TOKEN)]
        self.word2id = {w: i for i, w in enumerate(self.words)}
        self.chars = ["<pad>", "<unk>"] + list(chars)
        self.char2id = {c: i for i, c in enumerate(self.chars)}
        self.max_word_chars = max_word_chars
        self._tok2id: dict[str, int] = {}
        self._tok_chars: list[np.ndarray] = []
        self._cache: dict[tuple[str, ...], tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def build(cls, token_seqs, min_count: int = 1, max_word_chars: int = 16) -> "Vocab":
        from collections import Counter

        wc: Counter = Counter()
        cc: Counter = Counter()
        for seq in token_seqs:
            for t in seq:
                t = t.lower()
                wc[t] += 1
                cc.update(t[:max_word_chars])
        words = sorted(w for w, n in wc.items() if n >= min_count)
        return cls(words, sorted(cc), max_word_chars)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    def token_id(self, token: str) -> int:
        low = token if token == NULL_TOKEN else token.lower()
        i = self._tok2id.get(low)
        if i is None:
            row = np.zeros(self.max_word_chars, dtype=np.int64)
            if low == NULL_TOKEN:
                row[0] = UNK
            else:
                for j, ch in enumerate(low[: self.max_word_chars]):
                    row[j] = self.char2id.get(ch, UNK)
            i = len(self._tok_chars)
            self._tok2id[low] = i
            self._tok_chars.append(row)
        return i

    def token_chars(self, token_ids: np.ndarray) -> np.ndarray:
        return np.stack([self._tok_chars[i] for i in token_ids])

    def encode(self, tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(word ids, token ids) for a non-empty token sequence."""
        key = tuple(tokens)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not key:
            raise ValueError("cannot encode an empty token sequence")
        w = np.array(
            [NULL if t == NULL_TOKEN else self.word2id.get(t.lower(), UNK) for t in key], dtype=np.int64
        )
        tid = np.array([self.token_id(t) for t in key], dtype=np.int64)
        if len(self._cache) > 200_000:
            self._cache.clear()
        self._cache[key] = (w, tid)
        return w, tid

    def chars_of(self, tokens: Sequence[str]) -> np.ndarray:
        """[L, max_word_chars] character ids."""
        return self.token_chars(self.encode(tokens)[1])

    def to_dict(self) -> dict[str, Any]:
        return {"words": self.words[3:], "chars": self.chars[2:], "max_word_chars": self.max_word_chars}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Vocab":
        return cls(d["words"], d["chars"], d["max_word_chars"])


class EncodedState(NamedTuple):
    q_words: np.ndarray
    q_toks: np.ndarray
    o_words: np.ndarray
    o_toks: np.ndarray
    z_words: np.ndarray
    z_toks: np.ndarray
    phi_n: np.ndarray
    phi_z: np.ndarray


def encode_state(state: NavState, vocab: Vocab) -> EncodedState:
    """Token ids index ``vocab``'s own token table; encode again for another Vocab instance."""
    qw, qt = vocab.encode(state.question_tokens)
    ow, ot = vocab.encode(state.observation_tokens or (NULL_TOKEN,))
    zw, zt = vocab.encode(state.answer_tokens or (NULL_TOKEN,))
    return EncodedState(
        qw, qt, ow, ot, zw, zt,
        np.asarray(state.phi_n, dtype=np.float32),
        np.asarray(state.phi_z, dtype=np.float32),
    )


def _pad(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    out = np.zeros((len(seqs), int(lens.max())), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lens


def _distinct(seqs: Sequence[np.ndarray]) -> tuple[list[int], np.ndarray]:
    """First-occurrence positions of the distinct sequences and each row's distinct index."""
    first: dict[bytes, int] = {}
    rows = np.empty(len(seqs), dtype=np.int64)
    keep = []
    for i, s in enumerate(seqs):
        k = s.tobytes()
        j = first.get(k)
        if j is None:
            j = first[k] = len(keep)
            keep.append(i)
        rows[i] = j
    return keep, rows


def collate(states: Sequence[EncodedState], vocab: Vocab, dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor]:
    """Right-padded batch tensors.

    Each distinct question, observation and answer sequence appears once in
    ``{q,o,z}_words``; ``{q,o,z}_rows`` map batch rows onto them. ``chars``
    holds one row per distinct token and ``*_toks`` index into it.
    """
    b: dict[str, torch.Tensor] = {}
    toks = {}
    for name in ("q", "o", "z"):
        keep, rows = _distinct([getattr(s, f"{name}_toks") for s in states])
        w, lens = _pad([getattr(states[i], f"{name}_words") for i in keep])
        t, _ = _pad([getattr(states[i], f"{name}_toks") for i in keep])
        b[f"{name}_words"] = torch.from_numpy(w)
        b[f"{name}_len"] = torch.from_numpy(lens)
        b[f"{name}_rows"] = torch.from_numpy(rows)
        toks[name] = t
    uniq, inv = np.unique(np.concatenate([toks[n].ravel() for n in ("q", "o", "z")]), return_inverse=True)
    off = 0
    for name in ("q", "o", "z"):
        n = toks[name].size
        b[f"{name}_toks"] = torch.from_numpy(inv[off : off + n].reshape(toks[name].shape))
        off += n
    b["chars"] = torch.from_numpy(vocab.token_chars(uniq))
    b["phi_n"] = torch.from_numpy(np.stack([s.phi_n for s in states])).to(dtype)
    b["phi_z"] = torch.from_numpy(np.stack([s.phi_z for s in states])).to(dtype)
    return b


class QValues(NamedTuple):
    q: torch.Tensor  # [B, A]
    value: torch.Tensor  # [B, 1]
    advantage: torch.Tensor  # [B, A]


def dueling(value: torch.Tensor, advantage: torch.Tensor) -> torch.Tensor:
    return value + (advantage - advantage.mean(dim=-1, keepdim=True))


def feature_transform(x: torch.Tensor) -> torch.Tensor:
    """Signed log scaling; keeps step counters and token counts in a sane range."""
    return torch.sign(x) * torch.log1p(torch.abs(x))


class LSTM(nn.Module):
    """Single-layer unidirectional LSTM over right-padded batches.

    Outputs at valid positions do not depend on the padding that follows
    them, so no packing is needed; backward directions are run on
    :func:`reverse_padded` inputs.
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.cell = nn.LSTM(input_dim, hidden_dim, batch_first=True)
        with torch.no_grad():
            self.cell.bias_ih_l0[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate
            self.cell.bias_hh_l0[hidden_dim : 2 * hidden_dim] = 0.0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.cell(x)[0]


def reverse_padded(x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Reverse each sequence within its length; padding stays at the end."""
    L = x.shape[1]
    t = torch.arange(L, device=x.device).unsqueeze(0)
    idx = torch.where(t < lengths.unsqueeze(1), lengths.unsqueeze(1) - 1 - t, t)
    return x.gather(1, idx.unsqueeze(-1).expand_as(x))


class SelfAttention(nn.Module):
    """Two-layer scorer + softmax over valid positions."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.hidden = nn.Linear(dim, hidden)
        self.score = nn.Linear(hidden, 1)

    def forward(self, u: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        logits = self.score(torch.tanh(self.hidden(u))).squeeze(-1)
        mask = torch.arange(u.shape[1], device=u.device).unsqueeze(0) < lengths.unsqueeze(1)
        logits = logits.masked_fill(~mask, float("-inf"))
        alpha = torch.softmax(logits, dim=-1)
        return (alpha.unsqueeze(-1) * u).sum(dim=1), alpha


class QNetwork(nn.Module):
    def __init__(self, config: EncoderConfig, vocab_size: int, char_vocab_size: int, n_actions: int = N_ACTIONS):
        super().__init__()
        self.config = config
        self.n_actions = n_actions
        cfg = config
        H = cfg.hidden_dim
        tok_dim = cfg.word_dim + cfg.char_dim
        self.word_emb = nn.Embedding(vocab_size, cfg.word_dim, padding_idx=PAD)
        nn.init.normal_(self.word_emb.weight, 0.0, 0.1)
        with torch.no_grad():
            self.word_emb.weight[PAD].zero_()
        # no padding_idx: padded character slots fall inside conv windows, so
        # the padding character gets a trained embedding of its own
        self.char_emb = nn.Embedding(char_vocab_size, cfg.char_dim)
        nn.init.normal_(self.char_emb.weight, 0.0, 0.1)
        self.char_conv = nn.Conv1d(cfg.char_dim, cfg.char_dim, cfg.conv_filter_size)
        self.q_fwd = LSTM(tok_dim, H)
        self.q_bwd = LSTM(tok_dim, H)
        self.q_att = SelfAttention(2 * H, cfg.att_dim)
        self.o_lstm = LSTM(tok_dim, H)
        self.o_att = SelfAttention(H, cfg.att_dim)
        self.z_lstm = LSTM(tok_dim, H)
        self.fuse = nn.Linear(2 * H + H + H + 3, cfg.ffnn1_dim)
        self.value_hidden = nn.Linear(cfg.ffnn1_dim, cfg.ffnn2_dim)
        self.adv_hidden = nn.Linear(cfg.ffnn1_dim, cfg.ffnn2_dim)
        self.value_out = nn.Linear(cfg.ffnn2_dim + 7, 1)
        self.adv_out = nn.Linear(cfg.ffnn2_dim + 7, n_actions)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    # --- encoders ---------------------------------------------------------

    def char_vectors(self, chars: torch.Tensor) -> torch.Tensor:
        """[U, C] char ids -> [U, char_dim] by convolution and max-over-time."""
        ce = self.char_emb(chars).transpose(1, 2)
        return self.char_conv(ce).max(dim=-1).values

    def embed_tokens(self, words: torch.Tensor, toks: torch.Tensor, char_vecs: torch.Tensor) -> torch.Tensor:
        """[B, L] word ids, [B, L] rows of ``char_vecs`` -> [B, L, word_dim + char_dim]."""
        return torch.cat([self.word_emb(words), char_vecs[toks]], dim=-1)

    def encode_question(self, e: torch.Tensor, lengths: torch.Tensor, return_attention: bool = False):
        fwd = self.q_fwd(e)
        bwd = reverse_padded(self.q_bwd(reverse_padded(e, lengths)), lengths)
        h, alpha = self.q_att(torch.cat([fwd, bwd], dim=-1), lengths)
        return (h, alpha) if return_attention else h

    def encode_observation(self, e: torch.Tensor, lengths: torch.Tensor, return_attention: bool = False):
        u = self.o_lstm(e)
        h, alpha = self.o_att(u, lengths)
        return (h, alpha) if return_attention else h

    def answer_last(self, e: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        u = self.z_lstm(e)
        return u.gather(1, (lengths - 1).view(-1, 1, 1).expand(-1, 1, u.shape[-1])).squeeze(1)

    def encode_answer_pred(self, e: torch.Tensor, lengths: torch.Tensor, phi_z: torch.Tensor):
        return torch.cat([self.answer_last(e, lengths), feature_transform(phi_z)], dim=-1)

    # --- head -------------------------------------------------------------

    def forward(self, b: dict[str, torch.Tensor]) -> QValues:
        cv = self.char_vectors(b["chars"])
        h_q = self.encode_question(self.embed_tokens(b["q_words"], b["q_toks"], cv), b["q_len"])[b["q_rows"]]
        h_o = self.encode_observation(self.embed_tokens(b["o_words"], b["o_toks"], cv), b["o_len"])[b["o_rows"]]
        last = self.answer_last(self.embed_tokens(b["z_words"], b["z_toks"], cv), b["z_len"])[b["z_rows"]]
        h_z = torch.cat([last, feature_transform(b["phi_z"])], dim=-1)
        return self.head(h_q, h_o, h_z, b["phi_n"])

    def head(self, h_q: torch.Tensor, h_o: torch.Tensor, h_z: torch.Tensor, phi_n: torch.Tensor) -> QValues:
        h_s = self.dropout(torch.cat([h_q, h_o, h_z], dim=-1))
        v0 = self.dropout(F.relu(self.fuse(h_s)))
        phi_n = feature_transform(phi_n)
        v1v = F.relu(self.value_hidden(v0))
        v1a = F.relu(self.adv_hidden(v0))
        value = self.value_out(torch.cat([v1v, phi_n], dim=-1))
        adv = self.adv_out(torch.cat([v1a, phi_n], dim=-1))
        return QValues(dueling(value, adv), value, adv)


def build_qnet(config: EncoderConfig, vocab: Vocab, seed: int = 0, dtype: torch.dtype = torch.float32) -> QNetwork:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = QNetwork(config, len(vocab), vocab.n_chars)
    finally:
        torch.random.set_rng_state(gen_state)
    net.vocab = vocab
    return net.to(dtype)


def q_values(net: QNetwork, states: Sequence[EncodedState]) -> QValues:
    dtype = next(net.parameters()).dtype
    out = net(collate(states, net.vocab, dtype))
    if not torch.isfinite(out.q).all():
        raise FloatingPointError("non-finite Q-values (diverged parameters?)")
    return out


class CachedQ:
    """Q-values for action selection with memoized encoder outputs.

    Question, observation and answer encodings are keyed by their token ids
    and reused until :meth:`clear` is called, which must happen whenever the
    network parameters change. Runs the network in eval mode.
    """

    def __init__(self, net: QNetwork):
        self.net = net
        self._q: dict[bytes, torch.Tensor] = {}
        self._o: dict[bytes, torch.Tensor] = {}
        self._z: dict[bytes, torch.Tensor] = {}

    def clear(self) -> None:
        self._q.clear()
        self._o.clear()
        self._z.clear()

    def _fill(self, cache, keys, states, name, encode):
        missing = {}
        for k, st in zip(keys, states):
            if k not in cache and k not in missing:
                missing[k] = st
        if not missing:
            return
        sts = list(missing.values())
        vocab = self.net.vocab
        w, lens = _pad([getattr(x, f"{name}_words") for x in sts])
        t, _ = _pad([getattr(x, f"{name}_toks") for x in sts])
        uniq, inv = np.unique(t, return_inverse=True)
        dtype = next(self.net.parameters()).dtype
        cv = self.net.char_vectors(torch.from_numpy(vocab.token_chars(uniq)))
        e = self.net.embed_tokens(torch.from_numpy(w), torch.from_numpy(inv.reshape(t.shape)), cv)
        lens_t = torch.from_numpy(lens)
        if name == "z":
            phi_z = torch.from_numpy(np.stack([x.phi_z for x in sts])).to(dtype)
            out = encode(e, lens_t, phi_z)
        else:
            out = encode(e, lens_t)
        for i, k in enumerate(missing):
            cache[k] = out[i]

    def __call__(self, states: Sequence[EncodedState]) -> torch.Tensor:
        net = self.net
        was_training = net.training
        net.eval()
        try:
            with torch.no_grad():
                qk = [s.q_toks.tobytes() for s in states]
                ok = [s.o_toks.tobytes() for s in states]
                zk = [s.z_toks.tobytes() + s.phi_z.tobytes() for s in states]
                self._fill(self._q, qk, states, "q", net.encode_question)
                self._fill(self._o, ok, states, "o", net.encode_observation)
                self._fill(self._z, zk, states, "z", net.encode_answer_pred)
                dtype = next(net.parameters()).dtype
                phi_n = torch.from_numpy(np.stack([s.phi_n for s in states])).to(dtype)
                out = net.head(
                    torch.stack([self._q[k] for k in qk]),
                    torch.stack([self._o[k] for k in ok]),
                    torch.stack([self._z[k] for k in zk]),
                    phi_n,
                ).q
        finally:
            net.train(was_training)
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite Q-values (diverged parameters?)")
        return out


# ---------------------------------------------------------------------------
# learning


class Batch(NamedTuple):
    states: list
    actions: np.ndarray
    rewards: np.ndarray
    next_states: list
    terminals: np.ndarray


def td_targets(
    online: QNetwork,
    target: QNetwork,
    batch: Batch,
    gamma: float,
    double_q: bool = True,
    action_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """r + gamma * Q_target(s', a*) for non-terminal s'; a* from the online net when ``double_q``."""
    dtype = next(online.parameters()).dtype
    r = torch.as_tensor(batch.rewards, dtype=dtype)
    done = torch.as_tensor(batch.terminals, dtype=torch.bool)
    with torch.no_grad():
        nb = collate(batch.next_states, online.vocab, dtype)
        q_t = target(nb).q
        q_sel = online(nb).q if double_q else q_t
        if action_mask is not None:
            q_sel = q_sel.masked_fill(~action_mask, float("-inf"))
        a_star = q_sel.argmax(dim=-1, keepdim=True)
        boot = q_t.gather(1, a_star).squeeze(1)
    return torch.where(done, r, r + gamma * boot)


def td_loss(
    online: QNetwork,
    target: QNetwork,
    batch: Batch,
    gamma: float,
    is_weights: Optional[np.ndarray] = None,
    double_q: bool = True,
    action_mask: Optional[torch.Tensor] = None,
) -> tuple[torch.Tensor, np.ndarray]:
    """Importance-weighted squared TD error and per-sample |TD error|."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    if len(batch.states) == 0:
        raise ValueError("empty batch")
    dtype = next(online.parameters()).dtype
    y = td_targets(online, target, batch, gamma, double_q, action_mask)
    q = online(collate(batch.states, online.vocab, dtype)).q
    a = torch.as_tensor(batch.actions, dtype=torch.int64).view(-1, 1)
    q_sa = q.gather(1, a).squeeze(1)
    w = torch.ones_like(y) if is_weights is None else torch.as_tensor(is_weights, dtype=dtype)
    err = y - q_sa
    loss = (w * err.pow(2)).mean()
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite TD loss")
    return loss, err.detach().abs().cpu().numpy().astype(np.float64)


class Optimizer:
    """RMSprop with global-norm gradient clipping."""

    def __init__(self, net: QNetwork, lr: float = 1e-4, clip_norm: float = 10.0, alpha: float = 0.95, eps: float = 1e-6):
        self.net = net
        self.clip_norm = clip_norm
        self.opt = torch.optim.RMSprop(net.parameters(), lr=lr, alpha=alpha, eps=eps, foreach=True)

    def apply_gradients(self) -> float:
        params = [p for p in self.net.parameters() if p.grad is not None]
        norm = float(torch.nn.utils.clip_grad_norm_(params, self.clip_norm, foreach=True))
        if not math.isfinite(norm):
            raise FloatingPointError("non-finite gradient")
        self.opt.step()
        return norm

    def step(self, loss: torch.Tensor) -> float:
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        return self.apply_gradients()

    def state_dict(self):
        return self.opt.state_dict()

    def load_state_dict(self, d):
        self.opt.load_state_dict(d)


def sync_target(online: QNetwork) -> QNetwork:
    vocab = getattr(online, "vocab", None)
    target = copy.deepcopy(online, memo={id(vocab): vocab})
    target.eval()
    for p in target.parameters():
        p.requires_grad_(False)
    return target


def load_word_vectors(net: QNetwork, vocab: Vocab, path: Path | str) -> int:
    """Overwrite embedding rows from a text file of ``word v1 ... vd`` lines; returns rows set."""
    n = 0
    dim = net.word_emb.weight.shape[1]
    with open(path, encoding="utf-8") as f, torch.no_grad():
        for line in f:
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1:
                continue
            i = vocab.word2id.get(parts[0].lower())
            if i is None or i < 3:
                continue
            net.word_emb.weight[i] = torch.tensor([float(x) for x in parts[1:]], dtype=net.word_emb.weight.dtype)
            n += 1
    return n


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: Path | str,
    online: QNetwork,
    target: QNetwork,
    vocab: Vocab,
    optimizer: Optional[Optimizer] = None,
    config: Optional[dict] = None,
    rng_state: Optional[dict] = None,
    step: int = 0,
) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": config or {},
            "encoder": asdict(online.config),
            "vocab": vocab.to_dict(),
            "online": {k: v.contiguous() for k, v in online.state_dict().items()},
            "target": {k: v.contiguous() for k, v in target.state_dict().items()},
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "rng": rng_state or {},
            "step": step,
            "dtype": str(next(online.parameters()).dtype),
        },
        path,
    )


@dataclass
class Checkpoint:
    online: QNetwork
    target: QNetwork
    vocab: Vocab
    config: dict
    optimizer_state: Any
    rng: dict
    step: int


def load_checkpoint(path: Path | str) -> Checkpoint:
    d = torch.load(path, map_location="cpu", weights_only=False)
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a treenav checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    names = {f.name for f in fields(EncoderConfig)}
    enc = EncoderConfig(**{k: v for k, v in d["encoder"].items() if k in names})
    vocab = Vocab.from_dict(d["vocab"])
    dtype = getattr(torch, d.get("dtype", "torch.float32").split(".")[-1])
    online = QNetwork(enc, len(vocab), vocab.n_chars).to(dtype)
    online.load_state_dict(d["online"])
    online.vocab = vocab
    target = QNetwork(enc, len(vocab), vocab.n_chars).to(dtype)
    target.load_state_dict(d["target"])
    target.vocab = vocab
    target = sync_target(target)
    return Checkpoint(online, target, vocab, d["config"], d["optimizer"], d["rng"], d["step"])
