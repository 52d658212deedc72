"""Trainable encoder-decoder transformer substrate.

Shared by the relevance scorers and the summarizers: a word-level
encoder-decoder with configurable attention masking (dense, windowed-local,
global-query), greedy and beam-search decoding, and gradient-accumulating
training steps. Checkpoints are a versioned container of JSON header plus raw
little-endian parameter blobs, so round trips reproduce logits bit-identically.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .vocab import BOS, EOS, PAD, SEP, Vocabulary

MAGIC = b"QFSCKPT1"
FORMAT_VERSION = 1

SUMMARIZER_KINDS = ("summarizer_dense", "summarizer_segenc", "summarizer_localglobal")
EXTRACTOR_KINDS = ("extractor_single", "extractor_dual", "extractor_dpr")
MODEL_KINDS = SUMMARIZER_KINDS + EXTRACTOR_KINDS


class ModelError(ValueError):
    """Raised on invalid model configuration or inputs."""


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; attention_window None means dense."""

    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 128
    max_positions: int = 128
    dropout_rate: float = 0.0
    attention_window: int | None = None
    global_query_attention: bool = True

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.attention_window is not None:
            if self.attention_window < 1:
                raise ModelError("attention_window must be >= 1 when windowed")
            if self.attention_window > self.max_positions:
                raise ModelError("attention_window exceeds max_positions")
        if self.vocab_size < 1 or self.max_positions < 1:
            raise ModelError("vocab_size and max_positions must be >= 1")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "d_ff": self.d_ff,
            "max_positions": self.max_positions,
            "dropout_rate": self.dropout_rate,
            "attention_window": self.attention_window,
            "global_query_attention": self.global_query_attention,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


# ---------------------------------------------------------------------------
# Attention masks (True = may attend)
# ---------------------------------------------------------------------------


def dense_attention_mask(seq_len: int) -> torch.Tensor:
    return torch.ones(seq_len, seq_len, dtype=torch.bool)


def causal_attention_mask(seq_len: int) -> torch.Tensor:
    return torch.tril(torch.ones(seq_len, seq_len, dtype=torch.bool))


def build_local_global_mask(
    seq_len: int,
    window: int,
    global_positions: Iterable[int] = (),
) -> torch.Tensor:
    """Windowed-local mask with symmetric global positions.

    Position i may attend to j iff |i - j| <= window / 2, or either of i, j is
    a global position. Every position can always attend to itself.
    """
    if window < 1:
        raise ModelError("window must be >= 1")
    globals_ = sorted(set(int(g) for g in global_positions))
    for g in globals_:
        if not 0 <= g < seq_len:
            raise ModelError(f"global position {g} outside [0, {seq_len})")
    idx = torch.arange(seq_len)
    # integer comparison: |i-j| <= window/2  <=>  2*|i-j| <= window
    local = (idx[:, None] - idx[None, :]).abs() * 2 <= window
    mask = local
    if globals_:
        g = torch.zeros(seq_len, dtype=torch.bool)
        g[globals_] = True
        mask = mask | g[:, None] | g[None, :]
    return mask


# ---------------------------------------------------------------------------
# Modules
# ---------------------------------------------------------------------------


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: torch.Tensor | None,
    ) -> torch.Tensor:
        """mask is bool [Tq, Tk] or [B, Tq, Tk]; True allows attention."""
        bsz, q_len, d_model = query.shape
        k_len = key.shape[1]

        def split(x: torch.Tensor) -> torch.Tensor:
            return x.view(bsz, -1, self.n_heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(query))
        k = split(self.k_proj(key))
        v = split(self.v_proj(value))
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if mask is not None:
            if mask.dim() == 2:
                mask = mask.unsqueeze(0)
            scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        probs = self.dropout(torch.softmax(scores, dim=-1))
        out = torch.matmul(probs, v)
        out = out.transpose(1, 2).contiguous().view(bsz, q_len, d_model)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.dropout(nn.functional.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = MultiHeadAttention(config.d_model, config.n_heads, config.dropout_rate)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.ff = FeedForward(config.d_model, config.d_ff, config.dropout_rate)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.dropout(self.attn(h, h, h, mask))
        x = x + self.dropout(self.ff(self.ln2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.self_attn = MultiHeadAttention(config.d_model, config.n_heads, config.dropout_rate)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.cross_attn = MultiHeadAttention(config.d_model, config.n_heads, config.dropout_rate)
        self.ln3 = nn.LayerNorm(config.d_model)
        self.ff = FeedForward(config.d_model, config.d_ff, config.dropout_rate)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(
        self,
        x: torch.Tensor,
        self_mask: torch.Tensor,
        memory: torch.Tensor,
        memory_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.dropout(self.self_attn(h, h, h, self_mask))
        h = self.ln2(x)
        x = x + self.dropout(self.cross_attn(h, memory, memory, memory_mask))
        x = x + self.dropout(self.ff(self.ln3(x)))
        return x


class TransformerEncoder(nn.Module):
    def __init__(self, config: ModelConfig, embed_tokens: nn.Embedding):
        super().__init__()
        self.config = config
        self.embed_tokens = embed_tokens
        self.embed_positions = nn.Embedding(config.max_positions, config.d_model)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.n_enc_layers))
        self.final_ln = nn.LayerNorm(config.d_model)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(
        self,
        ids: torch.Tensor,
        attn_mask: torch.Tensor | None = None,
        key_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """ids [B, T]; attn_mask bool [T, T] or [B, T, T]; key_padding [B, T] True=real."""
        bsz, seq_len = ids.shape
        if seq_len > self.config.max_positions:
            raise ModelError(
                f"input length {seq_len} exceeds max_positions {self.config.max_positions}"
            )
        if int(ids.max()) >= self.config.vocab_size:
            raise ModelError("token id outside vocabulary")
        pos = torch.arange(seq_len, device=ids.device)
        x = self.dropout(self.embed_tokens(ids) + self.embed_positions(pos)[None])
        mask = attn_mask
        if key_padding is not None:
            pad = key_padding[:, None, :]  # [B, 1, Tk]
            mask = pad if mask is None else (
                mask.unsqueeze(0) if mask.dim() == 2 else mask
            ) & pad
        for layer in self.layers:
            x = layer(x, mask)
        return self.final_ln(x)


class TransformerDecoder(nn.Module):
    def __init__(self, config: ModelConfig, embed_tokens: nn.Embedding):
        super().__init__()
        self.config = config
        self.embed_tokens = embed_tokens
        self.embed_positions = nn.Embedding(config.max_positions, config.d_model)
        self.layers = nn.ModuleList(DecoderLayer(config) for _ in range(config.n_dec_layers))
        self.final_ln = nn.LayerNorm(config.d_model)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(
        self,
        ids: torch.Tensor,
        memory: torch.Tensor,
        memory_padding: torch.Tensor | None = None,
        self_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        bsz, seq_len = ids.shape
        if seq_len > self.config.max_positions:
            raise ModelError(
                f"target length {seq_len} exceeds max_positions {self.config.max_positions}"
            )
        pos = torch.arange(seq_len, device=ids.device)
        x = self.dropout(self.embed_tokens(ids) + self.embed_positions(pos)[None])
        self_mask = causal_attention_mask(seq_len)
        if self_padding is not None:
            self_mask = self_mask.unsqueeze(0) & self_padding[:, None, :]
        memory_mask = None
        if memory_padding is not None:
            memory_mask = memory_padding[:, None, :]
        for layer in self.layers:
            x = layer(x, self_mask, memory, memory_mask)
        return self.final_ln(x)


class Seq2SeqModel(nn.Module):
    """Encoder-decoder summarizer with a tied-embedding language-model head."""

    kind_family = "summarizer"

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if len(vocab) != config.vocab_size:
            raise ModelError(
                f"vocab size {len(vocab)} does not match config {config.vocab_size}"
            )
        self.config = config
        self.vocab = vocab
        self.embed_tokens = nn.Embedding(config.vocab_size, config.d_model, padding_idx=PAD)
        self.encoder = TransformerEncoder(config, self.embed_tokens)
        self.decoder = TransformerDecoder(config, self.embed_tokens)
        self.lm_bias = nn.Parameter(torch.zeros(config.vocab_size))

    def encode(
        self,
        ids: torch.Tensor,
        attn_mask: torch.Tensor | None = None,
        key_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self.encoder(ids, attn_mask=attn_mask, key_padding=key_padding)

    def decoder_logits(
        self,
        prefix: torch.Tensor,
        memory: torch.Tensor,
        memory_padding: torch.Tensor | None = None,
        self_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if prefix.shape[1] == 0:
            raise ModelError("decoder prefix must be non-empty")
        h = self.decoder(prefix, memory, memory_padding, self_padding)
        return h @ self.embed_tokens.weight.T + self.lm_bias


def mean_pool(hidden: torch.Tensor, padding: torch.Tensor | None) -> torch.Tensor:
    """Average hidden states over real (non-pad) positions."""
    if padding is None:
        return hidden.mean(dim=1)
    weights = padding.to(hidden.dtype)
    return (hidden * weights[:, :, None]).sum(1) / weights.sum(1, keepdim=True)


def max_pool(hidden: torch.Tensor, padding: torch.Tensor | None) -> torch.Tensor:
    """Feature-wise max over real positions; detector features survive pooling
    regardless of sequence length."""
    if padding is not None:
        hidden = hidden.masked_fill(~padding[:, :, None], float("-inf"))
    return hidden.max(dim=1).values


class EncoderScorer(nn.Module):
    """Single-encoder relevance model: joint encoding, pooled scalar head."""

    kind_family = "extractor"

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if len(vocab) != config.vocab_size:
            raise ModelError(
                f"vocab size {len(vocab)} does not match config {config.vocab_size}"
            )
        self.config = config
        self.vocab = vocab
        self.embed_tokens = nn.Embedding(config.vocab_size, config.d_model, padding_idx=PAD)
        self.encoder = TransformerEncoder(config, self.embed_tokens)
        self.head = nn.Linear(config.d_model, 1)

    def forward(
        self, ids: torch.Tensor, key_padding: torch.Tensor | None = None
    ) -> torch.Tensor:
        h = self.encoder(ids, key_padding=key_padding)
        return self.head(max_pool(h, key_padding)).squeeze(-1)


class DualEncoder(nn.Module):
    """Two-tower relevance model; score is the inner product of pooled sides.

    flavor "relregtt": shared tower, type token appended per side, mean pooling.
    flavor "dpr": first-token pooling with separate (or tied) towers.
    """

    kind_family = "extractor"

    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocabulary,
        flavor: str = "relregtt",
        tied: bool | None = None,
    ):
        super().__init__()
        if flavor not in ("relregtt", "dpr"):
            raise ModelError(f"unknown dual-encoder flavor {flavor!r}")
        if len(vocab) != config.vocab_size:
            raise ModelError(
                f"vocab size {len(vocab)} does not match config {config.vocab_size}"
            )
        self.config = config
        self.vocab = vocab
        self.flavor = flavor
        self.tied = tied if tied is not None else (flavor == "relregtt")
        self.embed_tokens = nn.Embedding(config.vocab_size, config.d_model, padding_idx=PAD)
        self.query_encoder = TransformerEncoder(config, self.embed_tokens)
        if self.tied:
            self.passage_encoder = self.query_encoder
        else:
            self.passage_encoder = TransformerEncoder(config, self.embed_tokens)

    def _pool(self, hidden: torch.Tensor, padding: torch.Tensor | None) -> torch.Tensor:
        # mean pooling for both flavors: first-token pooling undertrains badly
        # in small from-scratch towers
        return mean_pool(hidden, padding)

    def embed_queries(
        self, ids: torch.Tensor, padding: torch.Tensor | None = None
    ) -> torch.Tensor:
        return self._pool(self.query_encoder(ids, key_padding=padding), padding)

    def embed_passages(
        self, ids: torch.Tensor, padding: torch.Tensor | None = None
    ) -> torch.Tensor:
        return self._pool(self.passage_encoder(ids, key_padding=padding), padding)

    def score_pairs(self, query_emb: torch.Tensor, passage_emb: torch.Tensor) -> torch.Tensor:
        return (query_emb * passage_emb).sum(-1)


def init_parameters(model: nn.Module, seed: int, std: float = 0.02) -> None:
    """Deterministic scaled-normal initialization of all weights.

    Matrices are drawn from N(0, std^2); LayerNorm scales reset to 1 and all
    biases to 0. The generator is seeded so a (model, seed) pair always yields
    the same parameters.
    """
    gen = torch.Generator().manual_seed(seed)
    for name, param in model.named_parameters():
        with torch.no_grad():
            if param.dim() >= 2:
                values = torch.empty(
                    param.shape, dtype=param.dtype
                ).normal_(0.0, std, generator=gen)
                param.copy_(values)
            elif name.endswith("weight"):
                param.fill_(1.0)  # LayerNorm scale
            else:
                param.zero_()


# ---------------------------------------------------------------------------
# Batching helpers
# ---------------------------------------------------------------------------


def pad_batch(
    id_lists: Sequence[Sequence[int]], dtype: torch.dtype = torch.long
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad id lists to a [B, T] tensor plus a [B, T] True=real mask."""
    if not id_lists:
        raise ModelError("cannot pad an empty batch")
    width = max(len(ids) for ids in id_lists)
    ids = torch.full((len(id_lists), width), PAD, dtype=dtype)
    padding = torch.zeros(len(id_lists), width, dtype=torch.bool)
    for i, row in enumerate(id_lists):
        ids[i, : len(row)] = torch.tensor(list(row), dtype=dtype)
        padding[i, : len(row)] = True
    return ids, padding


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def decode_step(
    model: Seq2SeqModel,
    prefix: Sequence[int],
    memory: torch.Tensor,
    memory_padding: torch.Tensor | None = None,
) -> torch.Tensor:
    """Next-token probability distribution after the given non-empty prefix."""
    if len(prefix) == 0:
        raise ModelError("prefix must be non-empty (start with BOS)")
    ids = torch.tensor([list(prefix)], dtype=torch.long)
    with torch.no_grad():
        logits = model.decoder_logits(ids, memory, memory_padding)
    return torch.softmax(logits[0, -1], dim=-1)


def greedy_decode(
    model: Seq2SeqModel,
    memory: torch.Tensor,
    memory_padding: torch.Tensor | None = None,
    max_len: int = 32,
) -> list[int]:
    """Argmax rollout from BOS; returns generated ids without BOS/EOS."""
    if max_len < 1:
        raise ModelError("max_len must be >= 1")
    prefix = [BOS]
    out: list[int] = []
    with torch.no_grad():
        for _ in range(max_len):
            ids = torch.tensor([prefix], dtype=torch.long)
            logits = model.decoder_logits(ids, memory, memory_padding)
            nxt = int(torch.argmax(logits[0, -1]))
            if nxt == EOS:
                break
            out.append(nxt)
            prefix.append(nxt)
    return out


@dataclass(frozen=True)
class _Hypothesis:
    ids: tuple[int, ...]  # generated ids including a terminal EOS if emitted
    logprob: float

    def normalized(self, length_penalty: float) -> float:
        length = max(len(self.ids), 1)
        return self.logprob / (length**length_penalty)


def beam_search(
    model: Seq2SeqModel,
    memory: torch.Tensor,
    memory_padding: torch.Tensor | None = None,
    beams: int = 4,
    max_len: int = 32,
    length_penalty: float = 1.0,
) -> list[int]:
    """Length-normalized beam search; returns generated ids without BOS/EOS.

    Hypotheses are scored by summed log-probability divided by
    length**length_penalty (penalty 0 means raw sum). Ties break toward the
    lexicographically smaller id sequence, so decoding is fully deterministic.
    With beams=1 this reduces to greedy decoding.
    """
    if beams < 1:
        raise ModelError("beams must be >= 1")
    if max_len < 1:
        raise ModelError("max_len must be >= 1")

    live: list[_Hypothesis] = [_Hypothesis(ids=(), logprob=0.0)]
    finished: list[_Hypothesis] = []

    with torch.no_grad():
        for _ in range(max_len):
            if not live:
                break
            prefixes = [(BOS,) + hyp.ids for hyp in live]
            ids = torch.tensor([list(p) for p in prefixes], dtype=torch.long)
            mem = memory.expand(len(live), -1, -1)
            mem_pad = (
                memory_padding.expand(len(live), -1) if memory_padding is not None else None
            )
            logits = model.decoder_logits(ids, mem, mem_pad)
            logprobs = torch.log_softmax(logits[:, -1, :], dim=-1)
            candidates: list[_Hypothesis] = []
            for hyp, row in zip(live, logprobs):
                for tok in range(row.shape[0]):
                    candidates.append(
                        _Hypothesis(ids=hyp.ids + (tok,), logprob=hyp.logprob + float(row[tok]))
                    )
            candidates.sort(key=lambda h: (-h.logprob, h.ids))
            kept = candidates[:beams]
            live = []
            for hyp in kept:
                if hyp.ids[-1] == EOS:
                    finished.append(hyp)
                else:
                    live.append(hyp)
        finished.extend(live)

    best = min(
        finished, key=lambda h: (-h.normalized(length_penalty), h.ids)
    )
    out = list(best.ids)
    if out and out[-1] == EOS:
        out.pop()
    return out


# ---------------------------------------------------------------------------
# Losses and training steps
# ---------------------------------------------------------------------------


@dataclass
class Seq2SeqBatch:
    """Source/target id lists; optional per-example encoder attention masks."""

    src: list[list[int]]
    tgt: list[list[int]]  # BOS ... EOS
    src_masks: list[torch.Tensor] | None = None


@dataclass
class ScoreBatch:
    """Joint query+passage inputs with regression targets.

    Optional per-example weights rebalance the loss when most targets are
    near zero; weights alter only the loss surface, not the unit count.
    """

    inputs: list[list[int]]
    targets: list[float]
    weights: list[float] | None = None


@dataclass
class DualScoreBatch:
    queries: list[list[int]]
    passages: list[list[int]]
    targets: list[float]
    weights: list[float] | None = None


@dataclass
class ContrastiveBatch:
    """One query against candidates where index 0 is the positive."""

    query: list[int]
    candidates: list[list[int]]


Batch = Seq2SeqBatch | ScoreBatch | DualScoreBatch | ContrastiveBatch


def _stack_masks(masks: list[torch.Tensor], width: int) -> torch.Tensor:
    out = torch.zeros(len(masks), width, width, dtype=torch.bool)
    for i, m in enumerate(masks):
        t = m.shape[0]
        out[i, :t, :t] = m
        if t < width:
            # pad rows attend themselves so softmax stays finite; they are
            # excluded as keys and from the loss elsewhere
            idx = torch.arange(t, width)
            out[i, idx, idx] = True
    return out


def seq2seq_loss(model: Seq2SeqModel, batch: Seq2SeqBatch) -> tuple[torch.Tensor, int]:
    """Summed cross-entropy over non-pad target tokens, with the token count."""
    src_ids, src_pad = pad_batch(batch.src)
    attn = None
    if batch.src_masks is not None:
        attn = _stack_masks(batch.src_masks, src_ids.shape[1])
    memory = model.encode(src_ids, attn_mask=attn, key_padding=src_pad)
    return decoder_loss_from_memory(model, memory, src_pad, batch.tgt)


def decoder_loss_from_memory(
    model: Seq2SeqModel,
    memory: torch.Tensor,
    memory_padding: torch.Tensor | None,
    targets: list[list[int]],
) -> tuple[torch.Tensor, int]:
    dec_in = [t[:-1] for t in targets]
    labels = [t[1:] for t in targets]
    if any(len(t) < 2 for t in targets):
        raise ModelError("targets must contain BOS and at least one label token")
    in_ids, in_pad = pad_batch(dec_in)
    label_ids, label_pad = pad_batch(labels)
    logits = model.decoder_logits(in_ids, memory, memory_padding, self_padding=in_pad)
    flat = logits.reshape(-1, logits.shape[-1])
    loss = nn.functional.cross_entropy(
        flat, label_ids.reshape(-1), ignore_index=PAD, reduction="sum"
    )
    count = int(label_pad.sum())
    return loss, count


def _weighted_sq_error(
    preds: torch.Tensor, targets: list[float], weights: list[float] | None
) -> torch.Tensor:
    t = torch.tensor(targets, dtype=preds.dtype)
    err = (preds - t) ** 2
    if weights is not None:
        err = err * torch.tensor(weights, dtype=preds.dtype)
    return err.sum()


def single_score_loss(model: EncoderScorer, batch: ScoreBatch) -> tuple[torch.Tensor, int]:
    ids, padding = pad_batch(batch.inputs)
    preds = model(ids, key_padding=padding)
    return _weighted_sq_error(preds, batch.targets, batch.weights), len(batch.targets)


def dual_score_loss(model: DualEncoder, batch: DualScoreBatch) -> tuple[torch.Tensor, int]:
    q_ids, q_pad = pad_batch(batch.queries)
    p_ids, p_pad = pad_batch(batch.passages)
    scores = model.score_pairs(
        model.embed_queries(q_ids, q_pad), model.embed_passages(p_ids, p_pad)
    )
    return _weighted_sq_error(scores, batch.targets, batch.weights), len(batch.targets)


def contrastive_loss(model: DualEncoder, batch: ContrastiveBatch) -> tuple[torch.Tensor, int]:
    """Negative log likelihood of the positive under softmax over candidates."""
    q_ids, q_pad = pad_batch([batch.query])
    c_ids, c_pad = pad_batch(batch.candidates)
    q_emb = model.embed_queries(q_ids, q_pad)  # [1, D]
    c_emb = model.embed_passages(c_ids, c_pad)  # [N, D]
    scores = (c_emb @ q_emb.T).squeeze(-1)  # [N]
    nll = -torch.log_softmax(scores, dim=0)[0]
    return nll, 1


def loss_for_batch(model: nn.Module, batch: Batch) -> tuple[torch.Tensor, int]:
    if isinstance(batch, Seq2SeqBatch):
        return seq2seq_loss(model, batch)
    if isinstance(batch, ScoreBatch):
        return single_score_loss(model, batch)
    if isinstance(batch, DualScoreBatch):
        return dual_score_loss(model, batch)
    if isinstance(batch, ContrastiveBatch):
        return contrastive_loss(model, batch)
    raise ModelError(f"unknown batch type {type(batch).__name__}")


class Trainer:
    """Single-writer training state: one model, one optimizer."""

    def __init__(
        self,
        model: nn.Module,
        learning_rate: float = 1e-3,
        optimizer: str = "adam",
        loss_fn: Callable[[nn.Module, Batch], tuple[torch.Tensor, int]] = loss_for_batch,
    ):
        self.model = model
        self.loss_fn = loss_fn
        if optimizer == "adam":
            self.optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
        elif optimizer == "sgd":
            self.optimizer = torch.optim.SGD(model.parameters(), lr=learning_rate)
        else:
            raise ModelError(f"unknown optimizer {optimizer!r}")

    def step(self, micro_batches: Sequence[Batch]) -> float:
        """One optimizer step over accumulated micro-batch gradients.

        Gradients are summed over micro-batches and scaled by the combined
        unit count, so accumulation over k micro-batches equals a single step
        on their concatenation.
        """
        if not micro_batches:
            raise ModelError("step requires at least one micro-batch")
        self.model.train()
        self.optimizer.zero_grad()
        total_loss = 0.0
        total_count = 0
        for batch in micro_batches:
            loss_sum, count = self.loss_fn(self.model, batch)
            if not torch.isfinite(loss_sum):
                raise TrainingDiverged(
                    f"non-finite loss {float(loss_sum)!r} on {type(batch).__name__} "
                    f"with lr={self.optimizer.param_groups[0]['lr']}"
                )
            loss_sum.backward()
            total_loss += float(loss_sum.detach())
            total_count += count
        for param in self.model.parameters():
            if param.grad is not None:
                param.grad /= total_count
        self.optimizer.step()
        self.model.eval()
        return total_loss / total_count


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProvenanceEntry:
    dataset: str
    epochs: int


@dataclass
class Checkpoint:
    """Serialized model state with config, vocabulary, and training provenance."""

    kind: str
    config: ModelConfig
    vocab: Vocabulary
    state: dict[str, torch.Tensor]
    provenance: tuple[ProvenanceEntry, ...] = ()
    selection_metric: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")

    @classmethod
    def from_model(
        cls,
        model: nn.Module,
        kind: str,
        provenance: tuple[ProvenanceEntry, ...] = (),
        selection_metric: float | None = None,
        extras: dict | None = None,
    ) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(
            kind=kind,
            config=model.config,
            vocab=model.vocab,
            state=state,
            provenance=provenance,
            selection_metric=selection_metric,
            extras=dict(extras or {}),
        )

    def build_model(self) -> nn.Module:
        model = make_model(self.kind, self.config, self.vocab, self.extras)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def with_provenance(self, entry: ProvenanceEntry) -> "Checkpoint":
        return replace(self, provenance=self.provenance + (entry,))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensors = []
        blobs = []
        offset = 0
        for name in sorted(self.state):
            arr = self.state[name].detach().cpu().numpy()
            arr = np.ascontiguousarray(arr)
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            raw = arr.tobytes()
            tensors.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": arr.dtype.name,
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            blobs.append(raw)
            offset += len(raw)
        header = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "extras": self.extras,
            "vocab_words": list(self.vocab.tokens[8:]),
            "provenance": [
                {"dataset": p.dataset, "epochs": p.epochs} for p in self.provenance
            ],
            "selection_metric": self.selection_metric,
            "tensors": tensors,
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for raw in blobs:
                fh.write(raw)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise ModelError(f"{path}: not a checkpoint file")
            (header_len,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(header_len).decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise ModelError(
                    f"{path}: unsupported format version {header.get('format_version')}"
                )
            blob = fh.read()
        state = {}
        for meta in header["tensors"]:
            raw = blob[meta["offset"] : meta["offset"] + meta["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"])
            state[meta["name"]] = torch.from_numpy(arr.copy())
        return cls(
            kind=header["kind"],
            config=ModelConfig.from_dict(header["config"]),
            vocab=Vocabulary(header["vocab_words"]),
            state=state,
            provenance=tuple(
                ProvenanceEntry(p["dataset"], p["epochs"]) for p in header["provenance"]
            ),
            selection_metric=header["selection_metric"],
            extras=dict(header.get("extras", {})),
        )


def make_model(
    kind: str,
    config: ModelConfig,
    vocab: Vocabulary,
    extras: dict | None = None,
) -> nn.Module:
    """Construct an architecture for a model kind (uninitialized weights)."""
    extras = extras or {}
    if kind in SUMMARIZER_KINDS:
        return Seq2SeqModel(config, vocab)
    if kind == "extractor_single":
        return EncoderScorer(config, vocab)
    if kind == "extractor_dual":
        return DualEncoder(config, vocab, flavor="relregtt")
    if kind == "extractor_dpr":
        return DualEncoder(config, vocab, flavor="dpr", tied=bool(extras.get("tied", False)))
    raise ModelError(f"unknown model kind {kind!r}")


def new_model(
    kind: str,
    config: ModelConfig,
    vocab: Vocabulary,
    seed: int,
    extras: dict | None = None,
) -> nn.Module:
    """Construct and deterministically initialize a model."""
    model = make_model(kind, config, vocab, extras)
    init_parameters(model, seed)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(
    model: nn.Module,
    batch: Batch,
    eps: float = 1e-5,
    scale_floor: float = 1e-6,
    loss_fn: Callable[[nn.Module, Batch], tuple[torch.Tensor, int]] = loss_for_batch,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in the model's current dtype; use float64 for meaningful tolerances.
    The relative error denominator is floored at scale_floor: the difference
    quotient carries ~1e-11 absolute noise in float64, so gradients smaller
    than the floor can only be compared absolutely, not relatively.
    """
    model.zero_grad()
    loss_sum, count = loss_fn(model, batch)
    mean_loss = loss_sum / count
    mean_loss.backward()
    analytic = {
        name: p.grad.detach().clone() for name, p in model.named_parameters()
        if p.grad is not None
    }

    def loss_at() -> float:
        with torch.no_grad():
            s, c = loss_fn(model, batch)
            return float(s) / c

    worst = 0.0
    for name, param in model.named_parameters():
        grad = analytic.get(name)
        if grad is None:
            continue
        flat = param.data.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + eps
            plus = loss_at()
            flat[i] = orig - eps
            minus = loss_at()
            flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            a = float(grad.view(-1)[i])
            scale = max(abs(a), abs(numeric), scale_floor)
            worst = max(worst, abs(a - numeric) / scale)
    return worst
