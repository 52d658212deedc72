"""Segment-encoding summarizer: encode query-prefixed segments independently,
concatenate the encodings, and decode with joint cross-attention.

Each fixed-length segment is prefixed with the query and encoded by the same
standard transformer encoder, with positional encodings restarting per segment.
No attention crosses segment boundaries, so encoder cost grows linearly with
source length; the decoder attends over the whole fused sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .models import ModelConfig, ModelError, Seq2SeqModel, beam_search, pad_batch
from .segmenter import SegmentationConfig, fixed_segments
from .vocab import SEP


class SegEncError(ValueError):
    """Raised on invalid segment-encoder configuration or inputs."""


@dataclass(frozen=True)
class SegEncConfig:
    """Segmenting summarizer configuration around a base transformer."""

    base: ModelConfig
    max_input_tokens: int = 4096
    segment_length: int = 512
    overlap_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.segment_length < 1:
            raise SegEncError("segment_length must be >= 1")
        if self.max_input_tokens < self.segment_length:
            raise SegEncError("max_input_tokens must be >= segment_length")
        # room for at least "query token + SEP + segment" inside the encoder
        if self.segment_length + 2 > self.base.max_positions:
            raise SegEncError(
                f"segment_length {self.segment_length} leaves no query budget "
                f"within max_positions {self.base.max_positions}"
            )
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise SegEncError("overlap_fraction must be in [0, 1)")

    @property
    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(
            unit="fixed",
            segment_length=self.segment_length,
            overlap_fraction=self.overlap_fraction,
        )

    def to_extras(self) -> dict:
        return {
            "max_input_tokens": self.max_input_tokens,
            "segment_length": self.segment_length,
            "overlap_fraction": self.overlap_fraction,
        }

    @classmethod
    def from_extras(cls, base: ModelConfig, extras: dict) -> "SegEncConfig":
        return cls(
            base=base,
            max_input_tokens=int(extras["max_input_tokens"]),
            segment_length=int(extras["segment_length"]),
            overlap_fraction=float(extras["overlap_fraction"]),
        )


@dataclass
class FusedMemory:
    """Concatenated per-segment encoder outputs with their boundaries."""

    embeddings: torch.Tensor  # [1, total_len, d_model]
    segment_boundaries: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        total = self.embeddings.shape[1]
        cursor = 0
        for start, end in self.segment_boundaries:
            if start != cursor or end <= start:
                raise SegEncError("segment boundaries must partition the embeddings")
            cursor = end
        if cursor != total:
            raise SegEncError("segment boundaries must cover the embeddings")


def segment_inputs(
    model: Seq2SeqModel, query: str, source_tokens: Sequence[str], config: SegEncConfig
) -> list[list[int]]:
    """Token ids of each encoder input: ``query SEP segment`` per segment."""
    if len(source_tokens) == 0:
        raise SegEncError("source must be non-empty")
    source = list(source_tokens)[: config.max_input_tokens]
    q_ids = model.vocab.encode(query)
    budget = config.base.max_positions - config.segment_length - 1
    if budget < 1:
        raise SegEncError("no room for the query within max_positions")
    q_ids = q_ids[:budget]
    segments = fixed_segments(source, config.segmentation)
    return [[*q_ids, SEP, *model.vocab.encode(list(seg.tokens))] for seg in segments]


def segenc_encode(
    model: Seq2SeqModel,
    query: str,
    source_tokens: Sequence[str],
    config: SegEncConfig,
) -> FusedMemory:
    """Encode every segment independently and concatenate the outputs."""
    inputs = segment_inputs(model, query, source_tokens, config)
    outputs = []
    boundaries = []
    cursor = 0
    for ids in inputs:
        id_tensor = torch.tensor([ids], dtype=torch.long)
        outputs.append(model.encode(id_tensor))
        boundaries.append((cursor, cursor + len(ids)))
        cursor += len(ids)
    return FusedMemory(
        embeddings=torch.cat(outputs, dim=1),
        segment_boundaries=tuple(boundaries),
    )


def segenc_summarize(
    model: Seq2SeqModel,
    query: str,
    source_tokens: Sequence[str],
    config: SegEncConfig,
    beams: int = 4,
    max_len: int = 32,
    length_penalty: float = 1.0,
) -> str:
    """Beam-search a summary over the fused segment encodings."""
    with torch.no_grad():
        memory = segenc_encode(model, query, source_tokens, config)
    ids = beam_search(
        model,
        memory.embeddings,
        beams=beams,
        max_len=max_len,
        length_penalty=length_penalty,
    )
    return model.vocab.decode(ids)


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------


def segment_count(config: SegEncConfig, source_len: int | None = None) -> int:
    n = config.max_input_tokens if source_len is None else min(source_len, config.max_input_tokens)
    if n == 0:
        return 0
    return len(fixed_segments(["x"] * n, config.segmentation))


def cost_profile(
    config: SegEncConfig,
    query_len: int = 0,
    source_len: int | None = None,
    bytes_per_value: int = 4,
) -> dict:
    """Analytic encoder attention cost: pairs are counted per segment, so the
    total grows linearly in the number of segments for a fixed segment length.
    """
    n_segments = segment_count(config, source_len)
    per_segment_len = query_len + config.segment_length
    pairs = n_segments * per_segment_len**2
    return {
        "n_segments": n_segments,
        "encoder_attention_pairs": pairs,
        "attention_memory_bytes": pairs * config.base.n_heads * bytes_per_value,
    }


def dense_attention_pairs(total_len: int) -> int:
    """Quadratic cost of a dense encoder over the same input, for comparison."""
    return total_len**2
