"""Passage construction: utterance-level scoring units and fixed-length segments.

Utterance passages are the unit scored by extractor models; fixed-length
(optionally overlapping) segments are the unit encoded by the segment-encoding
summarizer. Both carry provenance spans back into their source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Meeting
from .rouge import base_tokens


class SegmenterError(ValueError):
    """Raised on invalid segmentation configs or inputs."""


@dataclass(frozen=True)
class Passage:
    """A scorable unit of source text.

    ``span`` is an utterance-index range for utterance passages and a
    token-index range for fixed segments; ``unit`` records which.
    """

    passage_id: str
    meeting_id: str
    span: tuple[int, int]
    unit: str
    text: str
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise SegmenterError(f"passage {self.passage_id!r} has no tokens")

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SegmentationConfig:
    unit: str = "fixed"
    segment_length: int = 512
    overlap_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.unit not in ("utterance", "fixed"):
            raise SegmenterError(f"unknown segmentation unit {self.unit!r}")
        if self.unit == "fixed":
            if self.segment_length < 1:
                raise SegmenterError("segment_length must be >= 1")
            if not 0.0 <= self.overlap_fraction < 1.0:
                raise SegmenterError("overlap_fraction must be in [0, 1)")
            if self.stride < 1:
                raise SegmenterError(
                    f"stride rounds to {self.stride}; increase segment_length or "
                    f"decrease overlap_fraction"
                )

    @property
    def stride(self) -> int:
        return round(self.segment_length * (1.0 - self.overlap_fraction))


def utterance_passages(meeting: Meeting) -> list[Passage]:
    """One passage per utterance, speaker prepended as ``speaker: text``.

    Utterances that normalize to zero tokens are dropped; spans of the
    remaining passages keep their original utterance indices.
    """
    passages = []
    for utt in meeting.utterances:
        text = f"{utt.speaker}: {utt.text}" if utt.speaker else utt.text
        tokens = tuple(base_tokens(text))
        if not tokens:
            continue
        passages.append(
            Passage(
                passage_id=f"{meeting.meeting_id}:u{utt.index}",
                meeting_id=meeting.meeting_id,
                span=(utt.index, utt.index + 1),
                unit="utterance",
                text=text,
                tokens=tokens,
            )
        )
    return passages


def fixed_segments(
    tokens: Sequence[str],
    config: SegmentationConfig,
    source_id: str = "",
) -> list[Passage]:
    """Fixed-length segments starting at multiples of the stride.

    A source that fits in one window yields exactly one segment. Otherwise
    starts run 0, stride, 2*stride, ... while inside the token range; each
    segment covers [start, min(start + L, n)). Enumeration stops once a
    full-length segment has reached the end of the sequence, so a short tail
    already covered by a complete window is not encoded twice. Truncated tail
    segments are kept: they pair every late token with two windows under 50%
    overlap, matching the coverage the overlapping strategy is meant to give.
    """
    if config.unit != "fixed":
        raise SegmenterError("fixed_segments requires unit='fixed'")
    n = len(tokens)
    if n == 0:
        return []
    length = config.segment_length
    stride = config.stride

    def passage(start: int, end: int) -> Passage:
        seg_tokens = tuple(tokens[start:end])
        return Passage(
            passage_id=f"{source_id}:s{start}-{end}" if source_id else f"s{start}-{end}",
            meeting_id=source_id,
            span=(start, end),
            unit="fixed",
            text=" ".join(seg_tokens),
            tokens=seg_tokens,
        )

    if n <= length:
        return [passage(0, n)]

    segments: list[Passage] = []
    prev: tuple[int, int] | None = None
    for start in range(0, n, stride):
        if prev is not None and prev[1] == n and prev[1] - prev[0] == length:
            break
        end = min(start + length, n)
        segments.append(passage(start, end))
        prev = (start, end)
    return segments
