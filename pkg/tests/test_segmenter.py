"""Tests for utterance passages and fixed-length segmentation."""

import random

import pytest

from qfsum.corpus import Meeting, Utterance
from qfsum.rouge import base_tokens
from qfsum.segmenter import (
    Passage,
    SegmentationConfig,
    SegmenterError,
    fixed_segments,
    utterance_passages,
)


def make_meeting():
    return Meeting(
        meeting_id="m0",
        utterances=(
            Utterance(0, "alice", "we should ship it"),
            Utterance(1, "bob", "agreed"),
            Utterance(2, "carol", "next week then"),
        ),
    )


def test_utterance_passages_basic():
    passages = utterance_passages(make_meeting())
    assert [p.span for p in passages] == [(0, 1), (1, 2), (2, 3)]
    assert passages[0].text == "alice: we should ship it"
    assert passages[0].tokens[0] == "alice"


def test_utterance_passages_drop_empty():
    meeting = Meeting(
        meeting_id="m0",
        utterances=(
            Utterance(0, "alice", "hello there"),
            Utterance(1, "", "?!"),
            Utterance(2, "carol", "bye"),
        ),
    )
    passages = utterance_passages(meeting)
    assert [p.span for p in passages] == [(0, 1), (2, 3)]


def test_utterance_passages_word_count_conservation():
    meeting = make_meeting()
    passages = utterance_passages(meeting)
    total = sum(p.token_count for p in passages)
    expect = sum(
        len(base_tokens(f"{u.speaker}: {u.text}")) for u in meeting.utterances
    )
    assert total == expect


def test_passage_requires_tokens():
    with pytest.raises(SegmenterError):
        Passage(
            passage_id="x", meeting_id="m", span=(0, 1), unit="utterance",
            text="", tokens=(),
        )


# ---------------------------------------------------------------------------
# Fixed segments
# ---------------------------------------------------------------------------


def toks(n):
    return [f"w{i}" for i in range(n)]


def test_fixed_segments_overlapping_with_truncated_tail():
    config = SegmentationConfig(unit="fixed", segment_length=512, overlap_fraction=0.5)
    assert config.stride == 256
    segs = fixed_segments(toks(1000), config)
    assert [s.span for s in segs] == [(0, 512), (256, 768), (512, 1000), (768, 1000)]
    assert segs[-1].token_count == 232


def test_fixed_segments_single():
    for overlap in (0.0, 0.25, 0.5, 0.75):
        config = SegmentationConfig(unit="fixed", segment_length=512, overlap_fraction=overlap)
        segs = fixed_segments(toks(512), config)
        assert [s.span for s in segs] == [(0, 512)]


def test_fixed_segments_disjoint():
    config = SegmentationConfig(unit="fixed", segment_length=512, overlap_fraction=0.0)
    segs = fixed_segments(toks(1024), config)
    assert [s.span for s in segs] == [(0, 512), (512, 1024)]


def test_fixed_segments_full_length_tail_not_duplicated():
    # the final full window reaches the end exactly; the short segment that
    # would start inside it is dropped
    config = SegmentationConfig(unit="fixed", segment_length=512, overlap_fraction=0.5)
    segs = fixed_segments(toks(16384), config)
    assert len(segs) == 63
    assert segs[0].span == (0, 512)
    assert segs[-1].span == (15872, 16384)
    assert [s.span[0] for s in segs] == list(range(0, 15873, 256))


def test_fixed_segments_empty_input():
    config = SegmentationConfig(unit="fixed", segment_length=8, overlap_fraction=0.5)
    assert fixed_segments([], config) == []


def test_fixed_segments_short_input():
    config = SegmentationConfig(unit="fixed", segment_length=8, overlap_fraction=0.5)
    segs = fixed_segments(toks(3), config)
    assert [s.span for s in segs] == [(0, 3)]


def test_stride_must_round_positive():
    with pytest.raises(SegmenterError, match="stride"):
        SegmentationConfig(unit="fixed", segment_length=1, overlap_fraction=0.5)


def test_invalid_configs():
    with pytest.raises(SegmenterError):
        SegmentationConfig(unit="fixed", segment_length=0)
    with pytest.raises(SegmenterError):
        SegmentationConfig(unit="fixed", segment_length=8, overlap_fraction=1.0)
    with pytest.raises(SegmenterError):
        SegmentationConfig(unit="blocks")


def test_coverage_order_and_determinism():
    rng = random.Random(17)
    for _ in range(200):
        n = rng.randint(1, 400)
        length = rng.randint(1, 64)
        overlap = rng.choice([0.0, 0.25, 0.5])
        if round(length * (1.0 - overlap)) < 1:
            continue
        config = SegmentationConfig(unit="fixed", segment_length=length, overlap_fraction=overlap)
        tokens = toks(n)
        segs = fixed_segments(tokens, config)
        again = fixed_segments(tokens, config)
        assert [s.span for s in segs] == [s.span for s in again]
        covered = set()
        starts = []
        for s in segs:
            covered.update(range(*s.span))
            starts.append(s.span[0])
        assert covered == set(range(n))
        assert starts == sorted(set(starts))
        if overlap == 0.0:
            total = sum(s.token_count for s in segs)
            assert total == n  # exact partition


def test_half_overlap_double_covers_interior():
    config = SegmentationConfig(unit="fixed", segment_length=8, overlap_fraction=0.5)
    segs = fixed_segments(toks(30), config)
    counts = [0] * 30
    for s in segs:
        for i in range(*s.span):
            counts[i] += 1
    last_start = segs[-1].span[0]
    for i in range(config.stride, last_start):
        assert counts[i] == 2, f"token {i} covered {counts[i]} times"
