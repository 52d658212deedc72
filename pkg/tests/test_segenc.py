"""Tests for the segment-encoding summarizer."""

import pytest
import torch

from qfsum.models import ModelConfig, beam_search, new_model, pad_batch
from qfsum.segenc import (
    FusedMemory,
    SegEncConfig,
    SegEncError,
    cost_profile,
    dense_attention_pairs,
    segenc_encode,
    segenc_summarize,
    segment_count,
    segment_inputs,
)
from qfsum.vocab import SEP, Vocabulary


def build(seed=0, seg_len=6, max_input=48, overlap=0.5, max_positions=24):
    words = [f"word{i}" for i in range(10)]
    vocab = Vocabulary(words)
    base = ModelConfig(
        vocab_size=len(vocab), d_model=16, n_heads=2, n_enc_layers=1,
        n_dec_layers=1, d_ff=32, max_positions=max_positions,
    )
    config = SegEncConfig(
        base=base, max_input_tokens=max_input, segment_length=seg_len,
        overlap_fraction=overlap,
    )
    model = new_model("summarizer_segenc", base, vocab, seed=seed)
    return model, config


def source_tokens(n):
    return [f"word{i % 10}" for i in range(n)]


def test_single_segment_degenerates_to_plain_encoding():
    model, config = build()
    query = "word0 word1"
    src = source_tokens(4)  # shorter than one segment
    fused = segenc_encode(model, query, src, config)
    assert len(fused.segment_boundaries) == 1

    plain_ids = [*model.vocab.encode(query), SEP, *model.vocab.encode(src)]
    with torch.no_grad():
        plain = model.encode(torch.tensor([plain_ids]))
    assert torch.allclose(fused.embeddings, plain, atol=1e-6)


def test_summarize_degenerates_to_vanilla_decoding():
    model, config = build(seed=4)
    query = "word0"
    src = source_tokens(5)
    seg_out = segenc_summarize(model, query, src, config, beams=3, max_len=6)

    plain_ids = [*model.vocab.encode(query), SEP, *model.vocab.encode(src)]
    with torch.no_grad():
        memory = model.encode(torch.tensor([plain_ids]))
    vanilla_ids = beam_search(model, memory, beams=3, max_len=6)
    assert seg_out == model.vocab.decode(vanilla_ids)


def test_perturbing_one_segment_changes_only_covering_slices():
    model, config = build(seed=2, seg_len=6, overlap=0.0)
    query = "word0"
    src = source_tokens(18)  # 3 disjoint segments of 6
    fused = segenc_encode(model, query, src, config)
    assert len(fused.segment_boundaries) == 3

    changed = list(src)
    changed[7] = "word9"  # inside segment 1 only
    fused2 = segenc_encode(model, query, changed, config)
    for k, (start, end) in enumerate(fused.segment_boundaries):
        a = fused.embeddings[0, start:end]
        b = fused2.embeddings[0, start:end]
        if k == 1:
            assert not torch.allclose(a, b, atol=1e-6)
        else:
            assert torch.allclose(a, b, atol=1e-7)


def test_segment_count_paper_grid():
    base = ModelConfig(vocab_size=9, d_model=8, n_heads=2, max_positions=1024)
    config = SegEncConfig(
        base=base, max_input_tokens=16384, segment_length=512, overlap_fraction=0.5
    )
    assert segment_count(config) == 63


def test_segment_inputs_layout_and_query_budget():
    model, config = build(seg_len=6, max_positions=16)
    inputs = segment_inputs(model, "word0 word1", source_tokens(10), config)
    for ids in inputs:
        assert SEP in ids
        assert len(ids) <= config.base.max_positions
        q_len = ids.index(SEP)
        assert q_len + 1 + config.segment_length >= len(ids)


def test_segenc_rejects_empty_source():
    model, config = build()
    with pytest.raises(SegEncError, match="non-empty"):
        segenc_encode(model, "word0", [], config)


def test_source_truncated_to_max_input():
    model, config = build(seg_len=6, max_input=12, overlap=0.0)
    fused = segenc_encode(model, "word0", source_tokens(100), config)
    assert len(fused.segment_boundaries) == 2  # 12 tokens -> 2 disjoint segments


def test_fused_memory_boundary_validation():
    emb = torch.zeros(1, 6, 4)
    with pytest.raises(SegEncError):
        FusedMemory(embeddings=emb, segment_boundaries=((0, 3), (4, 6)))
    with pytest.raises(SegEncError):
        FusedMemory(embeddings=emb, segment_boundaries=((0, 3),))
    FusedMemory(embeddings=emb, segment_boundaries=((0, 3), (3, 6)))


def test_summarize_deterministic():
    model, config = build(seed=11)
    src = source_tokens(20)
    a = segenc_summarize(model, "word0", src, config, beams=2, max_len=5)
    b = segenc_summarize(model, "word0", src, config, beams=2, max_len=5)
    assert a == b


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------


def test_cost_linear_in_source_length():
    base = ModelConfig(vocab_size=9, max_positions=1024)
    config = SegEncConfig(base=base, max_input_tokens=16384, segment_length=512)
    single = cost_profile(config, query_len=16, source_len=4096)
    double = cost_profile(config, query_len=16, source_len=8192)
    ratio = double["encoder_attention_pairs"] / single["encoder_attention_pairs"]
    n1, n2 = single["n_segments"], double["n_segments"]
    assert n2 <= 2 * n1 + 1
    assert ratio <= (2 * n1 + 1) / n1


def test_overlap_roughly_doubles_segments():
    base = ModelConfig(vocab_size=9, max_positions=1024)
    overlapping = SegEncConfig(
        base=base, max_input_tokens=8192, segment_length=512, overlap_fraction=0.5
    )
    disjoint = SegEncConfig(
        base=base, max_input_tokens=8192, segment_length=512, overlap_fraction=0.0
    )
    n_over = segment_count(overlapping)
    n_dis = segment_count(disjoint)
    assert n_dis == 16
    assert 2 * n_dis - 1 == n_over


def test_dense_cost_grows_quadratically():
    assert dense_attention_pairs(8192) / dense_attention_pairs(4096) == 4.0
    base = ModelConfig(vocab_size=9, max_positions=1024)
    config = SegEncConfig(base=base, max_input_tokens=16384, segment_length=512)
    seg_ratio = (
        cost_profile(config, source_len=8192)["encoder_attention_pairs"]
        / cost_profile(config, source_len=4096)["encoder_attention_pairs"]
    )
    assert seg_ratio < 2.2  # linear-ish, far below the dense 4x


def test_config_validation():
    base = ModelConfig(vocab_size=9, max_positions=16)
    with pytest.raises(SegEncError):
        SegEncConfig(base=base, max_input_tokens=8, segment_length=16)
    with pytest.raises(SegEncError):
        SegEncConfig(base=base, max_input_tokens=64, segment_length=16)  # no query room
    with pytest.raises(SegEncError):
        SegEncConfig(base=base, max_input_tokens=64, segment_length=8, overlap_fraction=1.0)


def test_extras_round_trip():
    base = ModelConfig(vocab_size=9, max_positions=1024)
    config = SegEncConfig(base=base, max_input_tokens=4096, segment_length=256)
    again = SegEncConfig.from_extras(base, config.to_extras())
    assert again == config
