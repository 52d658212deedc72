"""Tests for relevance supervision construction and query masking."""

import json

import pytest

from qfsum.corpus import Meeting, QueryInstance, Utterance, synth_corpus
from qfsum.relevance import (
    NEGATIVE,
    POSITIVE,
    MaskingConfig,
    RelevanceError,
    RelevanceExample,
    binary_labels,
    dump_examples,
    mask_query,
    regression_targets,
)
from qfsum.rouge import STOPWORDS
from qfsum.segmenter import utterance_passages


def make_instance_and_passages(summary="we ship the feature next week"):
    meeting = Meeting(
        meeting_id="m0",
        utterances=(
            Utterance(0, "", "we ship the feature next week"),
            Utterance(1, "", "lunch plans for tuesday maybe"),
            Utterance(2, "", "completely unrelated chatter here"),
        ),
    )
    instance = QueryInstance(
        query_id="q0", meeting_id="m0",
        query="what did they decide", reference_summary=summary,
        gold_spans=((0, 1),),
    )
    return instance, utterance_passages(meeting)


def test_regression_identical_passage_scores_one():
    instance, passages = make_instance_and_passages()
    examples = regression_targets(instance, passages)
    assert examples[0].target == pytest.approx(1.0)


def test_regression_disjoint_passage_scores_zero():
    instance, passages = make_instance_and_passages()
    examples = regression_targets(instance, passages)
    assert examples[2].target == pytest.approx(0.0)


def test_regression_rejects_foreign_passage():
    instance, _ = make_instance_and_passages()
    other = Meeting(meeting_id="m9", utterances=(Utterance(0, "", "hello world"),))
    with pytest.raises(RelevanceError, match="belongs to"):
        regression_targets(instance, utterance_passages(other))


def test_regression_targets_deterministic_on_synth():
    corpus = synth_corpus(seed=5)
    inst = corpus.split("train").instances[0]
    passages = utterance_passages(corpus.meetings[inst.meeting_id])
    a = regression_targets(inst, passages)
    b = regression_targets(inst, passages)
    assert [e.target for e in a] == [e.target for e in b]


def test_planted_passage_is_positive_on_synth():
    corpus = synth_corpus(seed=5)
    for inst in corpus.split("train").instances[:6]:
        passages = utterance_passages(corpus.meetings[inst.meeting_id])
        examples = binary_labels(inst, passages, k_pos=1, n_neg=2, seed=0)
        positive = [e for e in examples if e.label == POSITIVE][0]
        assert positive.passage.span[0] in inst.gold_indices()


def test_binary_tie_break_and_disjointness():
    meeting = Meeting(
        meeting_id="m0",
        utterances=tuple(Utterance(i, "", "same words here") for i in range(5)),
    )
    instance = QueryInstance(
        query_id="q0", meeting_id="m0", query="q", reference_summary="same words here",
    )
    passages = utterance_passages(meeting)
    examples = binary_labels(instance, passages, k_pos=2, n_neg=2, seed=1)
    positives = [e.passage.passage_id for e in examples if e.label == POSITIVE]
    negatives = [e.passage.passage_id for e in examples if e.label == NEGATIVE]
    assert positives == ["m0:u0", "m0:u1"]  # ties break to lower index
    assert not set(positives) & set(negatives)


def test_binary_seed_determinism():
    instance, passages = make_instance_and_passages()
    a = binary_labels(instance, passages, k_pos=1, n_neg=1, seed=42)
    b = binary_labels(instance, passages, k_pos=1, n_neg=1, seed=42)
    assert [e.passage.passage_id for e in a] == [e.passage.passage_id for e in b]


def test_binary_insufficient_passages():
    instance, passages = make_instance_and_passages()
    with pytest.raises(RelevanceError, match="at least"):
        binary_labels(instance, passages, k_pos=2, n_neg=2, seed=0)


def test_example_exactly_one_of_target_label():
    instance, passages = make_instance_and_passages()
    with pytest.raises(RelevanceError):
        RelevanceExample(query_id="q", query_text="t", passage=passages[0])
    with pytest.raises(RelevanceError):
        RelevanceExample(
            query_id="q", query_text="t", passage=passages[0], target=0.5, label=POSITIVE
        )


# ---------------------------------------------------------------------------
# Query masking
# ---------------------------------------------------------------------------


def test_wh_word_mask():
    config = MaskingConfig(mode="wh_word_mask", mask_token="[MASK]")
    assert mask_query("What did the group decide?", config) == "[MASK] did the group decide?"


def test_mask_none_is_identity():
    config = MaskingConfig(mode="none")
    assert mask_query("Who knows what?", config) == "Who knows what?"


def test_wh_mask_idempotent():
    config = MaskingConfig(mode="wh_word_mask")
    once = mask_query("Why and how did it end where it began?", config)
    assert mask_query(once, config) == once


def test_content_word_mask_keeps_stopwords():
    config = MaskingConfig(mode="content_word_mask", mask_token="_")
    out = mask_query("the committee approved the budget", config)
    for word in out.split():
        assert word == "_" or word in STOPWORDS
    assert out == "the _ _ the _"


def test_mask_config_validation():
    with pytest.raises(RelevanceError):
        MaskingConfig(mode="wh_word_mask", mask_token="")
    with pytest.raises(RelevanceError):
        MaskingConfig(mode="scramble")


def test_dump_examples(tmp_path):
    instance, passages = make_instance_and_passages()
    examples = regression_targets(instance, passages)
    path = dump_examples(examples, tmp_path / "targets.jsonl")
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == len(passages)
    assert {"query_id", "passage_id", "target"} == set(lines[0])
