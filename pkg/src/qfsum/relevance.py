"""Supervision construction for extractor models.

Continuous targets are the ROUGE overlap between each passage and the
reference summary (regression training); binary labels pick top passages as
positives with seeded negative sampling (likelihood training). A query-masking
transform supports masked-relevance style inference; the default regression
path always uses the original, unmasked query.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import QueryInstance
from .rouge import DEFAULT_CONFIG, RougeConfig, STOPWORDS, mean_rouge, score_tokens
from .segmenter import Passage

WH_WORDS = ("what", "who", "when", "where", "why", "how", "which")

POSITIVE = "positive"
NEGATIVE = "negative"


class RelevanceError(ValueError):
    """Raised on invalid supervision parameters."""


@dataclass(frozen=True)
class RelevanceExample:
    """A (query, passage) pair with either a regression target or a label."""

    query_id: str
    query_text: str
    passage: Passage
    target: float | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        if (self.target is None) == (self.label is None):
            raise RelevanceError("exactly one of target / label must be set")
        if self.target is not None and not 0.0 <= self.target <= 1.0:
            raise RelevanceError(f"target {self.target} outside [0, 1]")
        if self.label is not None and self.label not in (POSITIVE, NEGATIVE):
            raise RelevanceError(f"label must be positive/negative, got {self.label!r}")


@dataclass(frozen=True)
class MaskingConfig:
    mode: str = "none"
    mask_token: str = "<mask>"

    def __post_init__(self) -> None:
        if self.mode not in ("none", "wh_word_mask", "content_word_mask"):
            raise RelevanceError(f"unknown masking mode {self.mode!r}")
        if self.mode != "none" and not self.mask_token:
            raise RelevanceError("mask_token must be non-empty when masking")


def relevance_target(passage: Passage, instance: QueryInstance, config: RougeConfig) -> float:
    """Mean ROUGE F1 of the passage against the instance's reference summary."""
    from .rouge import base_tokens

    scores = score_tokens(passage.tokens, base_tokens(instance.reference_summary), config)
    return mean_rouge(scores.values())


def regression_targets(
    instance: QueryInstance,
    passages: Sequence[Passage],
    config: RougeConfig = DEFAULT_CONFIG,
) -> list[RelevanceExample]:
    """One regression example per passage; the query passes through unmasked."""
    for p in passages:
        if p.meeting_id != instance.meeting_id:
            raise RelevanceError(
                f"passage {p.passage_id!r} belongs to {p.meeting_id!r}, "
                f"not {instance.meeting_id!r}"
            )
    return [
        RelevanceExample(
            query_id=instance.query_id,
            query_text=instance.query,
            passage=p,
            target=relevance_target(p, instance, config),
        )
        for p in passages
    ]


def binary_labels(
    instance: QueryInstance,
    passages: Sequence[Passage],
    k_pos: int = 1,
    n_neg: int = 7,
    seed: int = 0,
    config: RougeConfig = DEFAULT_CONFIG,
) -> list[RelevanceExample]:
    """Top-k passages by ROUGE target become positives; negatives are sampled.

    Ties at the positive cut break toward the lower passage index. Negatives
    are drawn uniformly (seeded) from the remaining passages. Positives come
    first in the returned list, in rank order.
    """
    if k_pos < 1 or n_neg < 1:
        raise RelevanceError("k_pos and n_neg must be >= 1")
    if len(passages) < k_pos + n_neg:
        raise RelevanceError(
            f"need at least {k_pos + n_neg} passages, got {len(passages)}"
        )
    regression = regression_targets(instance, passages, config)
    order = sorted(range(len(passages)), key=lambda i: (-regression[i].target, i))
    pos_idx = order[:k_pos]
    rest = sorted(order[k_pos:])
    rng = random.Random(seed)
    neg_idx = rng.sample(rest, n_neg)

    examples = [
        RelevanceExample(
            query_id=instance.query_id,
            query_text=instance.query,
            passage=passages[i],
            label=POSITIVE,
        )
        for i in pos_idx
    ]
    examples.extend(
        RelevanceExample(
            query_id=instance.query_id,
            query_text=instance.query,
            passage=passages[i],
            label=NEGATIVE,
        )
        for i in neg_idx
    )
    return examples


_WORD_SPLIT_RE = re.compile(r"[^\W_]+", re.UNICODE)


def mask_query(text: str, config: MaskingConfig) -> str:
    """Replace query words with the mask token according to the config mode.

    ``wh_word_mask`` replaces interrogatives; ``content_word_mask`` replaces
    every non-stopword word. Punctuation and spacing are preserved.
    """
    if config.mode == "none":
        return text

    if config.mode == "wh_word_mask":
        keep = lambda word: word.lower() not in WH_WORDS
    else:
        keep = lambda word: word.lower() in STOPWORDS

    def repl(match: re.Match) -> str:
        word = match.group(0)
        return word if keep(word) else config.mask_token

    return _WORD_SPLIT_RE.sub(repl, text)


def dump_examples(examples: Sequence[RelevanceExample], path: str | Path) -> Path:
    """Write relevance examples as JSONL for training reproducibility."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            obj: dict = {"query_id": ex.query_id, "passage_id": ex.passage.passage_id}
            if ex.target is not None:
                obj["target"] = ex.target
            else:
                obj["label"] = ex.label
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    return path
