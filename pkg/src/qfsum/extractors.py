"""Passage scoring models and the score-and-rank extraction pipeline.

Four scorers are supported: a single-encoder regression model over the joint
query/passage encoding, two dual-encoder variants (shared-tower regression and
contrastively-trained retrieval), and two heuristics (lead order, gold-span
oracle). Ranked lists are turned into budgeted extracts by concatenation in
rank order with token-granular truncation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .corpus import QueryInstance
from .models import DualEncoder, EncoderScorer, pad_batch
from .segmenter import Passage
from .vocab import BOS, PSG, QRY, SEP, Vocabulary

SEP_TEXT = "<sep>"


class ExtractorError(ValueError):
    """Raised on invalid ranking inputs or unavailable oracles."""


@dataclass(frozen=True)
class ScoredPassage:
    passage: Passage
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ExtractorError(f"non-finite score for {self.passage.passage_id!r}")


@dataclass(frozen=True)
class RankedPassageList:
    """Passages sorted by descending score, ties by original position."""

    items: tuple[ScoredPassage, ...]

    @classmethod
    def from_scores(
        cls, passages: Sequence[Passage], scores: Sequence[float]
    ) -> "RankedPassageList":
        if len(passages) != len(scores):
            raise ExtractorError("passages and scores must align")
        order = sorted(range(len(passages)), key=lambda i: (-scores[i], i))
        return cls(
            items=tuple(ScoredPassage(passages[i], float(scores[i])) for i in order)
        )

    def passages(self) -> list[Passage]:
        return [item.passage for item in self.items]


# ---------------------------------------------------------------------------
# Model input layouts
# ---------------------------------------------------------------------------


def single_encoder_input(
    vocab: Vocabulary, query: str, passage_tokens: Sequence[str], max_positions: int
) -> list[int]:
    """``BOS query SEP passage`` ids; the passage tail is trimmed to fit."""
    q_ids = vocab.encode(query)
    head = [BOS, *q_ids, SEP]
    if len(head) >= max_positions:
        raise ExtractorError("query alone exceeds the model input limit")
    room = max_positions - len(head)
    return head + vocab.encode(list(passage_tokens)[:room])


def dual_encoder_side_input(
    vocab: Vocabulary,
    tokens_or_text: str | Sequence[str],
    side: str,
    flavor: str,
    max_positions: int,
) -> list[int]:
    """Per-side ids: type token appended for relregtt, BOS-prefixed for dpr."""
    ids = vocab.encode(tokens_or_text)
    if flavor == "relregtt":
        type_token = QRY if side == "query" else PSG
        return ids[: max_positions - 1] + [type_token]
    return [BOS] + ids[: max_positions - 1]


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------


def score_single_encoder(
    model: EncoderScorer, query: str, passage: Passage
) -> float:
    return score_single_encoder_batch(model, query, [passage])[0]


def score_single_encoder_batch(
    model: EncoderScorer, query: str, passages: Sequence[Passage]
) -> list[float]:
    inputs = [
        single_encoder_input(model.vocab, query, p.tokens, model.config.max_positions)
        for p in passages
    ]
    ids, padding = pad_batch(inputs)
    with torch.no_grad():
        scores = model(ids, key_padding=padding)
    return [float(s) for s in scores]


def embed_passages(model: DualEncoder, passages: Sequence[Passage]) -> torch.Tensor:
    """Precompute passage embeddings for caching; rows align with input order."""
    inputs = [
        dual_encoder_side_input(
            model.vocab, p.tokens, "passage", model.flavor, model.config.max_positions
        )
        for p in passages
    ]
    ids, padding = pad_batch(inputs)
    with torch.no_grad():
        return model.embed_passages(ids, padding)


def embed_query(model: DualEncoder, query: str) -> torch.Tensor:
    ids, padding = pad_batch(
        [dual_encoder_side_input(model.vocab, query, "query", model.flavor,
                                 model.config.max_positions)]
    )
    with torch.no_grad():
        return model.embed_queries(ids, padding)[0]


def score_dual_encoder(
    model: DualEncoder,
    query: str,
    passage: Passage,
    cached_embedding: torch.Tensor | None = None,
) -> float:
    """Inner product of pooled sides; a precomputed passage embedding may be reused."""
    q_emb = embed_query(model, query)
    if cached_embedding is None:
        cached_embedding = embed_passages(model, [passage])[0]
    return float((q_emb * cached_embedding).sum())


def score_dual_encoder_batch(
    model: DualEncoder, query: str, passages: Sequence[Passage]
) -> list[float]:
    q_emb = embed_query(model, query)
    p_emb = embed_passages(model, passages)
    return [float(s) for s in p_emb @ q_emb]


# ---------------------------------------------------------------------------
# Heuristic rankings
# ---------------------------------------------------------------------------


def lead_scores(passages: Sequence[Passage]) -> RankedPassageList:
    """Scores that reproduce the original passage order (first is best)."""
    return RankedPassageList.from_scores(
        passages, [-float(i) for i in range(len(passages))]
    )


def oracle_scores(
    instance: QueryInstance, passages: Sequence[Passage]
) -> RankedPassageList:
    """Gold-span passages first (original order), non-gold after."""
    if not instance.gold_spans:
        raise ExtractorError(
            f"instance {instance.query_id!r} has no gold spans; oracle unavailable"
        )
    gold = instance.gold_indices()
    scores = [
        1.0 if any(i in gold for i in range(*p.span)) else 0.0 for p in passages
    ]
    return RankedPassageList.from_scores(passages, scores)


def rank_passages(
    extractor: str,
    query: str,
    passages: Sequence[Passage],
    model: EncoderScorer | DualEncoder | None = None,
    instance: QueryInstance | None = None,
) -> RankedPassageList:
    """Dispatch by extractor name: lead, oracle, single, dual, dpr."""
    if extractor == "lead":
        return lead_scores(passages)
    if extractor == "oracle":
        if instance is None:
            raise ExtractorError("oracle ranking requires the query instance")
        return oracle_scores(instance, passages)
    if extractor == "single":
        if not isinstance(model, EncoderScorer):
            raise ExtractorError("single-encoder ranking requires an EncoderScorer")
        return RankedPassageList.from_scores(
            passages, score_single_encoder_batch(model, query, passages)
        )
    if extractor in ("dual", "dpr"):
        if not isinstance(model, DualEncoder):
            raise ExtractorError("dual-encoder ranking requires a DualEncoder")
        return RankedPassageList.from_scores(
            passages, score_dual_encoder_batch(model, query, passages)
        )
    raise ExtractorError(f"unknown extractor {extractor!r}")


# ---------------------------------------------------------------------------
# Budgeted extracts
# ---------------------------------------------------------------------------


def budgeted_selection(
    ranked: RankedPassageList, budget: int
) -> list[tuple[ScoredPassage, int]]:
    """Walk the ranking, recording how many tokens of each passage fit."""
    if budget < 1:
        raise ExtractorError("budget must be >= 1")
    out: list[tuple[ScoredPassage, int]] = []
    remaining = budget
    for item in ranked.items:
        if remaining <= 0:
            break
        take = min(item.passage.token_count, remaining)
        out.append((item, take))
        remaining -= take
    return out


def rank_and_truncate(ranked: RankedPassageList, query: str, budget: int) -> str:
    """Concatenate passages in rank order, cut at token granularity to budget.

    The budget covers passage tokens only; the query (reserved separately by
    the abstractor input layout) and the separators are not counted.
    """
    pieces = [
        " ".join(item.passage.tokens[:take])
        for item, take in budgeted_selection(ranked, budget)
    ]
    return f" {SEP_TEXT} ".join(pieces)


def abstractor_input(query: str, extract: str) -> str:
    """Input layout for the second-stage summarizer: ``query <sep> extract``."""
    return f"{query} {SEP_TEXT} {extract}"


def export_ranked(
    rankings: Sequence[tuple[str, RankedPassageList]], path: str | Path
) -> Path:
    """Write rankings as JSONL rows {query_id, passage_id, rank, score}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for query_id, ranked in rankings:
            for rank, item in enumerate(ranked.items):
                fh.write(
                    json.dumps(
                        {
                            "query_id": query_id,
                            "passage_id": item.passage.passage_id,
                            "rank": rank,
                            "score": item.score,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    return path
