"""Evaluation protocols: extractor lexical/span overlap tables, summarizer
ROUGE tables, and CSV/markdown report rendering.

Extractor rows mirror the Top-1/5/15/All layout with average extract word
counts and span overlap against gold annotations at a token budget. Reported
ROUGE is F1, scaled to 0-100 in rendered reports.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import QueryInstance
from .extractors import RankedPassageList, budgeted_selection
from .rouge import DEFAULT_CONFIG, RougeConfig, RougeScore, base_tokens, score_tokens

TOPK_LEVELS = (1, 5, 15, "all")


class EvalError(ValueError):
    """Raised on invalid evaluation inputs."""


@dataclass(frozen=True)
class ExtractorEvalRow:
    model_name: str
    topk: int | str
    rouge: dict[str, RougeScore]
    avg_words: float
    span_precision: float | None = None
    span_recall: float | None = None


@dataclass(frozen=True)
class SummaryEvalRow:
    model_name: str
    rouge: dict[str, RougeScore]
    n_examples: int

    def __post_init__(self) -> None:
        if self.n_examples < 1:
            raise EvalError("a summary row needs at least one example")


def _extract_tokens(
    ranked: RankedPassageList, topk: int | str, budget: int
) -> list[str]:
    if topk == "all":
        tokens: list[str] = []
        for item, take in budgeted_selection(ranked, budget):
            tokens.extend(item.passage.tokens[:take])
        return tokens
    if not isinstance(topk, int) or topk < 1:
        raise EvalError(f"topk must be a positive int or 'all', got {topk!r}")
    tokens = []
    for item in ranked.items[:topk]:
        tokens.extend(item.passage.tokens)
    return tokens


def extractor_lexical_overlap(
    ranked: RankedPassageList,
    reference: str,
    topk: int | str,
    budget: int = 1024,
    config: RougeConfig = DEFAULT_CONFIG,
) -> ExtractorEvalRow:
    """ROUGE of the top-k (or budget-truncated full) extract vs the reference."""
    if not ranked.items:
        raise EvalError("ranking is empty")
    tokens = _extract_tokens(ranked, topk, budget)
    return ExtractorEvalRow(
        model_name="",
        topk=topk,
        rouge=score_tokens(tokens, base_tokens(reference), config),
        avg_words=float(len(tokens)),
    )


def span_overlap(
    ranked: RankedPassageList,
    gold_spans: Sequence[tuple[int, int]],
    budget: int = 1024,
) -> tuple[float, float]:
    """Precision/recall of budgeted extract utterances against gold spans.

    Utterances partially included at the truncation boundary count as
    included: their tokens reach the downstream abstractor. Zero denominators
    yield zero scores.
    """
    included: set[int] = set()
    for item, _take in budgeted_selection(ranked, budget):
        included.update(range(*item.passage.span))
    gold: set[int] = set()
    for start, end in gold_spans:
        gold.update(range(start, end))
    overlap = len(included & gold)
    precision = overlap / len(included) if included else 0.0
    recall = overlap / len(gold) if gold else 0.0
    return precision, recall


def _mean_rouge_scores(
    per_instance: Sequence[dict[str, RougeScore]]
) -> dict[str, RougeScore]:
    if not per_instance:
        raise EvalError("no instances to average")
    variants = list(per_instance[0])
    out = {}
    for v in variants:
        n = len(per_instance)
        out[v] = RougeScore(
            precision=sum(d[v].precision for d in per_instance) / n,
            recall=sum(d[v].recall for d in per_instance) / n,
            f1=sum(d[v].f1 for d in per_instance) / n,
        )
    return out


def extractor_table(
    model_name: str,
    evals: Sequence[tuple[RankedPassageList, str, Sequence[tuple[int, int]]]],
    budget: int = 1024,
    config: RougeConfig = DEFAULT_CONFIG,
) -> list[ExtractorEvalRow]:
    """Aggregate one extractor into Top-1/5/15/All rows over instances.

    ``evals`` holds (ranking, reference summary, gold spans) per instance.
    Span overlap is reported on the All row; instances without gold spans are
    excluded from the span averages.
    """
    if not evals:
        raise EvalError("no instances to evaluate")
    rows = []
    for topk in TOPK_LEVELS:
        per_rouge = []
        words = []
        for ranked, reference, _ in evals:
            partial = extractor_lexical_overlap(ranked, reference, topk, budget, config)
            per_rouge.append(partial.rouge)
            words.append(partial.avg_words)
        span_p = span_r = None
        if topk == "all":
            pairs = [
                span_overlap(ranked, gold, budget)
                for ranked, _, gold in evals
                if gold
            ]
            if pairs:
                span_p = sum(p for p, _ in pairs) / len(pairs)
                span_r = sum(r for _, r in pairs) / len(pairs)
        rows.append(
            ExtractorEvalRow(
                model_name=model_name,
                topk=topk,
                rouge=_mean_rouge_scores(per_rouge),
                avg_words=sum(words) / len(words),
                span_precision=span_p,
                span_recall=span_r,
            )
        )
    return rows


def summarizer_eval(
    outputs: Sequence[tuple[str, str]],
    model_name: str = "",
    config: RougeConfig = DEFAULT_CONFIG,
) -> SummaryEvalRow:
    """Mean per-variant ROUGE of (generated, reference) pairs."""
    if not outputs:
        raise EvalError("no outputs to evaluate")
    per_instance = [
        score_tokens(base_tokens(gen), base_tokens(ref), config) for gen, ref in outputs
    ]
    return SummaryEvalRow(
        model_name=model_name,
        rouge=_mean_rouge_scores(per_instance),
        n_examples=len(outputs),
    )


# ---------------------------------------------------------------------------
# Per-example dumps
# ---------------------------------------------------------------------------


def dump_summaries(
    rows: Sequence[tuple[str, str, str]],
    path: str | Path,
    config: RougeConfig = DEFAULT_CONFIG,
) -> Path:
    """Write (query_id, generated, reference) rows with per-example ROUGE F1."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for query_id, generated, reference in rows:
            scores = score_tokens(base_tokens(generated), base_tokens(reference), config)
            obj = {
                "query_id": query_id,
                "generated": generated,
                "reference": reference,
            }
            for variant, s in scores.items():
                obj[f"r{variant.lower()}"] = s.f1
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    return path


def load_summary_dump(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def _fmt(value: float | None, scale: float = 1.0) -> str:
    return "" if value is None else f"{value * scale:.2f}"


def _extractor_cells(row: ExtractorEvalRow) -> list[str]:
    cells = [row.model_name, str(row.topk)]
    for variant in sorted(row.rouge):
        cells.append(_fmt(row.rouge[variant].f1, 100.0))
    cells.append(_fmt(row.avg_words))
    cells.append(_fmt(row.span_precision))
    cells.append(_fmt(row.span_recall))
    return cells


def _summary_cells(row: SummaryEvalRow) -> list[str]:
    cells = [row.model_name]
    for variant in sorted(row.rouge):
        cells.append(_fmt(row.rouge[variant].f1, 100.0))
    cells.append(str(row.n_examples))
    return cells


def render_report(
    rows: Sequence[ExtractorEvalRow] | Sequence[SummaryEvalRow],
    fmt: str = "markdown",
) -> str:
    """Render homogeneous rows as CSV or a markdown table, 2-decimal fixed."""
    if fmt not in ("csv", "markdown"):
        raise EvalError(f"unknown report format {fmt!r}")
    if rows and all(isinstance(r, ExtractorEvalRow) for r in rows):
        variants = sorted(rows[0].rouge)
        header = ["model", "topk", *[f"r{v.lower()}" for v in variants],
                  "avg_words", "span_precision", "span_recall"]
        table = [_extractor_cells(r) for r in rows]
    elif rows and all(isinstance(r, SummaryEvalRow) for r in rows):
        variants = sorted(rows[0].rouge)
        header = ["model", *[f"r{v.lower()}" for v in variants], "n_examples"]
        table = [_summary_cells(r) for r in rows]
    elif not rows:
        header = ["model"]
        table = []
    else:
        raise EvalError("rows must be homogeneous")

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(table)
        return buf.getvalue()
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    for cells in table:
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
