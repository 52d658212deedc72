"""Training orchestration: epoch loops, validation-based checkpoint selection,
and transfer-learning chains.

Summarizers are selected by mean ROUGE of beam-decoded validation summaries;
extractors by budgeted recall of gold utterances. Checkpoint provenance
records every (dataset, epochs) stage, so transfer chains are auditable from
the checkpoint file alone.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import torch

from .corpus import Corpus, QueryInstance
from .extractors import (
    abstractor_input,
    budgeted_selection,
    dual_encoder_side_input,
    rank_passages,
    single_encoder_input,
)
from .models import (
    Checkpoint,
    ContrastiveBatch,
    DualEncoder,
    DualScoreBatch,
    EXTRACTOR_KINDS,
    ModelConfig,
    ProvenanceEntry,
    ScoreBatch,
    Seq2SeqBatch,
    Seq2SeqModel,
    SUMMARIZER_KINDS,
    Trainer,
    beam_search,
    build_local_global_mask,
    new_model,
)
from .relevance import binary_labels, regression_targets
from .rouge import DEFAULT_CONFIG, RougeConfig, mean_rouge, score
from .segenc import SegEncConfig, segenc_summarize, segment_inputs
from .segmenter import Passage, utterance_passages
from .vocab import BOS, EOS, SEP, Vocabulary


class TrainError(ValueError):
    """Raised on invalid run configuration."""


@dataclass
class TrainRun:
    """One training run over a corpus; defaults mirror the experiment setup."""

    kind: str
    corpus: Corpus
    dataset_name: str = "corpus"
    train_split: str = "train"
    val_split: str = "validation"
    epochs: int = 10
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 1
    accumulation_steps: int = 4
    optimizer: str = "adam"
    model_config: ModelConfig | None = None
    arch: dict = field(default_factory=dict)
    segenc_extras: dict = field(default_factory=dict)
    init_checkpoint: Checkpoint | None = None
    extracts: dict[str, str] | None = None
    beams: int = 4
    max_summary_len: int = 24
    length_penalty: float = 1.0
    extract_budget: int = 64
    k_pos: int = 1
    n_neg: int = 7
    target_weighting: float = 0.0
    rouge_config: RougeConfig = DEFAULT_CONFIG
    log_path: str | Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in SUMMARIZER_KINDS + EXTRACTOR_KINDS:
            raise TrainError(f"unknown model kind {self.kind!r}")
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if self.batch_size < 1 or self.accumulation_steps < 1:
            raise TrainError("batch_size and accumulation_steps must be >= 1")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_metric: float
    wall_time: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochLog]
    best_epoch: int


# ---------------------------------------------------------------------------
# Input construction
# ---------------------------------------------------------------------------


def meeting_source_tokens(corpus: Corpus, instance: QueryInstance) -> list[str]:
    """Full-source tokens for an instance: speaker-prefixed utterances in order."""
    tokens: list[str] = []
    for passage in utterance_passages(corpus.meeting(instance.meeting_id)):
        tokens.extend(passage.tokens)
    return tokens


def instance_source_tokens(
    corpus: Corpus, instance: QueryInstance, extracts: dict[str, str] | None
) -> list[str]:
    """Source for a summarizer: the budgeted extract when one is provided."""
    from .vocab import word_tokenize

    if extracts is not None and instance.query_id in extracts:
        return word_tokenize(extracts[instance.query_id])
    return meeting_source_tokens(corpus, instance)


def summarizer_encoder_ids(
    vocab: Vocabulary, query: str, source_tokens: Sequence[str], max_positions: int
) -> tuple[list[int], int]:
    """``query SEP source`` ids truncated to fit; returns (ids, query_length)."""
    q_ids = vocab.encode(query)
    if len(q_ids) + 2 > max_positions:
        q_ids = q_ids[: max_positions - 2]
    room = max_positions - len(q_ids) - 1
    ids = [*q_ids, SEP, *vocab.encode(list(source_tokens))[:room]]
    return ids, len(q_ids)


def target_ids(vocab: Vocabulary, summary: str, max_positions: int) -> list[int]:
    ids = vocab.encode(summary)[: max_positions - 2]
    return [BOS, *ids, EOS]


def encoder_mask_for(
    kind: str, config: ModelConfig, input_len: int, query_len: int
) -> torch.Tensor | None:
    """Local+global mask for windowed summarizers; None means dense."""
    if kind != "summarizer_localglobal" or config.attention_window is None:
        return None
    globals_: tuple[int, ...] = ()
    if config.global_query_attention:
        globals_ = tuple(range(min(query_len + 1, input_len)))  # query plus SEP
    return build_local_global_mask(input_len, config.attention_window, globals_)


def summarize_instance(
    model: Seq2SeqModel,
    kind: str,
    query: str,
    source_tokens: Sequence[str],
    segenc_config: SegEncConfig | None = None,
    beams: int = 4,
    max_len: int = 24,
    length_penalty: float = 1.0,
) -> str:
    """Decode one summary with the decoding strategy of the given model kind."""
    if kind == "summarizer_segenc":
        if segenc_config is None:
            raise TrainError("segenc summarization requires a SegEncConfig")
        return segenc_summarize(
            model, query, source_tokens, segenc_config,
            beams=beams, max_len=max_len, length_penalty=length_penalty,
        )
    ids, q_len = summarizer_encoder_ids(
        model.vocab, query, source_tokens, model.config.max_positions
    )
    mask = encoder_mask_for(kind, model.config, len(ids), q_len)
    id_tensor = torch.tensor([ids], dtype=torch.long)
    with torch.no_grad():
        memory = model.encode(id_tensor, attn_mask=mask)
    out = beam_search(
        model, memory, beams=beams, max_len=max_len, length_penalty=length_penalty
    )
    return model.vocab.decode(out)


# ---------------------------------------------------------------------------
# Example construction per model kind
# ---------------------------------------------------------------------------


def _summarizer_examples(run: TrainRun, model: Seq2SeqModel) -> list:
    vocab = model.vocab
    config = model.config
    out = []
    for inst in run.corpus.split(run.train_split).instances:
        source = instance_source_tokens(run.corpus, inst, run.extracts)
        tgt = target_ids(vocab, inst.reference_summary, config.max_positions)
        if run.kind == "summarizer_segenc":
            out.append(("segenc", inst.query, source, tgt))
        else:
            ids, q_len = summarizer_encoder_ids(
                vocab, inst.query, source, config.max_positions
            )
            mask = encoder_mask_for(run.kind, config, len(ids), q_len)
            out.append(("flat", ids, mask, tgt))
    return out


def make_segenc_loss(segenc_config: SegEncConfig):
    """Loss over a group of (tag, query, source, target) segenc examples."""
    from .models import decoder_loss_from_memory
    from .segenc import segenc_encode

    def segenc_loss(model, batch_group):
        total = None
        count = 0
        for _, query, source, tgt in batch_group:
            memory = segenc_encode(model, query, source, segenc_config)
            loss, c = decoder_loss_from_memory(model, memory.embeddings, None, [tgt])
            total = loss if total is None else total + loss
            count += c
        return total, count

    return segenc_loss


def _summarizer_batch(run: TrainRun, group: list):
    if run.kind == "summarizer_segenc":
        return group  # consumed by the segenc loss function
    src = [ids for _, ids, _, _ in group]
    masks = [m for _, _, m, _ in group]
    tgt = [t for _, _, _, t in group]
    if any(m is not None for m in masks):
        masks = [
            m if m is not None else torch.ones(len(s), len(s), dtype=torch.bool)
            for m, s in zip(masks, src)
        ]
        return Seq2SeqBatch(src=src, tgt=tgt, src_masks=masks)
    return Seq2SeqBatch(src=src, tgt=tgt)


def _extractor_examples(run: TrainRun, model) -> list:
    vocab = model.vocab
    config = model.config
    out = []
    for inst in run.corpus.split(run.train_split).instances:
        passages = utterance_passages(run.corpus.meeting(inst.meeting_id))
        if run.kind == "extractor_dpr":
            examples = binary_labels(
                inst, passages, k_pos=run.k_pos, n_neg=run.n_neg,
                seed=run.seed, config=run.rouge_config,
            )
            positives = [e for e in examples if e.label == "positive"]
            negatives = [e for e in examples if e.label == "negative"]
            candidates = [
                dual_encoder_side_input(
                    vocab, e.passage.tokens, "passage", model.flavor, config.max_positions
                )
                for e in positives[:1] + negatives
            ]
            query = dual_encoder_side_input(
                vocab, inst.query, "query", model.flavor, config.max_positions
            )
            out.append(ContrastiveBatch(query=query, candidates=candidates))
        else:
            for ex in regression_targets(inst, passages, run.rouge_config):
                weight = 1.0 + run.target_weighting * ex.target
                if run.kind == "extractor_single":
                    ids = single_encoder_input(
                        vocab, inst.query, ex.passage.tokens, config.max_positions
                    )
                    out.append((ids, ex.target, weight))
                else:
                    q = dual_encoder_side_input(
                        vocab, inst.query, "query", model.flavor, config.max_positions
                    )
                    p = dual_encoder_side_input(
                        vocab, ex.passage.tokens, "passage", model.flavor,
                        config.max_positions,
                    )
                    out.append((q, p, ex.target, weight))
    return out


def _extractor_batch(run: TrainRun, group: list):
    if run.kind == "extractor_dpr":
        # each example is already a ContrastiveBatch; step over them directly
        return group
    if run.kind == "extractor_single":
        return [
            ScoreBatch(
                inputs=[g[0] for g in group],
                targets=[g[1] for g in group],
                weights=[g[2] for g in group],
            )
        ]
    return [
        DualScoreBatch(
            queries=[g[0] for g in group],
            passages=[g[1] for g in group],
            targets=[g[2] for g in group],
            weights=[g[3] for g in group],
        )
    ]


# ---------------------------------------------------------------------------
# Validation metrics
# ---------------------------------------------------------------------------


def segenc_config_for(run: TrainRun, config: ModelConfig) -> SegEncConfig:
    extras = {
        "max_input_tokens": 4096,
        "segment_length": min(64, config.max_positions - 8),
        "overlap_fraction": 0.5,
    }
    extras.update(run.segenc_extras)
    return SegEncConfig.from_extras(config, extras)


def evaluate_model(
    model,
    kind: str,
    corpus: Corpus,
    split_name: str,
    extracts: dict[str, str] | None = None,
    segenc_config: SegEncConfig | None = None,
    beams: int = 4,
    max_summary_len: int = 24,
    length_penalty: float = 1.0,
    extract_budget: int = 64,
    rouge_config: RougeConfig = DEFAULT_CONFIG,
) -> float:
    """Validation metric: mean ROUGE for summarizers, budgeted gold recall for
    extractors. Averaged over instances of the split."""
    split = corpus.split(split_name)
    if not split.instances:
        raise TrainError(f"split {split_name!r} is empty")
    values = []
    for inst in split.instances:
        if kind in SUMMARIZER_KINDS:
            source = instance_source_tokens(corpus, inst, extracts)
            generated = summarize_instance(
                model, kind, inst.query, source,
                segenc_config=segenc_config, beams=beams,
                max_len=max_summary_len, length_penalty=length_penalty,
            )
            values.append(
                mean_rouge(score(generated, inst.reference_summary, rouge_config).values())
            )
        else:
            gold = inst.gold_indices()
            if not gold:
                continue
            passages = utterance_passages(corpus.meeting(inst.meeting_id))
            extractor = {
                "extractor_single": "single",
                "extractor_dual": "dual",
                "extractor_dpr": "dpr",
            }[kind]
            ranked = rank_passages(extractor, inst.query, passages, model=model)
            included: set[int] = set()
            for item, _taken in budgeted_selection(ranked, extract_budget):
                included.update(range(*item.passage.span))
            values.append(len(included & gold) / len(gold))
    if not values:
        raise TrainError(f"no scorable instances in split {split_name!r}")
    return sum(values) / len(values)


def evaluate_checkpoint(
    checkpoint: Checkpoint, corpus: Corpus, split_name: str, **kwargs
) -> float:
    """Spec surface: metric of a serialized checkpoint on a corpus split."""
    model = checkpoint.build_model()
    segenc_config = None
    if checkpoint.kind == "summarizer_segenc":
        segenc_config = SegEncConfig.from_extras(checkpoint.config, checkpoint.extras)
    return evaluate_model(
        model, checkpoint.kind, corpus, split_name,
        segenc_config=segenc_config, **kwargs,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _resolve_model(run: TrainRun):
    if run.init_checkpoint is not None:
        ckpt = run.init_checkpoint
        family_ok = (
            run.kind in SUMMARIZER_KINDS and ckpt.kind in SUMMARIZER_KINDS
        ) or run.kind == ckpt.kind
        if not family_ok:
            raise TrainError(
                f"cannot initialize {run.kind} from a {ckpt.kind} checkpoint"
            )
        if run.model_config is not None and run.model_config != ckpt.config:
            raise TrainError("model_config conflicts with the initial checkpoint")
        vocab = ckpt.vocab
        config = ckpt.config
        model = new_model(run.kind, config, vocab, seed=run.seed, extras=ckpt.extras)
        model.load_state_dict(ckpt.state)
        return model, vocab, config
    vocab = Vocabulary.from_texts(run.corpus.all_texts(run.train_split))
    if run.model_config is not None:
        config = run.model_config
        if config.vocab_size != len(vocab):
            raise TrainError(
                f"model_config.vocab_size {config.vocab_size} != built vocabulary "
                f"size {len(vocab)}; pass arch overrides instead"
            )
    else:
        arch = dict(run.arch)
        config = ModelConfig(vocab_size=len(vocab), **arch)
    extras = {}
    if run.kind == "summarizer_segenc":
        extras = segenc_config_for(run, config).to_extras()
    model = new_model(run.kind, config, vocab, seed=run.seed, extras=extras)
    return model, vocab, config


def train(run: TrainRun) -> TrainResult:
    """Train for the configured epochs, returning the validation maximizer.

    The selected checkpoint is the earliest epoch attaining the best metric.
    Divergence aborts with the per-epoch log written up to that point.
    """
    torch.manual_seed(run.seed)
    model, vocab, config = _resolve_model(run)
    trainer = Trainer(model, learning_rate=run.learning_rate, optimizer=run.optimizer)

    if run.kind in SUMMARIZER_KINDS:
        examples = _summarizer_examples(run, model)
    else:
        examples = _extractor_examples(run, model)
    if not examples:
        raise TrainError("no training examples")

    segenc_config = (
        segenc_config_for(run, config) if run.kind == "summarizer_segenc" else None
    )
    if segenc_config is not None:
        trainer.loss_fn = make_segenc_loss(segenc_config)

    log: list[EpochLog] = []
    log_fh = None
    if run.log_path is not None:
        log_file = Path(run.log_path)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_file, "w", encoding="utf-8")

    best_metric = float("-inf")
    best_epoch = -1
    best_state: dict[str, torch.Tensor] | None = None

    try:
        for epoch in range(run.epochs):
            start = time.monotonic()
            rng = random.Random(run.seed * 100003 + epoch)
            order = list(range(len(examples)))
            rng.shuffle(order)

            losses = []
            cursor = 0
            step_size = run.batch_size * run.accumulation_steps
            while cursor < len(order):
                chunk = [examples[i] for i in order[cursor : cursor + step_size]]
                cursor += step_size
                micro = [
                    chunk[i : i + run.batch_size]
                    for i in range(0, len(chunk), run.batch_size)
                ]
                if run.kind in SUMMARIZER_KINDS:
                    batches = [_summarizer_batch(run, group) for group in micro]
                else:
                    batches = []
                    for group in micro:
                        batches.extend(_extractor_batch(run, group))
                losses.append(trainer.step(batches))

            metric = evaluate_model(
                model, run.kind, run.corpus, run.val_split,
                extracts=run.extracts, segenc_config=segenc_config,
                beams=run.beams, max_summary_len=run.max_summary_len,
                length_penalty=run.length_penalty,
                extract_budget=run.extract_budget,
                rouge_config=run.rouge_config,
            )
            entry = EpochLog(
                epoch=epoch,
                loss=sum(losses) / len(losses),
                val_metric=metric,
                wall_time=time.monotonic() - start,
            )
            log.append(entry)
            if log_fh is not None:
                log_fh.write(
                    json.dumps(
                        {
                            "epoch": entry.epoch,
                            "loss": entry.loss,
                            "val_metric": entry.val_metric,
                            "wall_time": entry.wall_time,
                        }
                    )
                    + "\n"
                )
                log_fh.flush()
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    finally:
        if log_fh is not None:
            log_fh.close()

    assert best_state is not None
    model.load_state_dict(best_state)
    extras = {}
    if run.kind == "summarizer_segenc":
        extras = segenc_config.to_extras()
    elif isinstance(model, DualEncoder):
        extras = {"tied": model.tied}
    provenance = (
        run.init_checkpoint.provenance if run.init_checkpoint is not None else ()
    )
    checkpoint = Checkpoint.from_model(
        model,
        run.kind,
        provenance=provenance + (ProvenanceEntry(run.dataset_name, run.epochs),),
        selection_metric=best_metric,
        extras=extras,
    )
    return TrainResult(checkpoint=checkpoint, log=log, best_epoch=best_epoch)


def transfer_chain(stages: Sequence[TrainRun]) -> TrainResult:
    """Fine-tune through the stages in order, each starting from the last."""
    if not stages:
        raise TrainError("transfer chain requires at least one stage")
    result: TrainResult | None = None
    for stage in stages:
        if result is not None:
            stage = replace(stage, init_checkpoint=result.checkpoint)
        result = train(stage)
    return result
