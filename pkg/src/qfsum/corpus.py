"""Corpus model and ingestion for query-focused summarization datasets.

The canonical on-disk layout is line-delimited JSON: one ``meetings.jsonl``
file plus one file per split (``train.jsonl``, ``validation.jsonl``,
``test.jsonl``). Dialogue and generic document datasets share the same model;
a plain document is a single-speaker meeting.

Also provides a deterministic synthetic corpus generator in which each query's
reference summary is built from a known planted utterance span, so extractor
and summarizer behavior can be checked against ground truth at desk scale.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .rouge import base_tokens

SPLIT_NAMES = ("train", "validation", "test")


class CorpusError(ValueError):
    """Raised on schema violations, dangling references, or bad spans."""


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    text: str


@dataclass(frozen=True)
class Meeting:
    meeting_id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        if not self.utterances:
            raise CorpusError(f"meeting {self.meeting_id!r} has no utterances")
        for i, utt in enumerate(self.utterances):
            if utt.index != i:
                raise CorpusError(
                    f"meeting {self.meeting_id!r}: utterance index {utt.index} at position {i}"
                )


@dataclass(frozen=True)
class QueryInstance:
    query_id: str
    meeting_id: str
    query: str
    reference_summary: str
    gold_spans: tuple[tuple[int, int], ...] = ()
    metadata: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        for start, end in self.gold_spans:
            if start >= end:
                raise CorpusError(
                    f"instance {self.query_id!r}: gold span [{start}, {end}) is empty"
                )

    def gold_indices(self) -> set[int]:
        """Utterance indices covered by any gold span."""
        out: set[int] = set()
        for start, end in self.gold_spans:
            out.update(range(start, end))
        return out


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    instances: tuple[QueryInstance, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for inst in self.instances:
            if inst.query_id in seen:
                raise CorpusError(f"split {self.name!r}: duplicate query_id {inst.query_id!r}")
            seen.add(inst.query_id)


@dataclass(frozen=True)
class Corpus:
    meetings: Mapping[str, Meeting]
    splits: Mapping[str, DatasetSplit]

    def __post_init__(self) -> None:
        for split in self.splits.values():
            for inst in split.instances:
                meeting = self.meetings.get(inst.meeting_id)
                if meeting is None:
                    raise CorpusError(
                        f"instance {inst.query_id!r} references unknown meeting "
                        f"{inst.meeting_id!r}"
                    )
                n = len(meeting.utterances)
                for start, end in inst.gold_spans:
                    if start < 0 or end > n:
                        raise CorpusError(
                            f"instance {inst.query_id!r}: gold span [{start}, {end}) outside "
                            f"utterance range [0, {n})"
                        )

    def split(self, name: str) -> DatasetSplit:
        if name not in self.splits:
            raise CorpusError(f"no split named {name!r}")
        return self.splits[name]

    def meeting(self, meeting_id: str) -> Meeting:
        if meeting_id not in self.meetings:
            raise CorpusError(f"no meeting named {meeting_id!r}")
        return self.meetings[meeting_id]

    def all_texts(self, split_name: str = "train") -> list[str]:
        """Texts for vocabulary construction: utterances, queries, summaries."""
        texts: list[str] = []
        split = self.split(split_name)
        meeting_ids = {inst.meeting_id for inst in split.instances}
        for mid in sorted(meeting_ids):
            for utt in self.meetings[mid].utterances:
                texts.append(f"{utt.speaker}: {utt.text}")
        for inst in split.instances:
            texts.append(inst.query)
            texts.append(inst.reference_summary)
        return texts


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------


def _load_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path.name}:{lineno}: expected an object")
            yield lineno, obj


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise CorpusError(f"{where}: missing required field {key!r}")
    return obj[key]


def load_dataset(directory: str | Path) -> Corpus:
    """Load a corpus from ``meetings.jsonl`` plus per-split files.

    Raises CorpusError with file and line number on any schema violation, and
    on referential-integrity failures (dangling meeting ids, bad gold spans).
    """
    directory = Path(directory)
    meetings_path = directory / "meetings.jsonl"
    if not meetings_path.exists():
        raise CorpusError(f"missing meetings file: {meetings_path}")

    meetings: dict[str, Meeting] = {}
    for lineno, obj in _load_jsonl(meetings_path):
        where = f"meetings.jsonl:{lineno}"
        meeting_id = str(_require(obj, "meeting_id", where))
        if meeting_id in meetings:
            raise CorpusError(f"{where}: duplicate meeting_id {meeting_id!r}")
        raw_utts = _require(obj, "utterances", where)
        if not isinstance(raw_utts, list) or not raw_utts:
            raise CorpusError(f"{where}: utterances must be a non-empty list")
        utts = []
        for i, u in enumerate(raw_utts):
            text = str(_require(u, "text", where))
            if not base_tokens(text):
                raise CorpusError(f"{where}: utterance {i} is empty after normalization")
            utts.append(Utterance(index=i, speaker=str(u.get("speaker", "")), text=text))
        meetings[meeting_id] = Meeting(meeting_id=meeting_id, utterances=tuple(utts))

    splits: dict[str, DatasetSplit] = {}
    for name in SPLIT_NAMES:
        split_path = directory / f"{name}.jsonl"
        if not split_path.exists():
            continue
        instances = []
        for lineno, obj in _load_jsonl(split_path):
            where = f"{name}.jsonl:{lineno}"
            spans = tuple(
                (int(s), int(e)) for s, e in obj.get("gold_spans", [])
            )
            metadata = tuple(sorted((str(k), str(v)) for k, v in obj.get("metadata", {}).items()))
            instances.append(
                QueryInstance(
                    query_id=str(_require(obj, "query_id", where)),
                    meeting_id=str(_require(obj, "meeting_id", where)),
                    query=str(_require(obj, "query", where)),
                    reference_summary=str(_require(obj, "summary", where)),
                    gold_spans=spans,
                    metadata=metadata,
                )
            )
        splits[name] = DatasetSplit(name=name, instances=tuple(instances))

    if not splits:
        raise CorpusError(f"no split files found in {directory}")
    return Corpus(meetings=meetings, splits=splits)


def save_dataset(corpus: Corpus, directory: str | Path) -> list[Path]:
    """Write the corpus in the canonical JSONL layout; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    meetings_path = directory / "meetings.jsonl"
    with open(meetings_path, "w", encoding="utf-8") as fh:
        for mid in sorted(corpus.meetings):
            meeting = corpus.meetings[mid]
            obj = {
                "meeting_id": meeting.meeting_id,
                "utterances": [
                    {"speaker": u.speaker, "text": u.text} for u in meeting.utterances
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    written.append(meetings_path)

    for name, split in corpus.splits.items():
        split_path = directory / f"{name}.jsonl"
        with open(split_path, "w", encoding="utf-8") as fh:
            for inst in split.instances:
                obj = {
                    "query_id": inst.query_id,
                    "meeting_id": inst.meeting_id,
                    "query": inst.query,
                    "summary": inst.reference_summary,
                    "gold_spans": [[s, e] for s, e in inst.gold_spans],
                    "metadata": dict(inst.metadata),
                }
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
        written.append(split_path)
    return written


# ---------------------------------------------------------------------------
# Synthetic corpus with planted relevant spans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Size and shape parameters for the synthetic corpus generator."""

    n_meetings: int = 24
    utterances_per_meeting: int = 10
    queries_per_meeting: int = 2
    n_topics: int = 12
    words_per_topic: int = 6
    filler_vocab_size: int = 40
    utterance_words: int = 7
    summary_words: int = 5
    planted_utterances: int = 1
    hard_distractors: bool = True
    negated_query_fraction: float = 0.25
    train_fraction: float = 0.7
    validation_fraction: float = 0.15

    def __post_init__(self) -> None:
        for name in ("n_meetings", "utterances_per_meeting", "queries_per_meeting",
                     "n_topics", "words_per_topic", "filler_vocab_size",
                     "utterance_words", "summary_words", "planted_utterances"):
            if getattr(self, name) < 1:
                raise CorpusError(f"SynthSpec.{name} must be >= 1")
        per_query = self.planted_utterances + (1 if self.hard_distractors else 0)
        if self.queries_per_meeting * per_query > self.utterances_per_meeting:
            raise CorpusError("planted spans do not fit in a meeting")
        if self.queries_per_meeting > self.n_topics:
            raise CorpusError("need at least one distinct topic per query in a meeting")
        if not 0.0 <= self.negated_query_fraction <= 1.0:
            raise CorpusError("negated_query_fraction must be in [0, 1]")


_SPEAKERS = ("alice", "bob", "carol", "dave")

_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]


def _word_list(rng: random.Random, count: int) -> list[str]:
    """Deterministic list of distinct pronounceable nonsense words."""
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        w = "".join(rng.choice(_SYLLABLES) for _ in range(3))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def synth_corpus(seed: int, spec: SynthSpec = SynthSpec()) -> Corpus:
    """Generate a deterministic corpus with known-relevant planted spans.

    Each query instance gets a contiguous block of utterances written in its
    topic's private vocabulary; the reference summary is sampled from the words
    of exactly that block, and the query quotes a few of the block's words.
    With hard_distractors on, one extra utterance repeats the quoted words in
    filler context: it overlaps the query lexically but not the summary, so
    scorers must use joint context rather than bare word matching. All other
    utterances are pure filler, so planted passages strictly dominate every
    distractor under ROUGE relevance.
    """
    rng = random.Random(seed)
    all_words = _word_list(rng, spec.n_topics * spec.words_per_topic + spec.filler_vocab_size)
    topic_words = [
        all_words[t * spec.words_per_topic : (t + 1) * spec.words_per_topic]
        for t in range(spec.n_topics)
    ]
    filler_words = all_words[spec.n_topics * spec.words_per_topic :]

    meetings: dict[str, Meeting] = {}
    instances: list[QueryInstance] = []

    for m in range(spec.n_meetings):
        meeting_id = f"meet{m:03d}"
        n_utts = spec.utterances_per_meeting
        topics = rng.sample(range(spec.n_topics), spec.queries_per_meeting)

        reserved: list[tuple[int, int]] = []

        def take_block(length: int) -> tuple[int, int]:
            free = [
                p for p in range(0, n_utts - length + 1)
                if all(p + length <= s or p >= e for s, e in reserved)
            ]
            if not free:
                raise CorpusError(
                    "could not place planted spans; reduce queries_per_meeting "
                    "or planted_utterances"
                )
            start = rng.choice(free)
            reserved.append((start, start + length))
            return (start, start + length)

        blocks = [take_block(spec.planted_utterances) for _ in topics]
        distractor_slots = (
            [take_block(1) for _ in topics] if spec.hard_distractors else []
        )

        texts: list[str | None] = [None] * n_utts
        for topic, (start, end) in zip(topics, blocks):
            for i in range(start, end):
                words = [rng.choice(topic_words[topic]) for _ in range(spec.utterance_words)]
                texts[i] = " ".join(words)

        pools = []
        for start, end in blocks:
            pool: list[str] = []
            for i in range(start, end):
                pool.extend(texts[i].split())
            pools.append(pool)

        for q, (topic, (start, end)) in enumerate(zip(topics, blocks)):
            planted_word_pool = pools[q]
            distinct = sorted(set(planted_word_pool))
            hint = rng.sample(distinct, min(3, len(distinct)))
            # keep the summary free of the quoted words where possible, so a
            # distractor echoing the query earns a zero relevance target
            remaining = [w for w in planted_word_pool if w not in hint]
            source = remaining if remaining else planted_word_pool
            summary = " ".join(rng.choice(source) for _ in range(spec.summary_words))
            if spec.hard_distractors:
                slot = distractor_slots[q]
                fill = [
                    rng.choice(filler_words)
                    for _ in range(max(0, spec.utterance_words - len(hint)))
                ]
                decoy = hint + fill
                rng.shuffle(decoy)
                texts[slot[0]] = " ".join(decoy)
            query = f"what did the group decide about {' '.join(hint)}"
            others = [i for i in range(len(blocks)) if i != q]
            if others and rng.random() < spec.negated_query_fraction:
                # quote words from another planted block behind a negation, a
                # case where bag-of-words query representations mislead
                other_pool = sorted(set(pools[rng.choice(others)]))
                negated = rng.sample(other_pool, min(2, len(other_pool)))
                query = f"{query} not {' '.join(negated)}"
            instances.append(
                QueryInstance(
                    query_id=f"{meeting_id}-q{q}",
                    meeting_id=meeting_id,
                    query=query,
                    reference_summary=summary,
                    gold_spans=((start, end),),
                )
            )

        for i in range(n_utts):
            if texts[i] is None:
                words = [rng.choice(filler_words) for _ in range(spec.utterance_words)]
                texts[i] = " ".join(words)

        utts = tuple(
            Utterance(index=i, speaker=_SPEAKERS[i % len(_SPEAKERS)], text=texts[i])
            for i in range(n_utts)
        )
        meetings[meeting_id] = Meeting(meeting_id=meeting_id, utterances=utts)

    # split by meeting so validation/test instances come from unseen meetings
    n_train = max(1, round(spec.n_meetings * spec.train_fraction))
    n_val = max(1, round(spec.n_meetings * spec.validation_fraction))
    n_train = min(n_train, spec.n_meetings - 1) if spec.n_meetings > 1 else spec.n_meetings
    train_ids = {f"meet{m:03d}" for m in range(n_train)}
    val_ids = {f"meet{m:03d}" for m in range(n_train, min(n_train + n_val, spec.n_meetings))}

    def bucket(inst: QueryInstance) -> str:
        if inst.meeting_id in train_ids:
            return "train"
        if inst.meeting_id in val_ids:
            return "validation"
        return "test"

    splits = {}
    for name in SPLIT_NAMES:
        splits[name] = DatasetSplit(
            name=name,
            instances=tuple(i for i in instances if bucket(i) == name),
        )
    return Corpus(meetings=meetings, splits=splits)


# ---------------------------------------------------------------------------
# QMSum adapter
# ---------------------------------------------------------------------------


def load_qmsum(directory: str | Path) -> Corpus:
    """Best-effort adapter from the released QMSum JSONL layout.

    Expects ``train.jsonl`` / ``val.jsonl`` / ``test.jsonl``, one meeting per
    line with ``meeting_transcripts`` and general/specific query lists.
    Specific-query ``relevant_text_span`` entries (inclusive string indices)
    become half-open gold spans. Utterances that normalize to nothing are
    dropped, with span indices remapped; conversion is not guaranteed
    bit-exact against other tools.
    """
    directory = Path(directory)
    meetings: dict[str, Meeting] = {}
    splits: dict[str, DatasetSplit] = {}
    name_map = {"train": "train", "val": "validation", "test": "test"}

    for fname, split_name in name_map.items():
        path = directory / f"{fname}.jsonl"
        if not path.exists():
            continue
        instances = []
        for lineno, obj in _load_jsonl(path):
            meeting_id = f"{fname}-{lineno:04d}"
            transcripts = obj.get("meeting_transcripts", [])
            utts = []
            index_map: dict[int, int] = {}
            for orig_idx, turn in enumerate(transcripts):
                text = str(turn.get("content", ""))
                if not base_tokens(text):
                    continue
                index_map[orig_idx] = len(utts)
                utts.append(
                    Utterance(index=len(utts), speaker=str(turn.get("speaker", "")), text=text)
                )
            if not utts:
                continue
            meetings[meeting_id] = Meeting(meeting_id=meeting_id, utterances=tuple(utts))

            def remap(orig_start: int, orig_end_incl: int) -> tuple[int, int] | None:
                kept = [index_map[i] for i in range(orig_start, orig_end_incl + 1) if i in index_map]
                if not kept:
                    return None
                return (min(kept), max(kept) + 1)

            q_counter = 0
            for kind, key in (("general", "general_query_list"), ("specific", "specific_query_list")):
                for entry in obj.get(key, []):
                    spans = []
                    for pair in entry.get("relevant_text_span", []) or []:
                        mapped = remap(int(pair[0]), int(pair[1]))
                        if mapped is not None:
                            spans.append(mapped)
                    instances.append(
                        QueryInstance(
                            query_id=f"{meeting_id}-q{q_counter}",
                            meeting_id=meeting_id,
                            query=str(entry.get("query", "")),
                            reference_summary=str(entry.get("answer", "")),
                            gold_spans=tuple(spans),
                            metadata=(("query_type", kind),),
                        )
                    )
                    q_counter += 1
        splits[split_name] = DatasetSplit(name=split_name, instances=tuple(instances))

    if not splits:
        raise CorpusError(f"no QMSum split files found in {directory}")
    return Corpus(meetings=meetings, splits=splits)
