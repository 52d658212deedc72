"""Deterministic word-level vocabulary with reserved special tokens.

Tokenization is whitespace splitting with special-token forms (``<sep>`` etc.)
passed through verbatim and everything else reduced to normalized word tokens.
Built from a corpus by frequency with a lexicographic tie-break, so the same
texts always produce the same id assignment.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

from .rouge import base_tokens

PAD, BOS, EOS, SEP, MASK, UNK, QRY, PSG = range(8)

SPECIAL_FORMS = ("<pad>", "<s>", "</s>", "<sep>", "<mask>", "<unk>", "<q>", "<p>")


class VocabError(ValueError):
    """Raised on malformed vocabularies or ids."""


def word_tokenize(text: str) -> list[str]:
    """Split text into word tokens, preserving special-token forms."""
    out: list[str] = []
    for piece in text.split():
        if piece in SPECIAL_FORMS:
            out.append(piece)
        else:
            out.extend(base_tokens(piece))
    return out


class Vocabulary:
    """Immutable token/id mapping; specials occupy the first eight ids."""

    def __init__(self, words: Sequence[str]):
        tokens = list(SPECIAL_FORMS) + list(words)
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r}")
            index[tok] = i
        self.tokens = tuple(tokens)
        self._index = index

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @classmethod
    def from_texts(
        cls,
        texts: Iterable[str],
        max_size: int | None = None,
        min_count: int = 1,
    ) -> "Vocabulary":
        """Build from raw texts by descending frequency, ties lexicographic."""
        counts: Counter = Counter()
        for text in texts:
            counts.update(t for t in word_tokenize(text) if t not in SPECIAL_FORMS)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        words = [w for w, c in ranked if c >= min_count]
        if max_size is not None:
            words = words[: max(0, max_size - len(SPECIAL_FORMS))]
        return cls(words)

    def token_to_id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, text_or_tokens: str | Sequence[str]) -> list[int]:
        """Map text (or pre-split word tokens) to ids, OOV to the unk id."""
        if isinstance(text_or_tokens, str):
            tokens = word_tokenize(text_or_tokens)
        else:
            tokens = list(text_or_tokens)
        return [self._index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        """Render ids back to a space-joined string."""
        words = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise VocabError(f"id {i} outside vocabulary of size {len(self.tokens)}")
            if skip_special and i < len(SPECIAL_FORMS):
                continue
            words.append(self.tokens[i])
        return " ".join(words)
