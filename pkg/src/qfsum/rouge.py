"""Self-contained ROUGE-1 / ROUGE-2 / ROUGE-L scoring.

These scores serve three roles in the toolkit: regression targets for
passage-relevance models, the validation statistic for checkpoint selection,
and the final summary-quality metric. Everything is computed from normalized
word tokens (lowercased, punctuation stripped, optional Porter stemming and
stopword removal), so results are deterministic for a fixed config.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

VARIANTS = ("1", "2", "L")

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)

# Compact English stopword list, used by optional stopword removal here and by
# the content-word query masking transform.
STOPWORDS = frozenset(
    """
    a about above after again all am an and any are as at be because been
    before being below between both but by could did do does doing down
    during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more
    most my myself no nor not now of off on once only or other our ours
    ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too
    under until up very was we were what when where which while who whom why
    will with you your yours yourself yourselves
    """.split()
)


class RougeError(ValueError):
    """Raised for invalid ROUGE configuration or arguments."""


@dataclass(frozen=True)
class RougeScore:
    """Precision / recall / F1 triple, all in [0, 1]."""

    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "RougeScore":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(precision, recall, f1)

    @classmethod
    def zero(cls) -> "RougeScore":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RougeConfig:
    """Normalization and variant selection for ROUGE computations.

    Stemming defaults on and stopword removal defaults off, matching common
    reference defaults; both are configurable.
    """

    use_stemming: bool = True
    remove_stopwords: bool = False
    variants: tuple[str, ...] = VARIANTS

    def __post_init__(self) -> None:
        if not self.variants:
            raise RougeError("at least one ROUGE variant must be enabled")
        for v in self.variants:
            if v not in VARIANTS:
                raise RougeError(f"unknown ROUGE variant {v!r}")


DEFAULT_CONFIG = RougeConfig()

# ---------------------------------------------------------------------------
# Porter stemmer (original 1980 algorithm).
# ---------------------------------------------------------------------------

_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of VC sequences in the stem's [C](VC)^m[V] form."""
    m = 0
    in_vowel_run = False
    for i in range(len(stem)):
        if _is_consonant(stem, i):
            if in_vowel_run:
                m += 1
            in_vowel_run = False
        else:
            in_vowel_run = True
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _apply_rule_list(word: str, rules: Sequence[tuple[str, str, int]]) -> str:
    """Apply the longest-matching suffix rule whose measure condition holds.

    Each rule is (suffix, replacement, min_measure); only the longest matching
    suffix is considered, per the algorithm's one-rule-per-step semantics.
    """
    for suffix, repl, min_m in sorted(rules, key=lambda r: -len(r[0])):
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if _measure(stem) > min_m:
                return stem + repl
            return word
    return word


_STEP2_RULES = [
    ("ational", "ate", 0), ("tional", "tion", 0), ("enci", "ence", 0),
    ("anci", "ance", 0), ("izer", "ize", 0), ("abli", "able", 0),
    ("alli", "al", 0), ("entli", "ent", 0), ("eli", "e", 0),
    ("ousli", "ous", 0), ("ization", "ize", 0), ("ation", "ate", 0),
    ("ator", "ate", 0), ("alism", "al", 0), ("iveness", "ive", 0),
    ("fulness", "ful", 0), ("ousness", "ous", 0), ("aliti", "al", 0),
    ("iviti", "ive", 0), ("biliti", "ble", 0),
]

_STEP3_RULES = [
    ("icate", "ic", 0), ("ative", "", 0), ("alize", "al", 0),
    ("iciti", "ic", 0), ("ical", "ic", 0), ("ful", "", 0), ("ness", "", 0),
]

_STEP4_SUFFIXES = [
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
]


def porter_stem(word: str) -> str:
    """Stem a lowercase word with the original Porter algorithm.

    Words of length <= 2 are returned unchanged, as in the reference
    implementation.
    """
    if len(word) <= 2:
        return word

    # Step 1a
    for suffix, repl in (("sses", "ss"), ("ies", "i"), ("ss", "ss"), ("s", "")):
        if word.endswith(suffix):
            word = word[: len(word) - len(suffix)] + repl
            break

    # Step 1b
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    else:
        stripped = None
        if word.endswith("ed") and _has_vowel(word[:-2]):
            stripped = word[:-2]
        elif word.endswith("ing") and _has_vowel(word[:-3]):
            stripped = word[:-3]
        if stripped is not None:
            word = stripped
            if word.endswith(("at", "bl", "iz")):
                word += "e"
            elif _ends_double_consonant(word) and word[-1] not in "lsz":
                word = word[:-1]
            elif _measure(word) == 1 and _ends_cvc(word):
                word += "e"

    # Step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    word = _apply_rule_list(word, _STEP2_RULES)
    word = _apply_rule_list(word, _STEP3_RULES)

    # Step 4
    for suffix in sorted(_STEP4_SUFFIXES, key=len, reverse=True):
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if _measure(stem) > 1:
                if suffix != "ion" or (stem and stem[-1] in "st"):
                    word = stem
            break

    # Step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            word = stem

    # Step 5b
    if _measure(word) > 1 and _ends_double_consonant(word) and word[-1] == "l":
        word = word[:-1]

    return word


# ---------------------------------------------------------------------------
# Tokenization / normalization
# ---------------------------------------------------------------------------


def base_tokens(text: str) -> list[str]:
    """Lowercased, punctuation-stripped word tokens. Total function."""
    return _WORD_RE.findall(text.lower())


def prepare_tokens(tokens: Iterable[str], config: RougeConfig = DEFAULT_CONFIG) -> list[str]:
    """Apply stopword removal and stemming to already-normalized tokens."""
    out = list(tokens)
    if config.remove_stopwords:
        out = [t for t in out if t not in STOPWORDS]
    if config.use_stemming:
        out = [porter_stem(t) for t in out]
    return out


def normalize(text: str, config: RougeConfig = DEFAULT_CONFIG) -> list[str]:
    """Full normalization pipeline from raw text to scoring tokens."""
    return prepare_tokens(base_tokens(text), config)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped (multiset) n-gram overlap between token sequences.

    Returns all-zero when either side has no n-grams.
    """
    if n < 1:
        raise RougeError(f"n must be >= 1, got {n}")
    cand = _ngram_counts(candidate, n)
    ref = _ngram_counts(reference, n)
    total_cand = sum(cand.values())
    total_ref = sum(ref.values())
    if total_cand == 0 or total_ref == 0:
        return RougeScore.zero()
    matches = sum((cand & ref).values())
    return RougeScore.from_pr(matches / total_cand, matches / total_ref)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """Sentence-level ROUGE-L from the LCS of the two token sequences."""
    if not candidate or not reference:
        return RougeScore.zero()
    ell = lcs_length(candidate, reference)
    return RougeScore.from_pr(ell / len(candidate), ell / len(reference))


def score(
    candidate_text: str,
    reference_text: str,
    config: RougeConfig = DEFAULT_CONFIG,
) -> dict[str, RougeScore]:
    """Score raw candidate text against raw reference text.

    Returns a mapping from enabled variant name ("1", "2", "L") to its score.
    """
    return score_tokens(base_tokens(candidate_text), base_tokens(reference_text), config)


def score_tokens(
    candidate: Sequence[str],
    reference: Sequence[str],
    config: RougeConfig = DEFAULT_CONFIG,
) -> dict[str, RougeScore]:
    """Score pre-normalized token sequences (stemming/stopwords applied here)."""
    cand = prepare_tokens(candidate, config)
    ref = prepare_tokens(reference, config)
    out: dict[str, RougeScore] = {}
    for variant in config.variants:
        if variant == "L":
            out[variant] = rouge_l(cand, ref)
        else:
            out[variant] = rouge_n(cand, ref, int(variant))
    return out


def mean_rouge(scores: Iterable[RougeScore]) -> float:
    """Arithmetic mean of F1 across variants; errors on an empty collection."""
    values = [s.f1 for s in scores]
    if not values:
        raise RougeError("mean_rouge requires at least one score")
    return sum(values) / len(values)


def relevance_score(
    candidate_text: str,
    reference_text: str,
    config: RougeConfig = DEFAULT_CONFIG,
) -> float:
    """Scalar relevance of a passage to a reference: mean F1 over variants."""
    return mean_rouge(score(candidate_text, reference_text, config).values())
