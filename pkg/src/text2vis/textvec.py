"""Text vectorization: tokenizing, POS tagging, pattern n-grams and binary bag-of-words.

Two vocabulary modes are supported: plain unigrams, and unigrams plus
n-grams whose part-of-speech tag sequence matches one of a fixed set of
patterns (e.g. ADJ-NOUN).  Captions are encoded as sparse binary vectors
over the vocabulary.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

MODE_UNIGRAM = "unigram"
MODE_NGRAM = "ngram"
MODES = (MODE_UNIGRAM, MODE_NGRAM)

POS_TAGS = frozenset({"NOUN", "VERB", "ADJ", "PRT", "NUM", "OTHER"})

# Contiguous tag sequences that qualify a token window as an n-gram term.
NGRAM_PATTERNS: tuple[tuple[str, ...], ...] = (
    ("NOUN", "VERB"),
    ("NOUN", "VERB", "VERB"),
    ("ADJ", "NOUN"),
    ("VERB", "PRT"),
    ("VERB", "VERB"),
    ("NUM", "NOUN"),
    ("NOUN", "NOUN"),
)

NGRAM_JOINER = "_"

DEFAULT_MIN_CAPTION_FREQ_UNIGRAM = 5
DEFAULT_MIN_CAPTION_FREQ_NGRAM = 10

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class Token:
    """A lowercase word, optionally carrying a coarse POS tag."""

    surface: str
    pos: str | None = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if self.pos is not None and self.pos not in POS_TAGS:
            raise ValueError(f"unknown POS tag {self.pos!r}")


@dataclass(frozen=True)
class BowVector:
    """Sparse binary vector: the sorted indices of active vocabulary terms."""

    dim: int
    on_indices: tuple[int, ...]

    def __post_init__(self):
        if any(i < 0 or i >= self.dim for i in self.on_indices):
            raise ValueError("bag-of-words index out of range")
        if list(self.on_indices) != sorted(set(self.on_indices)):
            raise ValueError("on_indices must be sorted and unique")

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=dtype)
        if self.on_indices:
            dense[list(self.on_indices)] = 1
        return dense


def tokenize(text: str) -> list[Token]:
    """Lowercase, treat every non-alphanumeric character as a separator, split."""
    parts = _TOKEN_SPLIT.split(text.lower())
    return [Token(p) for p in parts if p]


def load_lexicon(path) -> dict[str, str]:
    """Read a ``word<TAB>TAG`` lexicon file into a dict."""
    lexicon: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                word, tag = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>TAG', got {line!r}")
            if tag not in POS_TAGS:
                raise ValueError(f"{path}:{lineno}: unknown tag {tag!r}")
            lexicon[word] = tag
    return lexicon


@lru_cache(maxsize=1)
def default_lexicon() -> dict[str, str]:
    """The bundled most-frequent-tag lexicon."""
    with resources.as_file(resources.files("text2vis") / "lexicon.tsv") as path:
        return load_lexicon(path)


def pos_tag(tokens: Sequence[Token], lexicon: dict[str, str] | None = None) -> list[Token]:
    """Assign each token a coarse tag by lexicon lookup; unknown words get OTHER.

    Tokens made of digits only are tagged NUM.
    """
    if lexicon is None:
        lexicon = default_lexicon()
    tagged = []
    for tok in tokens:
        if tok.surface.isdigit():
            tag = "NUM"
        else:
            tag = lexicon.get(tok.surface, "OTHER")
        tagged.append(Token(tok.surface, tag))
    return tagged


def extract_ngrams(tagged: Sequence[Token]) -> list[str]:
    """All (possibly overlapping) token windows matching one of NGRAM_PATTERNS.

    Each match is emitted as the surfaces joined with underscores, in scan order.
    """
    tags = [t.pos for t in tagged]
    if any(tag is None for tag in tags):
        raise ValueError("extract_ngrams requires POS-tagged tokens")
    out = []
    for start in range(len(tagged)):
        for pattern in NGRAM_PATTERNS:
            end = start + len(pattern)
            if end <= len(tagged) and tuple(tags[start:end]) == pattern:
                out.append(NGRAM_JOINER.join(t.surface for t in tagged[start:end]))
    return out


def caption_terms(tokens: Sequence[Token], mode: str,
                  lexicon: dict[str, str] | None = None) -> list[str]:
    """The terms a caption contributes: unigrams, plus pattern n-grams in ngram mode."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    terms = [t.surface for t in tokens]
    if mode == MODE_NGRAM:
        if any(t.pos is None for t in tokens):
            tokens = pos_tag(tokens, lexicon)
        terms.extend(extract_ngrams(tokens))
    return terms


class Vocabulary:
    """Immutable term -> index map over unigrams and (optionally) pattern n-grams."""

    def __init__(self, terms: Sequence[str], mode: str,
                 min_caption_freq_unigram: int | None = None,
                 min_caption_freq_ngram: int | None = None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.terms = list(terms)
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")
        if not self.terms:
            raise ValueError("vocabulary is empty")
        self.index = {term: i for i, term in enumerate(self.terms)}
        self.mode = mode
        self.min_caption_freq_unigram = min_caption_freq_unigram
        self.min_caption_freq_ngram = min_caption_freq_ngram

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def encode_terms(self, terms: Iterable[str]) -> BowVector:
        """Binary encoding of the given terms; out-of-vocabulary terms are dropped."""
        hits = {self.index[t] for t in terms if t in self.index}
        return BowVector(dim=len(self.terms), on_indices=tuple(sorted(hits)))

    def encode_text(self, text: str) -> BowVector:
        """Tokenize a raw caption and encode it under this vocabulary's mode."""
        return self.encode_terms(caption_terms(tokenize(text), self.mode))

    def save(self, path) -> None:
        """One term per line; the line number is the term's index."""
        with open(path, "w", encoding="utf-8") as fh:
            for term in self.terms:
                fh.write(term + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        """Load a saved vocabulary; the mode is inferred from the terms."""
        with open(path, encoding="utf-8") as fh:
            terms = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        # The tokenizer strips underscores, so only joined n-grams contain them.
        mode = MODE_NGRAM if any(NGRAM_JOINER in t for t in terms) else MODE_UNIGRAM
        return cls(terms, mode)


def build_vocabulary(corpus: Iterable[Sequence[Token]], mode: str,
                     min_caption_freq_unigram: int = DEFAULT_MIN_CAPTION_FREQ_UNIGRAM,
                     min_caption_freq_ngram: int = DEFAULT_MIN_CAPTION_FREQ_NGRAM,
                     lexicon: dict[str, str] | None = None) -> Vocabulary:
    """Build a vocabulary from tokenized captions by caption-frequency thresholding.

    A term's caption frequency is the number of distinct captions containing it.
    In unigram mode, unigrams with frequency >= min_caption_freq_unigram are
    kept.  In ngram mode, unigrams and pattern n-grams alike are kept at
    frequency >= min_caption_freq_ngram.  Terms are ordered lexicographically,
    so the construction is deterministic.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    caption_freq: Counter[str] = Counter()
    n_captions = 0
    for tokens in corpus:
        n_captions += 1
        caption_freq.update(set(caption_terms(tokens, mode, lexicon)))
    if n_captions == 0:
        raise ValueError("corpus is empty")

    threshold = min_caption_freq_unigram if mode == MODE_UNIGRAM else min_caption_freq_ngram
    kept = sorted(t for t, c in caption_freq.items() if c >= threshold)
    if not kept:
        raise ValueError(
            f"no term appears in at least {threshold} captions; vocabulary is empty")
    return Vocabulary(kept, mode,
                      min_caption_freq_unigram=min_caption_freq_unigram,
                      min_caption_freq_ngram=min_caption_freq_ngram)


def encode_bow(terms: Iterable[str], vocab: Vocabulary) -> BowVector:
    """Function form of Vocabulary.encode_terms."""
    return vocab.encode_terms(terms)
