"""Timed transcripts, pinyin romanization and per-frame letter encodings."""
import math
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_scalar
from .audio import STRIDE_S, FeatureSequence
from .exceptions import MalformedHeader, UnknownCharacter

TEXT_FEATURE_DIM = 26
_PINYIN_RE = re.compile(r"^[a-z]+$")


@dataclass(frozen=True)
class TimedWord:
    word: str
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"word {self.word!r}: start {self.start} must precede end {self.end}")


@dataclass
class TimedTranscript:
    words: list = field(default_factory=list)
    duration: float = 0.0

    def __post_init__(self):
        self.words = sorted(self.words, key=lambda w: w.start)
        for a, b in zip(self.words, self.words[1:]):
            if b.start < a.end:
                raise ValueError(f"words {a.word!r} and {b.word!r} overlap")
        if self.words and self.words[-1].end > self.duration + 1e-9:
            raise ValueError(f"last word ends at {self.words[-1].end}, after duration {self.duration}")

    def __len__(self):
        return len(self.words)


def parse_transcript(text):
    """Parse ``word<TAB>start_ms<TAB>end_ms`` lines into TimedWords (duration left to caller)."""
    words = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 3:
            raise MalformedHeader(f"line {lineno}: expected word, start_ms, end_ms")
        word, start, end = parts[0].strip(), float(parts[1]), float(parts[2])
        words.append(TimedWord(word, start / 1000.0, end / 1000.0))
    return words


def read_transcript(path, duration=None):
    """Load a transcript file; duration defaults to the last word's end."""
    with open(path, encoding="utf-8") as fh:
        words = parse_transcript(fh.read())
    if duration is None:
        duration = max((w.end for w in words), default=0.0)
    return TimedTranscript(words, duration)


def write_transcript(transcript, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in transcript.words:
            fh.write(f"{w.word}\t{w.start * 1000:.12g}\t{w.end * 1000:.12g}\n")


def strip_tones(syllable):
    """Lowercase a pinyin syllable and drop tone marks and tone digits."""
    decomposed = unicodedata.normalize("NFD", syllable.strip().lower())
    return "".join(c for c in decomposed if "a" <= c <= "z")


class PinyinTable(dict):
    """Mapping from a single character to its toneless pinyin spelling."""

    def __setitem__(self, char, pinyin):
        if len(char) != 1:
            raise ValueError(f"table keys must be single characters, got {char!r}")
        if not _PINYIN_RE.match(pinyin):
            raise ValueError(f"pinyin for {char!r} must match [a-z]+, got {pinyin!r}")
        super().__setitem__(char, pinyin)

    @classmethod
    def from_lines(cls, lines):
        table = cls()
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            char, pinyin = line.split("\t")[:2]
            table[char] = strip_tones(pinyin)
        return table

    @classmethod
    def load(cls, path=None):
        """Read a ``char<TAB>pinyin`` file; without a path the bundled table is used."""
        if path is None:
            text = resources.files("speech2pose.data").joinpath("pinyin.tsv").read_text("utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_lines(text.splitlines())


def to_pinyin(text, table):
    """Romanize text: ASCII letters pass through lowercased, other ASCII is dropped,
    and every non-ASCII character is replaced by its pinyin."""
    out = []
    for ch in text:
        if ch.isascii():
            if ch.isalpha():
                out.append(ch.lower())
        elif ch in table:
            out.append(table[ch])
        else:
            raise UnknownCharacter(ch)
    return "".join(out)


def letter_vector(word):
    """Normalized a-z letter frequencies of ``word``; all-zero if it has no letters."""
    vec = np.zeros(TEXT_FEATURE_DIM)
    letters = [ord(c) - ord("a") for c in word.lower() if "a" <= c <= "z"]
    for i in letters:
        vec[i] += 1.0
    if letters:
        vec /= len(letters)
    return vec


def encode_transcript(transcript, stride=STRIDE_S, table=None):
    """One 26-D frame per ``stride`` tick over ``[0, duration)``.

    A tick inside a word's ``[start, end)`` carries that word's letter vector; pauses are zero.
    Words containing non-ASCII characters are romanized through ``table`` first
    (the bundled table when none is given).
    """
    check_scalar(stride, "stride", min_val=0.0, include_min=False)
    eps = 1e-9
    n = max(0, math.ceil(transcript.duration / stride - eps))
    values = np.zeros((n, TEXT_FEATURE_DIM))
    for w in transcript.words:
        word = w.word
        if not word.isascii():
            if table is None:
                table = PinyinTable.load()
            word = to_pinyin(word, table)
        vec = letter_vector(word)
        first = max(0, math.ceil(w.start / stride - eps))
        stop = min(n, math.ceil(w.end / stride - eps))
        if first < stop:
            values[first:stop] = vec
    return FeatureSequence(values, stride)


class TranscriptEncoder(BaseEstimator, TransformerMixin):
    """Transform timed transcripts into ``(T, 26)`` letter-frequency arrays."""

    def __init__(self, stride=STRIDE_S, pinyin_table=None):
        self.stride = stride
        self.pinyin_table = pinyin_table

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [encode_transcript(t, self.stride, self.pinyin_table).values for t in X]
