"""Word-timestamp providers: a file-backed offline mock and uniform text timing."""
import os
from abc import ABC, abstractmethod

from ._validation import check_scalar
from .exceptions import MissingSidecar, TimestampBeyondAudio
from .text import TimedTranscript, TimedWord, parse_transcript

SIDECAR_SUFFIX = ".txt"


def sidecar_path_for(audio_path):
    """``speech.wav`` -> ``speech.txt``."""
    return os.path.splitext(audio_path)[0] + SIDECAR_SUFFIX


def mock_transcribe(audio, sidecar_path):
    """Read the word timings for ``audio`` from a transcript file next to it."""
    if not os.path.isfile(sidecar_path):
        raise MissingSidecar(f"no transcript at {sidecar_path}")
    with open(sidecar_path, encoding="utf-8") as fh:
        words = parse_transcript(fh.read())
    duration = audio.duration
    late = [w for w in words if w.end > duration + 1e-9]
    if late:
        raise TimestampBeyondAudio(f"word {late[0].word!r} ends at {late[0].end} s, audio lasts {duration} s")
    return TimedTranscript(words, duration)


def uniform_timing(text, rate_wps):
    """Back-to-back words of ``1/rate_wps`` seconds each, starting at 0."""
    check_scalar(rate_wps, "rate_wps", min_val=0.0, include_min=False)
    step = 1.0 / rate_wps
    words = [TimedWord(w, i * step, (i + 1) * step) for i, w in enumerate(text.split())]
    return TimedTranscript(words, len(words) * step)


class TranscriptionProvider(ABC):
    @abstractmethod
    def transcribe(self, audio):
        """Return a TimedTranscript for an AudioBuffer."""

    @abstractmethod
    def synthesize_timing(self, text, rate_wps):
        """Return a TimedTranscript for text spoken at ``rate_wps`` words per second."""


class MockProvider(TranscriptionProvider):
    """Offline provider that reads timings from a known sidecar file."""

    def __init__(self, sidecar_path):
        self.sidecar_path = sidecar_path

    def transcribe(self, audio):
        return mock_transcribe(audio, self.sidecar_path)

    def synthesize_timing(self, text, rate_wps):
        return uniform_timing(text, rate_wps)
