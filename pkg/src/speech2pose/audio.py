"""MFCC-with-deltas audio features (28-D at a 10 ms stride) and audio utilities."""
import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_array, check_scalar
from .exceptions import MalformedHeader, SilentInput, TooShort

WINDOW_S = 0.025
STRIDE_S = 0.010
N_MEL = 40
N_CEPS = 13
AUDIO_FEATURE_DIM = 2 * (N_CEPS + 1)
LOG_FLOOR = 1e-10
DEFAULT_TARGET_RMS = 0.1


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = check_array(self.samples, "samples", ndim=1)
        check_scalar(self.sample_rate, "sample_rate", min_val=1, target_type=int)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureSequence:
    """Feature frames ``values[k]`` stamped at ``k * stride`` seconds."""

    values: np.ndarray
    stride: float = STRIDE_S

    def __post_init__(self):
        self.values = check_array(self.values, "values", ndim=2)
        check_scalar(self.stride, "stride", min_val=0.0, include_min=False)

    def __len__(self):
        return len(self.values)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def timestamps(self):
        return np.arange(len(self.values)) * self.stride


def read_wav(path):
    """Read a mono 16-bit PCM WAV file into samples in [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise MalformedHeader(f"{path}: expected mono 16-bit PCM")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(audio, path):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())


def rms(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def rms_normalize(audio, target_rms=DEFAULT_TARGET_RMS):
    """Scale audio so that its RMS equals ``target_rms``."""
    check_scalar(target_rms, "target_rms", min_val=0.0, include_min=False)
    if len(audio) == 0:
        raise ValueError("audio is empty")
    level = rms(audio.samples)
    if level < 1e-12:
        raise SilentInput(f"input RMS {level:.3g} is too small to normalize")
    return AudioBuffer(audio.samples * (target_rms / level), audio.sample_rate)


def add_white_noise(audio, amplitude, seed=0):
    """Add i.i.d. uniform noise in ``[-amplitude, amplitude]`` from a seeded generator."""
    check_scalar(amplitude, "amplitude", min_val=0.0)
    if amplitude == 0:
        return AudioBuffer(audio.samples.copy(), audio.sample_rate)
    noise = np.random.default_rng(seed).uniform(-1.0, 1.0, len(audio))
    return AudioBuffer(audio.samples + amplitude * noise, audio.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(sample_rate, n_filters=N_MEL):
    """Corner frequencies (Hz) of the triangular filters; filter m spans edges[m:m+3]."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))


def mel_filterbank(n_fft, sample_rate, n_filters=N_MEL):
    """Triangular mel filter weights, shape ``(n_filters, n_fft // 2 + 1)``."""
    edges = mel_band_edges(sample_rate, n_filters)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_geometry(sample_rate):
    """Window and hop length in samples."""
    return int(round(WINDOW_S * sample_rate)), int(round(STRIDE_S * sample_rate))


def frame_signal(audio):
    """Slice audio into overlapping Hamming-windowed frames, shape ``(n_frames, win)``."""
    win, hop = frame_geometry(audio.sample_rate)
    n = len(audio)
    if n < win:
        raise TooShort(f"audio has {n} samples, one window needs {win}")
    n_frames = (n - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return audio.samples[idx] * np.hamming(win)


def filterbank_energies(audio):
    """Mel filter-bank energies of every window, shape ``(n_frames, 40)``.

    Energy is the filter-weighted sum of the power spectrum ``|X_k|^2 / win``.
    """
    if audio.sample_rate < 8000:
        raise ValueError(f"sample_rate must be >= 8000 Hz, got {audio.sample_rate}")
    frames = frame_signal(audio)
    win = frames.shape[1]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2 / win
    return power @ mel_filterbank(win, audio.sample_rate).T


def mfcc_features(audio):
    """28-D features: 13 cepstra + log volume, then their first differences.

    Frame 0 has zero deltas.
    """
    log_mel = np.log(np.maximum(filterbank_energies(audio), LOG_FLOOR))
    ceps = dct(log_mel, type=2, norm="ortho", axis=1)[:, 1:N_CEPS + 1]
    frames = frame_signal(audio)
    log_vol = np.log(np.maximum(np.mean(frames * frames, axis=1), LOG_FLOOR))
    static = np.column_stack([ceps, log_vol])
    deltas = np.zeros_like(static)
    deltas[1:] = static[1:] - static[:-1]
    _, hop = frame_geometry(audio.sample_rate)
    return FeatureSequence(np.hstack([static, deltas]), hop / audio.sample_rate)


def write_features(features, path):
    """Feature file: header ``FEAT 1 <stride> <count> <dim>`` then one frame per line."""
    lines = [f"FEAT 1 {float(features.stride)!r} {len(features)} {features.dim}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in features.values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_features(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[:2] != ["FEAT", "1"]:
            raise MalformedHeader(f"{path}: not a FEAT 1 file")
        try:
            stride, count, dim = float(header[2]), int(header[3]), int(header[4])
        except ValueError as exc:
            raise MalformedHeader(f"{path}: bad header fields") from exc
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != count or any(len(r) != dim for r in rows):
        raise MalformedHeader(f"{path}: expected {count} rows of {dim} values")
    return FeatureSequence(np.array(rows, dtype=np.float64).reshape(count, dim), stride)


class MFCCExtractor(BaseEstimator, TransformerMixin):
    """Transform audio buffers into 28-D feature arrays.

    Parameters
    ----------
    target_rms : float
        Level every clip is normalized to before analysis.
    noise_amplitude : float
        Amplitude of uniform white noise added after normalization (0 disables).
    seed : int
        Noise generator seed.
    """

    def __init__(self, target_rms=DEFAULT_TARGET_RMS, noise_amplitude=0.0, seed=0):
        self.target_rms = target_rms
        self.noise_amplitude = noise_amplitude
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def extract(self, audio):
        audio = rms_normalize(audio, self.target_rms)
        if self.noise_amplitude > 0:
            audio = add_white_noise(audio, self.noise_amplitude, self.seed)
        return mfcc_features(audio)

    def transform(self, X):
        return [self.extract(a).values for a in X]
