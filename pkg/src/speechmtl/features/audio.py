"""Waveform loading and acoustic feature extraction.

All audio is mono 16 kHz. Features are 80-dim log-mel filterbanks computed
with a 25 ms window and 10 ms hop, stacked with first- and second-order
derivatives into a T x 240 matrix, then normalized per utterance (CMVN).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
WIN_LENGTH = 400   # 25 ms
HOP_LENGTH = 160   # 10 ms
N_FFT = 512
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-10
FEAT_DIM = 3 * N_MELS


@dataclass
class Waveform:
    """Mono audio samples at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SpeechFeatures:
    """Normalized frame matrix: [mel(80) | delta(80) | delta-delta(80)].

    ``mean``/``scale`` hold the per-dimension CMVN statistics so the mel
    block can be de-normalized later for waveform reconstruction.
    """

    frames: np.ndarray
    normalized: bool = False
    mean: np.ndarray | None = field(default=None, repr=False)
    scale: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEAT_DIM:
            raise ValueError(f"expected (T, {FEAT_DIM}) frames, got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def denormalized(self) -> np.ndarray:
        if not self.normalized:
            return self.frames
        if self.mean is None or self.scale is None:
            raise ValueError("normalized features without stored statistics")
        return self.frames * self.scale + self.mean


def load_wav(path) -> Waveform:
    """Read a PCM WAV file as mono 16 kHz, resampling/downmixing if needed."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise ValueError(f"unreadable or unsupported WAV file {path!r}: {exc}") from exc
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    elif data.dtype.kind == "u":  # 8-bit unsigned PCM is offset binary
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != SAMPLE_RATE:
        g = math.gcd(SAMPLE_RATE, rate)
        data = resample_poly(data, SAMPLE_RATE // g, rate // g)
    return Waveform(data, SAMPLE_RATE)


def save_wav(path, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    wavfile.write(path, w.sample_rate, (clipped * 32767.0).astype(np.int16))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (fft_freqs - lo) / (ctr - lo)
        falling = (hi - fft_freqs) / (hi - ctr)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def frame_count(n_samples: int) -> int:
    """Number of full analysis windows in a signal of ``n_samples``."""
    if n_samples < WIN_LENGTH:
        raise ValueError(f"need at least {WIN_LENGTH} samples, got {n_samples}")
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def stft_magnitude(samples: np.ndarray) -> np.ndarray:
    """Power spectrogram of shape (T, n_fft//2 + 1); no centering, hann window."""
    samples = np.asarray(samples, dtype=np.float64)
    t = frame_count(len(samples))
    window = np.hanning(WIN_LENGTH)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(t)[:, None]
    frames = samples[idx] * window
    return np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2


def mel_spectrogram(w: Waveform) -> np.ndarray:
    """Log-mel energies of shape (T, 80) with T = 1 + floor((N - 400)/160)."""
    if w.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate}")
    power = stft_magnitude(w.samples)
    mel = power @ mel_filterbank().T
    return np.log(np.maximum(mel, LOG_FLOOR))


def add_deltas(mel: np.ndarray) -> np.ndarray:
    """Stack mel with regression deltas (window width 2, edges replicated)."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2:
        raise ValueError("expected a (T, D) matrix")
    d1 = _regression_delta(mel)
    d2 = _regression_delta(d1)
    return np.concatenate([mel, d1, d2], axis=1)


def _regression_delta(x: np.ndarray, width: int = 2) -> np.ndarray:
    padded = np.concatenate([np.repeat(x[:1], width, axis=0), x,
                             np.repeat(x[-1:], width, axis=0)], axis=0)
    denom = 2.0 * sum(n * n for n in range(1, width + 1))
    out = np.zeros_like(x)
    t = x.shape[0]
    for n in range(1, width + 1):
        out += n * (padded[width + n:width + n + t] - padded[width - n:width - n + t])
    return out / denom


def cmvn(feats: np.ndarray) -> SpeechFeatures:
    """Per-utterance, per-dimension mean/variance normalization.

    Dimensions with variance below 1e-10 are only mean-subtracted.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("CMVN needs a (T, D) matrix with T >= 2")
    mean = feats.mean(axis=0)
    var = feats.var(axis=0)
    scale = np.where(var < 1e-10, 1.0, np.sqrt(var))
    return SpeechFeatures((feats - mean) / scale, normalized=True, mean=mean, scale=scale)


def utterance_features(w: Waveform) -> SpeechFeatures:
    """Full pipeline: log-mel -> deltas -> CMVN."""
    return cmvn(add_deltas(mel_spectrogram(w)))


def mix_noise(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add noise scaled so that the clean/noise power ratio equals ``snr_db``.

    The noise is looped or trimmed to the clean length before scaling.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rate mismatch between clean and noise")
    n = len(clean)
    noise_samples = noise.samples
    if len(noise_samples) < n:
        reps = -(-n // len(noise_samples))
        noise_samples = np.tile(noise_samples, reps)
    noise_samples = noise_samples[:n]
    p_clean = np.mean(clean.samples ** 2)
    p_noise = np.mean(noise_samples ** 2)
    if p_noise <= 0.0:
        raise ValueError("noise signal has zero power")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * noise_samples, clean.sample_rate)


def measure_snr_db(signal: Waveform, noise: Waveform) -> float:
    """SNR in dB between a signal and a noise component of equal length."""
    p_signal = np.mean(signal.samples ** 2)
    p_noise = np.mean(noise.samples ** 2)
    if p_noise <= 0.0:
        raise ValueError("noise component has zero power")
    return 10.0 * math.log10(p_signal / p_noise)
