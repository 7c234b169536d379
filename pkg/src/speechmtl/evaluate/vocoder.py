"""Waveform reconstruction from log-mel features via iterative phase retrieval.

The mel block is de-normalized with stored statistics, mapped back to a
linear-frequency magnitude spectrogram through the filterbank pseudo-inverse,
and phases are estimated by alternating projections. The spectral
reconstruction error is tracked per iteration.
"""

from __future__ import annotations

import numpy as np

from ..features.audio import (
    HOP_LENGTH,
    N_FFT,
    N_MELS,
    SAMPLE_RATE,
    WIN_LENGTH,
    Waveform,
    mel_filterbank,
)

_PINV_CACHE: dict[int, np.ndarray] = {}


def _mel_pinv() -> np.ndarray:
    if 0 not in _PINV_CACHE:
        _PINV_CACHE[0] = np.linalg.pinv(mel_filterbank())
    return _PINV_CACHE[0]


def _stft_complex(samples: np.ndarray, t: int) -> np.ndarray:
    window = np.hanning(WIN_LENGTH)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(t)[:, None]
    return np.fft.rfft(samples[idx] * window, n=N_FFT, axis=1)


def _istft(spec: np.ndarray) -> np.ndarray:
    """Weighted overlap-add; output has (T - 1) * hop + window samples."""
    t = spec.shape[0]
    window = np.hanning(WIN_LENGTH)
    out_len = (t - 1) * HOP_LENGTH + WIN_LENGTH
    out = np.zeros(out_len)
    wsum = np.zeros(out_len)
    frames = np.fft.irfft(spec, n=N_FFT, axis=1)[:, :WIN_LENGTH]
    for i in range(t):
        start = i * HOP_LENGTH
        out[start:start + WIN_LENGTH] += frames[i] * window
        wsum[start:start + WIN_LENGTH] += window ** 2
    return out / np.maximum(wsum, 1e-8)


def linear_magnitude_from_log_mel(log_mel: np.ndarray) -> np.ndarray:
    """Invert the mel projection: log power mel -> linear magnitude."""
    if log_mel.ndim != 2 or log_mel.shape[1] != N_MELS:
        raise ValueError(f"expected (T, {N_MELS}) log-mel input")
    mel_power = np.exp(log_mel)
    linear_power = np.maximum(mel_power @ _mel_pinv().T, 0.0)
    return np.sqrt(linear_power)


def griffin_lim(log_mel: np.ndarray, iterations: int = 32
                ) -> tuple[Waveform, list[float]]:
    """Reconstruct a waveform from raw (de-normalized) log-mel features.

    Returns the waveform and the per-iteration spectral error
    ||_|STFT(x)| - M_||_F, which is non-increasing for this projection pair.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    magnitude = linear_magnitude_from_log_mel(np.asarray(log_mel, dtype=np.float64))
    t = magnitude.shape[0]
    signal = _istft(magnitude.astype(complex))
    errors: list[float] = []
    for _ in range(iterations):
        spec = _stft_complex(signal, t)
        current = np.abs(spec)
        errors.append(float(np.linalg.norm(current - magnitude)))
        phase = spec / np.maximum(current, 1e-12)
        signal = _istft(magnitude * phase)
    peak = np.max(np.abs(signal))
    if peak > 1.0:
        signal = signal / peak
    return Waveform(signal, SAMPLE_RATE), errors


def mel_to_waveform(features: np.ndarray, mean: np.ndarray, scale: np.ndarray,
                    iterations: int = 32) -> Waveform:
    """De-normalize the mel block of a (T, 240) feature matrix and vocode it."""
    feats = np.asarray(features, dtype=np.float64)
    raw = feats * np.asarray(scale) + np.asarray(mean)
    wav, _ = griffin_lim(raw[:, :N_MELS], iterations)
    return wav
