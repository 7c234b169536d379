"""Evaluation metrics: word error rate, SI-SDR, short-time intelligibility,
and masked spectrogram MSE."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import resample_poly

from ..features.audio import Waveform

SISDR_CAP_DB = 60.0


def edit_distance(hyp, ref) -> int:
    """Minimum substitutions + deletions + insertions turning hyp into ref."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i]
        for j, r in enumerate(ref, start=1):
            cur.append(min(prev[j - 1] + (h != r), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


def wer(hyp, ref) -> float:
    """(substitutions + deletions + insertions) / len(ref).

    Accepts strings (split on whitespace) or token lists.
    """
    if isinstance(hyp, str):
        hyp = hyp.split()
    if isinstance(ref, str):
        ref = ref.split()
    if len(ref) == 0:
        raise ValueError("reference must be non-empty")
    return edit_distance(hyp, ref) / len(ref)


def sisdr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-60.

    Both signals are mean-removed; the estimate is compared against its
    least-squares projection onto the reference.
    """
    if len(est) != len(ref):
        raise ValueError("signals must have equal length")
    s = ref.samples - ref.samples.mean()
    s_hat = est.samples - est.samples.mean()
    denom = float(np.dot(s, s))
    if denom <= 0.0:
        raise ValueError("silent reference")
    alpha = float(np.dot(s_hat, s)) / denom
    target = alpha * s
    err = float(np.sum((target - s_hat) ** 2))
    sig = float(np.sum(target ** 2))
    if err <= 0.0:
        return SISDR_CAP_DB
    if sig <= 0.0:
        return -SISDR_CAP_DB
    value = 10.0 * math.log10(sig / err)
    return max(-SISDR_CAP_DB, min(SISDR_CAP_DB, value))


# ---------------------------------------------------------------------------
# Short-time objective intelligibility (the 2010 procedure): 10 kHz analysis,
# energy-based silent-frame removal, 15 one-third-octave bands from 150 Hz,
# 384 ms segments, clipped and normalized envelope correlation.
# ---------------------------------------------------------------------------

_STOI_RATE = 10_000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30          # frames per segment = 384 ms
_STOI_BETA_DB = -15.0
_STOI_VAD_RANGE_DB = 40.0


def _third_octave_matrix() -> np.ndarray:
    freqs = np.arange(_STOI_NFFT // 2 + 1) * _STOI_RATE / _STOI_NFFT
    centers = _STOI_MIN_FREQ * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    lo = centers * 2.0 ** (-1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    mat = np.zeros((_STOI_BANDS, len(freqs)))
    for j in range(_STOI_BANDS):
        mat[j] = (freqs >= lo[j]) & (freqs < hi[j])
    return mat


def _stoi_frames(x: np.ndarray) -> np.ndarray:
    n_frames = 1 + (len(x) - _STOI_FRAME) // _STOI_HOP
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n_frames)[:, None]
    return x[idx] * np.hanning(_STOI_FRAME)


def stoi(est: Waveform, ref: Waveform) -> float:
    """Mean clipped correlation of one-third-octave band envelopes."""
    if len(est) != len(ref):
        raise ValueError("signals must have equal length")
    min_samples = int(0.384 * ref.sample_rate)
    if len(ref) < min_samples:
        raise ValueError("need at least 384 ms of audio")
    x = resample_poly(ref.samples, _STOI_RATE, ref.sample_rate)
    y = resample_poly(est.samples, _STOI_RATE, est.sample_rate)

    xf = _stoi_frames(x)
    yf = _stoi_frames(y)
    # Keep frames within 40 dB of the loudest reference frame.
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-12)
    keep = energy >= energy.max() - _STOI_VAD_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    if xf.shape[0] < _STOI_SEG:
        raise ValueError("too little active speech for the 384 ms analysis")

    band = _third_octave_matrix()
    xs = np.sqrt((np.abs(np.fft.rfft(xf, _STOI_NFFT, axis=1)) ** 2) @ band.T)
    ys = np.sqrt((np.abs(np.fft.rfft(yf, _STOI_NFFT, axis=1)) ** 2) @ band.T)

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    scores = []
    for m in range(_STOI_SEG, xs.shape[0] + 1):
        xseg = xs[m - _STOI_SEG:m]          # (N, bands)
        yseg = ys[m - _STOI_SEG:m]
        norm = np.linalg.norm(xseg, axis=0) / (np.linalg.norm(yseg, axis=0) + 1e-12)
        yn = np.minimum(yseg * norm, xseg * (1.0 + clip_gain))
        xc = xseg - xseg.mean(axis=0)
        yc = yn - yn.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0) + 1e-12
        scores.append((xc * yc).sum(axis=0) / denom)
    return float(np.mean(scores))


def mel_mse(pred, target, lengths=None) -> float:
    """Mean squared error over valid frames of two feature matrices.

    2-D inputs are compared over their overlapping frames; 3-D batches use
    per-item ``lengths`` clipped to the overlap.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 2:
        t = min(pred.shape[0], target.shape[0])
        if t == 0:
            raise ValueError("no overlapping frames")
        return float(np.mean((pred[:t] - target[:t]) ** 2))
    t = min(pred.shape[1], target.shape[1])
    if lengths is None:
        lengths = [t] * pred.shape[0]
    total, count = 0.0, 0
    for b in range(pred.shape[0]):
        n = min(int(lengths[b]), t)
        if n == 0:
            continue
        diff = pred[b, :n] - target[b, :n]
        total += float((diff ** 2).sum())
        count += diff.size
    if count == 0:
        raise ValueError("no overlapping frames")
    return total / count
