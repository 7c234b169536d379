import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from speechmtl.features import audio as A
from speechmtl.features.audio import (
    SAMPLE_RATE,
    Waveform,
    add_deltas,
    cmvn,
    load_wav,
    measure_snr_db,
    mel_filterbank,
    mel_spectrogram,
    mix_noise,
)


def test_load_wav_silence_identity(tmp_path):
    path = tmp_path / "silence.wav"
    wavfile.write(path, 16000, np.zeros(16000, dtype=np.int16))
    w = load_wav(path)
    assert w.sample_rate == 16000
    assert len(w) == 16000
    assert np.all(w.samples == 0.0)


def test_load_wav_resamples_8k_to_double_length(tmp_path):
    n = 4000
    sig = (0.25 * np.sin(2 * np.pi * 220 * np.arange(n) / 8000) * 32767).astype(np.int16)
    path = tmp_path / "low.wav"
    wavfile.write(path, 8000, sig)
    w = load_wav(path)
    assert w.sample_rate == 16000
    assert len(w) == 2 * n


def test_load_wav_stereo_downmix_bound(tmp_path):
    rng = np.random.default_rng(0)
    stereo = (rng.uniform(-0.5, 0.5, size=(8000, 2)) * 32767).astype(np.int16)
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 16000, stereo)
    w = load_wav(path)
    assert w.samples.ndim == 1
    assert np.max(np.abs(w.samples)) <= np.max(np.abs(stereo / 32767.0)) + 1e-9


def test_load_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"definitely not a wav file")
    with pytest.raises(ValueError):
        load_wav(path)


def brute_force_frame_count(n):
    # Slide a 400-sample window by 160 and count full placements.
    count = 0
    start = 0
    while start + 400 <= n:
        count += 1
        start += 160
    return count


def test_frame_count_16000_samples():
    w = Waveform(np.random.default_rng(1).normal(size=16000) * 0.1)
    mel = mel_spectrogram(w)
    assert mel.shape == (98, 80)
    assert mel.shape[0] == brute_force_frame_count(16000)


def test_frame_count_single_window():
    w = Waveform(np.random.default_rng(2).normal(size=400) * 0.1)
    assert mel_spectrogram(w).shape == (1, 80)


@given(st.integers(min_value=400, max_value=20000))
@settings(max_examples=60, deadline=None)
def test_frame_count_formula_matches_enumeration(n):
    assert A.frame_count(n) == brute_force_frame_count(n)


def test_mel_too_short_raises():
    with pytest.raises(ValueError):
        mel_spectrogram(Waveform(np.zeros(399)))


def test_pure_tone_hits_expected_mel_bin():
    freq = 440.0
    t = np.arange(16000) / SAMPLE_RATE
    w = Waveform(0.3 * np.sin(2 * np.pi * freq * t))
    mel = mel_spectrogram(w)
    hot = int(np.argmax(mel.mean(axis=0)))
    # Independent filter geometry: centers from the mel-scale breakpoints.
    mel_pts = np.linspace(A.hz_to_mel(0.0), A.hz_to_mel(8000.0), 82)
    centers = A.mel_to_hz(mel_pts)[1:-1]
    nearest = int(np.argmin(np.abs(centers - freq)))
    assert abs(hot - nearest) <= 1


def test_deltas_zero_for_constant():
    mel = np.ones((12, 80)) * 3.5
    out = add_deltas(mel)
    assert out.shape == (12, 240)
    assert np.allclose(out[:, 80:], 0.0)


def test_deltas_linear_ramp():
    t = np.arange(20, dtype=float)
    mel = np.tile(t[:, None], (1, 80))
    out = add_deltas(mel)
    # Regression delta of slope-1 signal: (1*2 + 2*4) / (2*(1+4)) = 1.
    assert np.allclose(out[4:-4, 80:160], 1.0)
    assert np.allclose(out[4:-4, 160:240], 0.0)


def test_deltas_single_frame():
    out = add_deltas(np.full((1, 80), 2.0))
    assert np.allclose(out[:, 80:], 0.0)


def test_cmvn_constant_matrix_zeroed():
    out = cmvn(np.full((10, 240), 7.0))
    assert np.allclose(out.frames, 0.0)


def test_cmvn_statistics_and_idempotence():
    rng = np.random.default_rng(3)
    x = rng.normal(loc=2.0, scale=4.0, size=(50, 240))
    out = cmvn(x)
    assert np.all(np.abs(out.frames.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(out.frames.var(axis=0) - 1.0) < 1e-4)
    twice = cmvn(out.frames)
    assert np.allclose(twice.frames, out.frames, atol=1e-6)


def test_cmvn_requires_two_frames():
    with pytest.raises(ValueError):
        cmvn(np.zeros((1, 240)))


def test_cmvn_denormalize_roundtrip():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(30, 240))
    out = cmvn(x)
    assert np.allclose(out.denormalized(), x, atol=1e-10)


@pytest.mark.parametrize("snr", [-8, -6, -4, -2, 0, 2, 4, 6, 8, 3, 9])
def test_mix_noise_roundtrip_snr(snr):
    rng = np.random.default_rng(5)
    clean = Waveform(0.2 * np.sin(2 * np.pi * 300 * np.arange(8000) / SAMPLE_RATE))
    noise = Waveform(rng.normal(size=8000) * 0.1)
    mixed = mix_noise(clean, noise, snr)
    residual = Waveform(mixed.samples - clean.samples)
    assert measure_snr_db(clean, residual) == pytest.approx(snr, abs=1e-6)


def test_mix_noise_zero_db_equal_power():
    rng = np.random.default_rng(6)
    clean = Waveform(rng.normal(size=4000) * 0.3)
    noise = Waveform(rng.normal(size=4000))
    mixed = mix_noise(clean, noise, 0.0)
    p_clean = np.mean(clean.samples ** 2)
    p_added = np.mean((mixed.samples - clean.samples) ** 2)
    assert p_added == pytest.approx(p_clean, rel=1e-6)


def test_mix_noise_high_snr_close_to_clean():
    rng = np.random.default_rng(7)
    clean = Waveform(rng.normal(size=4000) * 0.3)
    noise = Waveform(rng.normal(size=4000))
    mixed = mix_noise(clean, noise, 40.0)
    rel = np.linalg.norm(mixed.samples - clean.samples) / np.linalg.norm(clean.samples)
    assert rel < 0.011


def test_mix_noise_loops_short_noise():
    clean = Waveform(np.ones(1000) * 0.1)
    noise = Waveform(np.sin(2 * np.pi * 50 * np.arange(300) / SAMPLE_RATE))
    mixed = mix_noise(clean, noise, 10.0)
    assert len(mixed) == 1000


def test_mix_noise_rejects_silent_noise():
    clean = Waveform(np.ones(1000) * 0.1)
    with pytest.raises(ValueError):
        mix_noise(clean, Waveform(np.zeros(1000)), 0.0)


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)
