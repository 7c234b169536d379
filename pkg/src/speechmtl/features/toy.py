"""Deterministic synthetic speech corpus for desk-scale training.

Each phoneme is rendered as a pair of formant-like tones; speakers differ by
a pitch factor and a speaking-rate factor. Transcripts, pronunciations and
per-token frame durations are generated alongside the audio, so no forced
alignment is needed. Voice-conversion records come in parallel pairs: the
same sentence uttered by two different speakers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import HOP_LENGTH, SAMPLE_RATE, WIN_LENGTH, Waveform, save_wav
from .text import WORD_BOUNDARY, PhonemeLexicon, learn_bpe, save_merges

# Formant-like (f1, f2) pairs in Hz per phoneme symbol.
PHONEME_TONES = {
    "a": (730.0, 1090.0),
    "e": (530.0, 1840.0),
    "i": (390.0, 1990.0),
    "o": (570.0, 840.0),
    "u": (440.0, 1020.0),
    "b": (140.0, 320.0),
    "k": (240.0, 2200.0),
    "m": (250.0, 900.0),
    "n": (280.0, 1700.0),
    "s": (2600.0, 3100.0),
    "t": (1100.0, 2400.0),
}

PHONEME_INVENTORY = (WORD_BOUNDARY,) + tuple(sorted(PHONEME_TONES))

WORDS = (
    "ba", "bi", "ku", "ma", "mi", "na", "no", "sa", "se", "si",
    "ta", "te", "ti", "to", "tu", "kane", "mesa", "boni", "satu", "kimo",
)

BOUNDARY_FRAMES = 4
# Shortest sentence (2 words x 2 phonemes) must still exceed the 384 ms
# minimum analysis span of the intelligibility metric: 4 * 9 + 4 = 40 frames.
MIN_PHONE_FRAMES = 9
MAX_PHONE_FRAMES = 12


@dataclass
class ManifestRecord:
    utterance_id: str
    audio_path: str
    transcript: str
    phonemes: list[str]
    durations: list[int]
    speaker_id: str
    pair_id: str | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    split: str

    def __len__(self) -> int:
        return len(self.records)


def toy_lexicon() -> PhonemeLexicon:
    entries = {w: tuple(w) for w in WORDS}
    fallback = {p: p for p in PHONEME_TONES}
    return PhonemeLexicon(entries, PHONEME_INVENTORY, fallback)


def speaker_pitch(index: int) -> float:
    return 1.0 + 0.15 * index


def speaker_rate(index: int) -> float:
    return 1.0 + 0.09 * ((index % 3) - 1)


def _sentence_tokens(words: list[str]) -> list[str]:
    tokens: list[str] = []
    for i, w in enumerate(words):
        if i > 0:
            tokens.append(WORD_BOUNDARY)
        tokens.extend(w)
    return tokens


def _durations_for(tokens: list[str], base: np.ndarray, rate: float) -> list[int]:
    durs = []
    for tok, b in zip(tokens, base):
        if tok == WORD_BOUNDARY:
            durs.append(BOUNDARY_FRAMES)
        else:
            durs.append(max(4, int(round(b * rate))))
    return durs


def synthesize_utterance(phonemes: list[str], durations: list[int], pitch: float) -> Waveform:
    """Render tokens as formant tones; silence at word boundaries.

    The sample count is (T - 1) * hop + window for T = sum(durations), so the
    feature extractor produces exactly one frame per duration unit.
    """
    if len(phonemes) != len(durations):
        raise ValueError("phonemes and durations must align")
    total_frames = int(sum(durations))
    n_samples = (total_frames - 1) * HOP_LENGTH + WIN_LENGTH
    out = np.zeros(n_samples)
    t_global = np.arange(n_samples) / SAMPLE_RATE
    contour = 1.0 + 0.25 * np.sin(2.0 * np.pi * 1.3 * t_global + pitch)
    pos = 0
    for i, (tok, dur) in enumerate(zip(phonemes, durations)):
        seg_len = dur * HOP_LENGTH
        if i == len(phonemes) - 1:
            seg_len = n_samples - pos
        if tok != WORD_BOUNDARY:
            f1, f2 = PHONEME_TONES[tok]
            t = np.arange(seg_len) / SAMPLE_RATE
            seg = 0.6 * np.sin(2.0 * np.pi * f1 * pitch * t) + 0.4 * np.sin(2.0 * np.pi * f2 * pitch * t)
            ramp = min(64, seg_len // 4)
            if ramp > 0:
                env = np.ones(seg_len)
                env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
                env[-ramp:] = env[:ramp][::-1]
                seg = seg * env
            out[pos:pos + seg_len] = 0.3 * seg
        pos += seg_len
    return Waveform(out * contour, SAMPLE_RATE)


def make_toy_dataset(seed: int, n_speakers: int, n_utts: int, split: str = "train") -> DatasetManifest:
    """Deterministic manifest of ``n_utts`` records for one split.

    Records are generated in parallel pairs (same words and base durations,
    two distinct speakers) so voice conversion always has training material.
    """
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    if n_utts < n_speakers:
        raise ValueError("need at least as many utterances as speakers")
    split_offset = {"train": 0, "valid": 1, "test": 2}[split]
    rng = np.random.default_rng([seed, split_offset])
    records: list[ManifestRecord] = []
    n_pairs = n_utts // 2
    for p in range(n_pairs):
        n_words = int(rng.integers(2, 4))
        words = [WORDS[int(rng.integers(0, len(WORDS)))] for _ in range(n_words)]
        tokens = _sentence_tokens(words)
        base = rng.integers(MIN_PHONE_FRAMES, MAX_PHONE_FRAMES + 1, size=len(tokens)).astype(float)
        spk_a = p % n_speakers
        spk_b = (p + 1 + p // n_speakers) % n_speakers
        if spk_b == spk_a:
            spk_b = (spk_a + 1) % n_speakers
        pair_id = f"{split}_pair{p:04d}"
        for side, spk in enumerate((spk_a, spk_b)):
            utt_id = f"{split}_{2 * p + side:04d}"
            records.append(ManifestRecord(
                utterance_id=utt_id,
                audio_path=f"wav/{utt_id}.wav",
                transcript=" ".join(words),
                phonemes=tokens,
                durations=_durations_for(tokens, base, speaker_rate(spk)),
                speaker_id=f"spk{spk}",
                pair_id=pair_id,
            ))
    if n_utts % 2:
        n_words = int(rng.integers(2, 4))
        words = [WORDS[int(rng.integers(0, len(WORDS)))] for _ in range(n_words)]
        tokens = _sentence_tokens(words)
        base = rng.integers(MIN_PHONE_FRAMES, MAX_PHONE_FRAMES + 1, size=len(tokens)).astype(float)
        spk = (2 * n_pairs) % n_speakers
        utt_id = f"{split}_{n_utts - 1:04d}"
        records.append(ManifestRecord(
            utterance_id=utt_id,
            audio_path=f"wav/{utt_id}.wav",
            transcript=" ".join(words),
            phonemes=tokens,
            durations=_durations_for(tokens, base, speaker_rate(spk)),
            speaker_id=f"spk{spk}",
        ))
    return DatasetManifest(records, split)


def manifest_bytes(manifest: DatasetManifest) -> bytes:
    lines = [json.dumps(asdict(r), sort_keys=True) for r in manifest.records]
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_bytes(manifest_bytes(manifest))


def load_manifest(path, split: str) -> DatasetManifest:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                d["pair_id"] = d.get("pair_id")
                records.append(ManifestRecord(**d))
    return DatasetManifest(records, split)


def _balanced_test_manifest(seed: int, n_speakers: int, per_speaker: int) -> DatasetManifest:
    """Test split with exactly ``per_speaker`` records per speaker."""
    base = make_toy_dataset(seed, n_speakers, 2 * n_speakers * per_speaker, split="test")
    by_speaker: dict[str, list[ManifestRecord]] = {}
    for rec in base.records:
        by_speaker.setdefault(rec.speaker_id, []).append(rec)
    records = []
    for s in range(n_speakers):
        picked = by_speaker[f"spk{s}"][:per_speaker]
        if len(picked) < per_speaker:
            raise RuntimeError("unbalanced toy test generation")
        records.extend(picked)
    records.sort(key=lambda r: r.utterance_id)
    return DatasetManifest(records, "test")


def build_toy_corpus(root, seed: int, n_speakers: int = 4, n_train: int = 32,
                     n_valid: int = 8, test_per_speaker: int = 8, n_merges: int = 40) -> Path:
    """Generate manifests, audio, BPE merges and metadata under ``root``."""
    root = Path(root)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    splits = {
        "train": make_toy_dataset(seed, n_speakers, n_train, "train"),
        "valid": make_toy_dataset(seed, n_speakers, n_valid, "valid"),
        "test": _balanced_test_manifest(seed, n_speakers, test_per_speaker),
    }
    speaker_index = {}
    for name, manifest in splits.items():
        save_manifest(root / f"manifest_{name}.jsonl", manifest)
        for rec in manifest.records:
            idx = int(rec.speaker_id[3:])
            speaker_index[rec.speaker_id] = idx
            wav = synthesize_utterance(rec.phonemes, rec.durations, speaker_pitch(idx))
            save_wav(root / rec.audio_path, wav)
    merges = learn_bpe([r.transcript for r in splits["train"].records], n_merges)
    save_merges(root / "merges.txt", merges)
    lex = toy_lexicon()
    meta = {
        "seed": seed,
        "sample_rate": SAMPLE_RATE,
        "speakers": [f"spk{i}" for i in range(n_speakers)],
        "phoneme_inventory": list(PHONEME_INVENTORY),
        "lexicon": {w: list(p) for w, p in lex.entries.items()},
        "splits": {k: len(v) for k, v in splits.items()},
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return root
