"""Corpus loading and per-task batch construction.

Features are extracted once per utterance and cached. Enhancement batches
derive their noisy stream deterministically from the utterance id, so runs
with the same seed see byte-identical data.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..features.audio import Waveform, add_deltas, cmvn, load_wav, mel_spectrogram, mix_noise
from ..features.text import WORD_BOUNDARY, PhonemeLexicon, bpe_tokens, bpe_vocab, load_merges
from ..features.toy import ManifestRecord, load_manifest

TRAIN_SNR_GRID = (3.0, 6.0, 9.0)
TEST_SNR_GRID = (-8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0)

TASKS = ("asr", "se", "sc", "tts", "vc")


def deterministic_noise(utt_id: str, n: int) -> Waveform:
    rng = np.random.default_rng(zlib.crc32(utt_id.encode("utf-8")))
    return Waveform(rng.normal(size=n) * 0.1)


@dataclass
class UtteranceTensors:
    feats: torch.Tensor          # (T, 240) normalized
    noisy_feats: torch.Tensor    # (T, 240) normalized independently
    mel_stats: tuple[np.ndarray, np.ndarray]
    bpe_ids: torch.Tensor
    phoneme_ids: torch.Tensor
    durations: torch.Tensor
    speaker_index: int
    snr_db: float


class CorpusData:
    """Manifest-backed corpus with cached tensors for every utterance."""

    def __init__(self, root, shared_cmvn: bool = False):
        self.root = Path(root)
        meta = json.loads((self.root / "meta.json").read_text())
        self.meta = meta
        self.speakers: list[str] = meta["speakers"]
        self.speaker_index = {s: i for i, s in enumerate(self.speakers)}
        self.inventory: list[str] = meta["phoneme_inventory"]
        self.phoneme_index = {p: i for i, p in enumerate(self.inventory)}
        self.merges = load_merges(self.root / "merges.txt")
        self.vocab = bpe_vocab(self.merges)
        self.vocab_index = {t: i for i, t in enumerate(self.vocab)}
        self.shared_cmvn = shared_cmvn
        self.manifests = {
            split: load_manifest(self.root / f"manifest_{split}.jsonl", split)
            for split in ("train", "valid", "test")
        }
        self._cache: dict[str, UtteranceTensors] = {}

    @property
    def text_vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def phoneme_vocab_size(self) -> int:
        return len(self.inventory)

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    def records(self, split: str, subset: int | None = None) -> list[ManifestRecord]:
        recs = self.manifests[split].records
        return recs[:subset] if subset else recs

    def pairs(self, split: str, subset: int | None = None):
        by_pair: dict[str, list[ManifestRecord]] = {}
        for rec in self.records(split, subset):
            if rec.pair_id:
                by_pair.setdefault(rec.pair_id, []).append(rec)
        return [tuple(v) for v in by_pair.values() if len(v) == 2]

    def lexicon(self) -> PhonemeLexicon:
        entries = {w: tuple(p) for w, p in self.meta.get("lexicon", {}).items()}
        fallback = {p: p for p in self.inventory if p != WORD_BOUNDARY}
        return PhonemeLexicon(entries, tuple(self.inventory), fallback)

    def global_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Corpus-level feature mean/scale (for inversion without a reference)."""
        if not hasattr(self, "_global_stats"):
            total = np.zeros(240)
            total_sq = np.zeros(240)
            count = 0
            for i, rec in enumerate(self.records("train")):
                item = self.tensors(rec, "train", i)
                raw = item.feats.numpy() * item.mel_stats[1] + item.mel_stats[0]
                total += raw.sum(axis=0)
                total_sq += (raw ** 2).sum(axis=0)
                count += raw.shape[0]
            mean = total / count
            var = total_sq / count - mean ** 2
            self._global_stats = (mean, np.sqrt(np.maximum(var, 1e-10)))
        return self._global_stats

    def encode_transcript(self, text: str) -> torch.Tensor:
        ids = [self.vocab_index[t] for t in bpe_tokens(text, self.merges)]
        return torch.tensor(ids, dtype=torch.long)

    def encode_phoneme_strings(self, phonemes: list[str]) -> torch.Tensor:
        return torch.tensor([self.phoneme_index[p] for p in phonemes], dtype=torch.long)

    def _snr_for(self, rec: ManifestRecord, split: str, index: int) -> float:
        grid = TRAIN_SNR_GRID if split == "train" else TEST_SNR_GRID
        return float(grid[index % len(grid)])

    def tensors(self, rec: ManifestRecord, split: str, index: int = 0) -> UtteranceTensors:
        if rec.utterance_id in self._cache:
            return self._cache[rec.utterance_id]
        wav = load_wav(self.root / rec.audio_path)
        clean_raw = add_deltas(mel_spectrogram(wav))
        clean = cmvn(clean_raw)
        snr = self._snr_for(rec, split, index)
        noisy_wav = mix_noise(wav, deterministic_noise(rec.utterance_id, len(wav)), snr)
        noisy_raw = add_deltas(mel_spectrogram(noisy_wav))
        if self.shared_cmvn:
            noisy_stats = cmvn(noisy_raw)
            noisy = (noisy_raw - noisy_stats.mean) / noisy_stats.scale
            clean_frames = (clean_raw - noisy_stats.mean) / noisy_stats.scale
        else:
            noisy = cmvn(noisy_raw).frames
            clean_frames = clean.frames
        item = UtteranceTensors(
            feats=torch.tensor(clean_frames, dtype=torch.float32),
            noisy_feats=torch.tensor(noisy, dtype=torch.float32),
            mel_stats=(clean.mean, clean.scale),
            bpe_ids=self.encode_transcript(rec.transcript),
            phoneme_ids=self.encode_phoneme_strings(rec.phonemes),
            durations=torch.tensor(rec.durations, dtype=torch.long),
            speaker_index=self.speaker_index[rec.speaker_id],
            snr_db=snr,
        )
        self._cache[rec.utterance_id] = item
        return item


def pad_stack(tensors: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([t.shape[0] for t in tensors], dtype=torch.long)
    return torch.nn.utils.rnn.pad_sequence(tensors, batch_first=True), lengths


def collate_task_batch(task: str, corpus: CorpusData, records, split: str) -> "TaskBatch":
    from .graphs import TaskBatch

    if task == "vc":
        items_a = [corpus.tensors(a, split, i) for i, (a, _) in enumerate(records)]
        items_b = [corpus.tensors(b, split, i) for i, (_, b) in enumerate(records)]
        f1, l1 = pad_stack([it.feats for it in items_a])
        f2, l2 = pad_stack([it.feats for it in items_b])
        return TaskBatch("vc", feats=f1, feat_lengths=l1, feats_2=f2, feat_lengths_2=l2,
                         utterance_ids=[a.utterance_id for a, _ in records])

    items = [corpus.tensors(r, split, i) for i, r in enumerate(records)]
    utt_ids = [r.utterance_id for r in records]
    if task == "asr":
        feats, lengths = pad_stack([it.feats for it in items])
        tokens, tlens = pad_stack([it.bpe_ids for it in items])
        return TaskBatch("asr", feats=feats, feat_lengths=lengths, tokens=tokens,
                         token_lengths=tlens, utterance_ids=utt_ids)
    if task == "se":
        noisy, lengths = pad_stack([it.noisy_feats for it in items])
        clean, _ = pad_stack([it.feats for it in items])
        return TaskBatch("se", feats=noisy, feat_lengths=lengths, feats_2=clean,
                         feat_lengths_2=lengths.clone(), utterance_ids=utt_ids)
    if task == "sc":
        feats, lengths = pad_stack([it.feats for it in items])
        labels = torch.tensor([it.speaker_index for it in items], dtype=torch.long)
        return TaskBatch("sc", feats=feats, feat_lengths=lengths, speaker_ids=labels,
                         utterance_ids=utt_ids)
    if task == "tts":
        feats, lengths = pad_stack([it.feats for it in items])
        tokens, tlens = pad_stack([it.phoneme_ids for it in items])
        durations, _ = pad_stack([it.durations for it in items])
        labels = torch.tensor([it.speaker_index for it in items], dtype=torch.long)
        return TaskBatch("tts", feats=feats, feat_lengths=lengths, tokens=tokens,
                         token_lengths=tlens, durations=durations, speaker_ids=labels,
                         utterance_ids=utt_ids)
    raise ValueError(f"unknown task {task!r}")


class TaskSampler:
    """Cycles over a split in seeded shuffled order, one task's batches."""

    def __init__(self, task: str, corpus: CorpusData, batch_size: int,
                 seed: int, split: str = "train", subset: int | None = None):
        self.task = task
        self.corpus = corpus
        self.batch_size = batch_size
        self.split = split
        self.items = corpus.pairs(split, subset) if task == "vc" else corpus.records(split, subset)
        if not self.items:
            raise ValueError(f"no {task} material in split {split!r}")
        self.rng = np.random.default_rng(seed)
        self._order: list[int] = []

    def _refill(self):
        self._order = list(self.rng.permutation(len(self.items)))

    def next_batch(self):
        picked = []
        while len(picked) < min(self.batch_size, len(self.items)):
            if not self._order:
                self._refill()
            picked.append(self.items[self._order.pop()])
        return collate_task_batch(self.task, self.corpus, picked, self.split)

    def full_batches(self, batch_size: int | None = None):
        """Deterministic sequential batches covering the split once."""
        bs = batch_size or self.batch_size
        for i in range(0, len(self.items), bs):
            yield collate_task_batch(self.task, self.corpus, self.items[i:i + bs], self.split)
