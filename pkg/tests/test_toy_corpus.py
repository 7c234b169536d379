import numpy as np

from speechmtl.features.audio import load_wav, mel_spectrogram, utterance_features
from speechmtl.features.toy import (
    build_toy_corpus,
    make_toy_dataset,
    manifest_bytes,
    speaker_pitch,
    synthesize_utterance,
)


def test_same_seed_byte_identical():
    a = make_toy_dataset(7, 2, 8)
    b = make_toy_dataset(7, 2, 8)
    assert manifest_bytes(a) == manifest_bytes(b)


def test_different_seed_differs():
    assert manifest_bytes(make_toy_dataset(1, 2, 8)) != manifest_bytes(make_toy_dataset(2, 2, 8))


def test_record_count_and_speaker_coverage():
    m = make_toy_dataset(3, 2, 8)
    assert len(m) == 8
    assert {r.speaker_id for r in m.records} == {"spk0", "spk1"}


def test_vc_pairs_share_text_distinct_speakers():
    m = make_toy_dataset(11, 3, 12)
    by_pair = {}
    for r in m.records:
        if r.pair_id:
            by_pair.setdefault(r.pair_id, []).append(r)
    assert by_pair
    for recs in by_pair.values():
        assert len(recs) == 2
        assert recs[0].phonemes == recs[1].phonemes
        assert recs[0].transcript == recs[1].transcript
        assert recs[0].speaker_id != recs[1].speaker_id


def test_durations_positive_and_frames_match_audio():
    m = make_toy_dataset(5, 2, 4)
    rec = m.records[0]
    assert all(d >= 1 for d in rec.durations)
    wav = synthesize_utterance(rec.phonemes, rec.durations, speaker_pitch(0))
    mel = mel_spectrogram(wav)
    assert mel.shape[0] == sum(rec.durations)


def test_build_toy_corpus_loadable(tmp_path):
    root = build_toy_corpus(tmp_path / "corpus", seed=9, n_speakers=2,
                            n_train=4, n_valid=2, test_per_speaker=1, n_merges=10)
    assert (root / "manifest_train.jsonl").exists()
    assert (root / "merges.txt").exists()
    assert (root / "meta.json").exists()
    from speechmtl.features.toy import load_manifest
    train = load_manifest(root / "manifest_train.jsonl", "train")
    assert len(train) == 4
    for rec in train.records:
        w = load_wav(root / rec.audio_path)
        feats = utterance_features(w)
        assert feats.num_frames == sum(rec.durations)
        assert np.all(np.isfinite(feats.frames))


def test_balanced_test_split(tmp_path):
    root = build_toy_corpus(tmp_path / "c2", seed=13, n_speakers=2,
                            n_train=4, n_valid=2, test_per_speaker=3, n_merges=5)
    from speechmtl.features.toy import load_manifest
    test = load_manifest(root / "manifest_test.jsonl", "test")
    counts = {}
    for r in test.records:
        counts[r.speaker_id] = counts.get(r.speaker_id, 0) + 1
    assert counts == {"spk0": 3, "spk1": 3}
