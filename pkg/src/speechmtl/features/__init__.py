from .audio import (
    SAMPLE_RATE,
    SpeechFeatures,
    Waveform,
    add_deltas,
    cmvn,
    load_wav,
    measure_snr_db,
    mel_filterbank,
    mel_spectrogram,
    mix_noise,
    utterance_features,
)
from .text import (
    TokenSequence,
    apply_bpe,
    detokenize,
    encode_phonemes,
    learn_bpe,
    load_merges,
    save_merges,
)
from .toy import DatasetManifest, ManifestRecord, load_manifest, make_toy_dataset, save_manifest

__all__ = [
    "SAMPLE_RATE",
    "Waveform",
    "SpeechFeatures",
    "TokenSequence",
    "DatasetManifest",
    "ManifestRecord",
    "load_wav",
    "mel_filterbank",
    "mel_spectrogram",
    "add_deltas",
    "cmvn",
    "mix_noise",
    "measure_snr_db",
    "utterance_features",
    "apply_bpe",
    "detokenize",
    "learn_bpe",
    "load_merges",
    "save_merges",
    "encode_phonemes",
    "make_toy_dataset",
    "load_manifest",
    "save_manifest",
]
