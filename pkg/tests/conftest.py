import pytest
import torch

from speechmtl.features.toy import build_toy_corpus
from speechmtl.model import ModelConfig, SpeechModel, init_parameters
from speechmtl.tasks.data import CorpusData

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_corpus")
    return build_toy_corpus(root, seed=1234, n_speakers=4, n_train=16,
                            n_valid=4, test_per_speaker=2, n_merges=30)


@pytest.fixture(scope="session")
def corpus(corpus_root):
    return CorpusData(corpus_root)


def tiny_model_for(corpus: CorpusData, seed: int = 0) -> SpeechModel:
    cfg = ModelConfig(
        d_model=32, d_ff=48, heads=2, unit_heads=2, conv_kernel=7,
        content_enc_layers=1, speaker_enc_layers=1, content_dec_layers=1,
        merge_dec_layers=1, unit_enc_layers=1, s2s_dec_layers=1,
        prosody_enc_layers=1, prosody_pred_layers=1,
    )
    model = SpeechModel(cfg, corpus.text_vocab_size, corpus.phoneme_vocab_size,
                        corpus.n_speakers)
    init_parameters(model, seed)
    return model


@pytest.fixture()
def tiny_model(corpus):
    model = tiny_model_for(corpus)
    model.eval()
    return model
