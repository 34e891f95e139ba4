import numpy as np
import pytest

from semiscribe.data import ToyCorpusConfig, Utterance, Vocabulary, generate_toy_corpus
from semiscribe.model import ModelConfig, init_model


@pytest.fixture
def tiny_vocab():
    return Vocabulary(chars=("a", "b", "c"))


@pytest.fixture
def tiny_config(tiny_vocab):
    return ModelConfig(vocab=tiny_vocab, input_channels=3, encoder_layers=1,
                       encoder_dim=5, decoder_dim=4, attention_dim=3,
                       attention_conv_filters=2, attention_kernel=3, seed=1)


@pytest.fixture
def tiny_model(tiny_config):
    return init_model(tiny_config)


@pytest.fixture
def micro_split():
    config = ToyCorpusConfig(vocab_size=4, num_channels=6, noise_std=0.1,
                             frames_per_token_mean=5, frames_per_token_jitter=1,
                             transcript_length_range=(3, 6),
                             num_labeled=8, num_unlabeled=10, num_dev=4, num_test=4,
                             seed=13)
    return generate_toy_corpus(config)


def make_utterance(uid, text, frames, channels=3, seed=0):
    rng = np.random.default_rng(seed)
    return Utterance(id=uid, duration_s=frames * 0.02,
                     features=rng.normal(0.0, 1.0, (frames, channels)), transcript=text)
