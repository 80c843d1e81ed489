import numpy as np
import pytest

from injectbert.embeddings import EmbeddingStore
from injectbert.model import ModelConfig, init_params
from injectbert.tokenization import WordPieceVocab


@pytest.fixture
def tiny_vocab() -> WordPieceVocab:
    pieces = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
        + ["a", "b", "c", "d", "e", "hello", "world", "pro", "##mpt"]
        + ["x", "##x", "y", "##y", "z", "##z"]
    )
    return WordPieceVocab.from_pieces(pieces)


@pytest.fixture
def tiny_store() -> EmbeddingStore:
    rng = np.random.default_rng(42)
    words = ["a", "b", "c", "d", "e", "hello", "world", "prompt"]
    return EmbeddingStore(
        index={w: i for i, w in enumerate(words)},
        vectors=rng.normal(size=(len(words), 8)),
        dim=8,
    )


def tiny_config(vocab_size: int, **overrides) -> ModelConfig:
    defaults = dict(
        vocab_size=vocab_size,
        n_layers=2,
        hidden_size=16,
        n_heads=2,
        ff_size=32,
        ext_dim=8,
        max_seq_len=12,
        num_classes=2,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


@pytest.fixture
def tiny_model(tiny_vocab):
    config = tiny_config(len(tiny_vocab), injection_mode="gated")
    return config, init_params(config, seed=0)
