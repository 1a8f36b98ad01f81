import pytest

from xrumour.corpus import SynthConfig, split_dataset, synth_bilingual
from xrumour.tokenizer import train_subwords

TINY = SynthConfig(n_per_language=160, vocab_size_per_language=60, seed=3)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synth_bilingual(TINY)


@pytest.fixture(scope="session")
def tiny_splits(tiny_corpus):
    return split_dataset(tiny_corpus.source, 0), split_dataset(tiny_corpus.target, 1)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_splits):
    src, tgt = tiny_splits
    return train_subwords([src.train, [t.unlabeled() for t in tgt.train]], 400)
