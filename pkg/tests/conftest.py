import numpy as np
import pytest

from restyle.data import LabeledCorpus, build_vocab
from restyle.synthetic import generate_marker_corpus
from restyle.textcnn import TextCnnStyleClassifier


@pytest.fixture(scope="session")
def small_corpus():
    return generate_marker_corpus(n_train=1200, n_dev=300, n_test=120, seed=7)


@pytest.fixture(scope="session")
def vocab(small_corpus):
    return build_vocab(small_corpus.train_sentences, min_freq=1)


@pytest.fixture(scope="session")
def encoded_train(small_corpus, vocab):
    return LabeledCorpus([vocab.encode(s) for s in small_corpus.train_sentences],
                         list(small_corpus.train_labels))


@pytest.fixture(scope="session")
def encoded_dev(small_corpus, vocab):
    return LabeledCorpus([vocab.encode(s) for s in small_corpus.dev_sentences],
                         list(small_corpus.dev_labels))


@pytest.fixture(scope="session")
def small_classifier(encoded_train, vocab):
    clf = TextCnnStyleClassifier(vocab_size=len(vocab), embed_dim=32, num_filters=16,
                                 epochs=3, learning_rate=2e-3, seed=11)
    clf.fit(encoded_train.sentences, encoded_train.labels)
    return clf
