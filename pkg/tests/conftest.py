"""Shared fixtures: providers, corpus, keys."""
from __future__ import annotations

import hashlib
from importlib import resources

import pytest

from segmark.codec import TokenDistribution
from segmark.permission import keygen
from segmark.providers import Provider, ProviderFingerprint, StaticProvider, train_ngram


class HashProvider(Provider):
    """Context-sensitive pseudo-random distributions, fully deterministic.

    Probabilities are derived from a keyed hash of the context, so every
    context gets its own positive, normalized table without any training
    data. Good for exhaustive small-vocabulary walks.
    """

    algorithm = "hash-test/1"

    def __init__(self, vocab_size: int, seed: int = 0):
        if not 1 <= vocab_size <= 32:
            raise ValueError("vocab_size must be 1..32")
        super().__init__([f"w{i}" for i in range(vocab_size)])
        self.seed = seed
        self._cache: dict[tuple[int, ...], TokenDistribution] = {}

    def next_distribution(self, context):
        self._check_context(context)
        key = tuple(context)
        dist = self._cache.get(key)
        if dist is not None:
            return dist
        raw = repr((self.seed, key)).encode()
        digest = hashlib.blake2b(raw, digest_size=2 * self.vocab_size).digest()
        weights = [1 + (digest[2 * i] << 8) + digest[2 * i + 1]
                   for i in range(self.vocab_size)]
        total = sum(weights)
        entries = {i: w / total for i, w in enumerate(weights)}
        dist = TokenDistribution(
            hashlib.blake2b(raw, digest_size=8).hexdigest(), entries)
        self._cache[key] = dist
        return dist

    def fingerprint(self) -> ProviderFingerprint:
        return ProviderFingerprint(self.algorithm,
                                   f"seed{self.seed}", self.vocab_size)


@pytest.fixture(scope="session")
def corpus_text() -> str:
    return resources.files("segmark").joinpath("data/corpus.txt").read_text("utf-8")


@pytest.fixture(scope="session")
def ngram2(corpus_text):
    """The workhorse provider: order-2, lightly smoothed, vocab > 400.

    Dither keeps the conditionals full-context-unique the way a real LLM's
    are, which rules out zero-progress cycles in the embedder.
    """
    return train_ngram(corpus_text, order=2, smoothing_alpha=0.3, dither=0.05)


@pytest.fixture(scope="session")
def ngram2_pure(corpus_text):
    """Raw counting model (no dither) for exact-value assertions."""
    return train_ngram(corpus_text, order=2, smoothing_alpha=0.3)


@pytest.fixture(scope="session")
def ngram1_raw(corpus_text):
    """Unsmoothed order-1 model (zero probabilities exist)."""
    return train_ngram(corpus_text, order=1, smoothing_alpha=0.0)


@pytest.fixture()
def static4():
    return StaticProvider([0.5, 0.25, 0.125, 0.125])


@pytest.fixture(scope="session")
def rsa_pair():
    return keygen("rsa2048")


@pytest.fixture(scope="session")
def other_rsa_pair():
    return keygen("rsa2048")
