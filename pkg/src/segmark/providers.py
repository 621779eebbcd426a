"""Deterministic next-token-distribution sources.

Everything downstream (codec, tamper tracing, metrics) sees only the
provider contract: a deterministic ``next_distribution(context)`` plus
tokenize/detokenize over a fixed vocabulary. Three implementations live
here: an add-alpha smoothed n-gram model trained from text, a fixed table
for tests and demos, and a client for a remote logits endpoint.
"""
from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import requests

from .codec import TokenDistribution
from .errors import (
    CorpusTooSmall,
    FormatError,
    ProtocolError,
    RemoteTimeout,
    RemoteUnavailable,
    UnknownToken,
)

#: context placeholder for words outside the vocabulary (tamper tracing
#: replays received prefixes as-is; this id never matches any table key)
OOV_ID = -1

EOT_TOKEN = "<eot>"

NGRAM_MAGIC = "NGRM"
NGRAM_VERSION = 1


@dataclass(frozen=True)
class ProviderFingerprint:
    """Identity of a provider: equal fingerprints give equal distributions."""

    algorithm: str
    content_hash: str
    vocab_size: int

    def as_dict(self) -> dict:
        return {"algorithm": self.algorithm, "content_hash": self.content_hash,
                "vocab_size": self.vocab_size}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProviderFingerprint":
        return cls(str(d["algorithm"]), str(d["content_hash"]), int(d["vocab_size"]))


class Provider:
    """Base class wiring vocabulary helpers around next_distribution()."""

    algorithm: str = "abstract"

    def __init__(self, vocab: Sequence[str]):
        self._vocab = tuple(vocab)
        self._ids = {w: i for i, w in enumerate(self._vocab)}

    # --- vocabulary ------------------------------------------------------

    @property
    def vocab(self) -> tuple[str, ...]:
        return self._vocab

    @property
    def vocab_size(self) -> int:
        return len(self._vocab)

    def lookup(self, word: str) -> int | None:
        """Token id for a word, or None when out of vocabulary."""
        return self._ids.get(word)

    def token_string(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._vocab):
            raise UnknownToken(f"token id {token_id} out of range")
        return self._vocab[token_id]

    def tokenize(self, text: str) -> tuple[int, ...]:
        ids = []
        for word in text.split():
            tid = self._ids.get(word)
            if tid is None:
                raise UnknownToken(f"word {word!r} not in vocabulary")
            ids.append(tid)
        return tuple(ids)

    def detokenize(self, token_ids: Sequence[int]) -> str:
        return " ".join(self.token_string(t) for t in token_ids)

    # --- contract --------------------------------------------------------

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        raise NotImplementedError

    def top_candidates(self, context: Sequence[int],
                       k: int) -> tuple[tuple[int, float], ...]:
        """The k most probable tokens with their true probabilities.

        Equals the first k positive entries of next_distribution().ordered;
        subclasses may override with something cheaper, but must return
        bit-identical probabilities, since embed and extract both replay
        through this surface.
        """
        d = self.next_distribution(context)
        return tuple((tid, p) for tid, p in d.ordered[:k] if p > 0)

    def fingerprint(self) -> ProviderFingerprint:
        raise NotImplementedError

    def _check_context(self, context: Sequence[int]) -> None:
        for tid in context:
            if tid != OOV_ID and not 0 <= tid < len(self._vocab):
                raise UnknownToken(f"context id {tid} out of range")


class NGramProvider(Provider):
    """Add-alpha smoothed n-gram model with longest-suffix backoff.

    ``order`` is the number of conditioning tokens. A context is scored at
    the longest trained suffix that was observed in the corpus (the empty
    suffix, i.e. the unigram table, always is), then smoothed over the whole
    vocabulary with the given alpha. alpha = 0 keeps only seen successors.

    ``dither`` mixes a deterministic full-context-keyed perturbation into
    the conditional (each probability is scaled by 1 + dither * u, u drawn
    from a hash of the entire context). Large models never emit the same
    conditional twice along a generation because they condition on the whole
    prefix; a suffix model does, and a repeating conditional can pin the
    embedder's code-space walk to a zero-progress segment forever. The
    dither restores the never-repeating property while staying a pure
    function of the context, so extraction replays it exactly. dither = 0
    is the raw counting model.
    """

    algorithm = "ngram/1"

    _CACHE_CAP = 8192
    #: dither perturbs exactly this many leading base candidates; the tail is
    #: scaled by the shared normalizer only, so its mass folds into one
    #: cached float and both provider surfaces agree bit for bit
    DITHER_TOP = 64

    def __init__(self, order: int, alpha: float, vocab: Sequence[str],
                 counts: Mapping[tuple[int, ...], Mapping[int, int]],
                 dither: float = 0.0):
        if not 1 <= order <= 3:
            raise ValueError("order must be 1..3")
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= dither < 1:
            raise ValueError("dither must be in [0, 1)")
        super().__init__(vocab)
        self.order = order
        self.alpha = float(alpha)
        self.dither = float(dither)
        self._counts = {tuple(k): dict(v) for k, v in counts.items()}
        if () not in self._counts:
            raise ValueError("missing unigram table")
        self._totals = {k: sum(v.values()) for k, v in self._counts.items()}
        # per-suffix: token ids descending by (prob, -id), parallel probs,
        # and the total probability mass past DITHER_TOP
        self._base_cache: dict[tuple[int, ...],
                               tuple[list[int], list[float], float]] = {}
        self._dist_cache: dict[tuple[int, ...], TokenDistribution] = {}
        self._fp: ProviderFingerprint | None = None

    def _effective_key(self, context: Sequence[int]) -> tuple[int, ...]:
        for k in range(min(self.order, len(context)), 0, -1):
            key = tuple(context[-k:])
            if self._totals.get(key):
                return key
        return ()

    def _base(self, key: tuple[int, ...]) -> tuple[list[int], list[float], float]:
        cached = self._base_cache.get(key)
        if cached is not None:
            return cached
        table = self._counts[key]
        total = self._totals[key]
        n = len(self._vocab)
        if self.alpha > 0:
            denom = total + self.alpha * n
            pairs = [(tid, (table.get(tid, 0) + self.alpha) / denom)
                     for tid in range(n)]
        else:
            pairs = [(tid, c / total) for tid, c in table.items() if c > 0]
        pairs.sort(key=lambda kv: (-kv[1], kv[0]))
        ids = [tid for tid, _ in pairs]
        probs = [p for _, p in pairs]
        tail_mass = math.fsum(probs[self.DITHER_TOP:])
        if len(self._base_cache) >= self._CACHE_CAP:
            self._base_cache.clear()
        made = (ids, probs, tail_mass)
        self._base_cache[key] = made
        return made

    def _dither_state(self, key: tuple[int, ...], context: Sequence[int]):
        """Scaled head values and the shared normalizer for one context."""
        ids, probs, tail_mass = self._base(key)
        m = min(self.DITHER_TOP, len(probs))
        digest = hashlib.blake2b(repr(tuple(context)).encode(), digest_size=8)
        rng = random.Random(int.from_bytes(digest.digest(), "big"))
        scale = self.dither
        scaled = [p * (1.0 + scale * rng.random()) for p in probs[:m]]
        norm = math.fsum(scaled) + tail_mass
        return ids, probs, scaled, norm, digest.hexdigest()

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        self._check_context(context)
        key = self._effective_key(context)
        if self.dither == 0.0:
            cached = self._dist_cache.get(key)
            if cached is not None:
                return cached
            ids, probs, _ = self._base(key)
            fp = hashlib.blake2b(repr(key).encode(), digest_size=8).hexdigest()
            dist = TokenDistribution(fp, dict(zip(ids, probs)))
            if len(self._dist_cache) >= self._CACHE_CAP:
                self._dist_cache.clear()
            self._dist_cache[key] = dist
            return dist
        ids, probs, scaled, norm, fp = self._dither_state(key, context)
        entries = {tid: s / norm for tid, s in zip(ids, scaled)}
        for tid, p in zip(ids[len(scaled):], probs[len(scaled):]):
            entries[tid] = p / norm
        return TokenDistribution(fp, entries)

    def top_candidates(self, context: Sequence[int],
                       k: int) -> tuple[tuple[int, float], ...]:
        self._check_context(context)
        key = self._effective_key(context)
        if self.dither == 0.0:
            ids, probs, _ = self._base(key)
            return tuple(zip(ids[:k], probs[:k]))
        ids, probs, scaled, norm, _ = self._dither_state(key, context)
        m = len(scaled)
        # dither only raises head values, so the head stays ahead of the tail
        head = sorted(zip(scaled, ids[:m]), key=lambda sv: (-sv[0], sv[1]))
        out = [(tid, s / norm) for s, tid in head[:k]]
        for tid, p in zip(ids[m:], probs[m:]):
            if len(out) >= k:
                break
            out.append((tid, p / norm))
        return tuple(out)

    def fingerprint(self) -> ProviderFingerprint:
        if self._fp is None:
            digest = hashlib.sha256(self._model_json().encode("utf-8")).hexdigest()
            self._fp = ProviderFingerprint(self.algorithm, digest, self.vocab_size)
        return self._fp

    # --- persistence -----------------------------------------------------

    def _model_json(self) -> str:
        counts = {
            ",".join(str(t) for t in key): {str(t): c for t, c in sorted(table.items())}
            for key, table in sorted(self._counts.items())
        }
        doc = {"magic": NGRAM_MAGIC, "version": NGRAM_VERSION,
               "order": self.order, "alpha": self.alpha, "dither": self.dither,
               "vocab": list(self._vocab), "counts": counts}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self._model_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NGramProvider":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError(f"cannot read n-gram model: {e}") from e
        if not isinstance(doc, dict) or doc.get("magic") != NGRAM_MAGIC:
            raise FormatError("not an n-gram model file (bad magic)")
        if doc.get("version") != NGRAM_VERSION:
            raise FormatError(f"unsupported model version {doc.get('version')!r}")
        counts = {
            tuple(int(t) for t in key.split(",") if key): {
                int(t): int(c) for t, c in table.items()}
            for key, table in doc["counts"].items()
        }
        return cls(int(doc["order"]), float(doc["alpha"]), doc["vocab"], counts,
                   dither=float(doc.get("dither", 0.0)))


def train_ngram(corpus: str | Iterable[str], order: int,
                smoothing_alpha: float, dither: float = 0.0) -> NGramProvider:
    """Count-based training over whitespace tokens, end marker appended."""
    if not isinstance(corpus, str):
        corpus = "\n".join(corpus)
    stream = corpus.split()
    if len(stream) < order + 1:
        raise CorpusTooSmall(
            f"corpus yields {len(stream)} tokens, order {order} needs {order + 1}")
    words = stream + [EOT_TOKEN]
    vocab = tuple(sorted(set(words)))
    ids = {w: i for i, w in enumerate(vocab)}
    tokens = [ids[w] for w in words]
    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for i, tok in enumerate(tokens):
        for k in range(min(order, i) + 1):
            key = tuple(tokens[i - k:i])
            table = counts.setdefault(key, {})
            table[tok] = table.get(tok, 0) + 1
    return NGramProvider(order, smoothing_alpha, vocab, counts, dither=dither)


class StaticProvider(Provider):
    """Context-independent fixed distribution, mainly for tests and demos."""

    algorithm = "static/1"

    def __init__(self, probs: Sequence[float], vocab: Sequence[str] | None = None):
        if vocab is None:
            vocab = [f"t{i}" for i in range(len(probs))]
        if len(vocab) != len(probs):
            raise ValueError("vocab and probs must align")
        super().__init__(vocab)
        total = math.fsum(probs)
        if total <= 0:
            # kept as-is: build_candidates reports EmptyDistribution
            entries = {i: float(p) for i, p in enumerate(probs)}
        else:
            entries = {i: p / total for i, p in enumerate(probs)}
        self._dist = TokenDistribution("static", entries)

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        return self._dist

    def fingerprint(self) -> ProviderFingerprint:
        raw = json.dumps({"vocab": list(self._vocab),
                          "probs": [self._dist.entries[i] for i in range(self.vocab_size)]},
                         sort_keys=True)
        digest = hashlib.sha256(raw.encode()).hexdigest()
        return ProviderFingerprint(self.algorithm, digest, self.vocab_size)

    @classmethod
    def load(cls, path: str | Path) -> "StaticProvider":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(doc["probs"], doc.get("vocab"))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"cannot read static provider table: {e}") from e


def remote_distribution(endpoint: str, context: Sequence[int], top_k: int = 0,
                        timeout: float = 5.0,
                        session: requests.Session | None = None) -> TokenDistribution:
    """POST the wire request and validate/renormalize the reply.

    Request : {"context_tokens": [ids], "top_k": int}
    Response: {"entries": [{"id": int, "prob": float}, ...]}

    The reply must already be (near-)normalized: a probability sum outside
    [0.99, 1.01] is rejected as non-normalizable.
    """
    post = (session or requests).post
    try:
        resp = post(endpoint,
                    json={"context_tokens": list(context), "top_k": top_k},
                    timeout=timeout)
    except requests.Timeout as e:
        raise RemoteTimeout(f"no reply from {endpoint} in {timeout}s") from e
    except requests.RequestException as e:
        raise RemoteUnavailable(f"cannot reach {endpoint}: {e}") from e
    try:
        doc = resp.json()
    except ValueError as e:
        raise ProtocolError("response is not JSON") from e
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ProtocolError("response missing 'entries'")
    entries: dict[int, float] = {}
    for item in doc["entries"]:
        if not isinstance(item, dict) or "id" not in item or "prob" not in item:
            raise ProtocolError("entry missing 'id' or 'prob'")
        tid, prob = item["id"], item["prob"]
        if not isinstance(tid, int) or not isinstance(prob, (int, float)) or prob < 0:
            raise ProtocolError(f"malformed entry {item!r}")
        if tid in entries:
            raise ProtocolError(f"duplicate token id {tid}")
        entries[tid] = float(prob)
    total = math.fsum(entries.values())
    if not 0.99 <= total <= 1.01:
        raise ProtocolError(f"probabilities sum to {total}, not normalizable")
    fp = hashlib.blake2b(repr(tuple(context)).encode(), digest_size=8).hexdigest()
    return TokenDistribution(fp, {t: p / total for t, p in entries.items()})


class RemoteProvider(Provider):
    """Client for a remote logits endpoint speaking the wire protocol above.

    Determinism is the endpoint's responsibility; the fingerprint therefore
    identifies the endpoint and local vocabulary, not the remote weights.
    """

    algorithm = "remote/1"

    def __init__(self, endpoint: str, vocab: Sequence[str] | None = None,
                 top_k_hint: int = 0, timeout: float = 5.0):
        super().__init__(vocab or ())
        self.endpoint = endpoint
        self.top_k_hint = top_k_hint
        self.timeout = timeout
        self._session = requests.Session()

    def tokenize(self, text: str) -> tuple[int, ...]:
        if not self._vocab:
            raise UnknownToken("remote provider has no local vocabulary")
        return super().tokenize(text)

    def token_string(self, token_id: int) -> str:
        if not self._vocab:
            raise UnknownToken("remote provider has no local vocabulary")
        return super().token_string(token_id)

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        return remote_distribution(self.endpoint, context, self.top_k_hint,
                                   self.timeout, self._session)

    def fingerprint(self) -> ProviderFingerprint:
        raw = json.dumps({"endpoint": self.endpoint, "vocab": list(self._vocab)},
                         sort_keys=True)
        digest = hashlib.sha256(raw.encode()).hexdigest()
        return ProviderFingerprint(self.algorithm, digest, self.vocab_size)
