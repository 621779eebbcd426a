"""Rank-based tamper scoring, fineness, and a substitution-attack harness.

Watermarked tokens always come from the embedder's candidate pool, and the
segment sizing pushes selection toward the high-probability end of it, so a
received token whose conditional-probability rank is deep (or outside the
pool entirely) is evidence of tampering. Scoring needs only the received
text and a provider; neither the original data nor the message is required.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from .errors import LengthMismatch, UnknownToken
from .providers import OOV_ID


@dataclass(frozen=True)
class TamperRecord:
    position: int
    word: str
    token_id: int | None  # None when the word is out of vocabulary
    rank: int | None
    tp: float


@dataclass(frozen=True)
class TamperReport:
    records: tuple[TamperRecord, ...]
    top_k: int

    def __len__(self) -> int:
        return len(self.records)

    @property
    def tp_values(self) -> tuple[float, ...]:
        return tuple(r.tp for r in self.records)


def token_rank(d, token_id: int) -> int:
    """1-based rank of the token under descending probability, ties by id."""
    for i, (tid, p) in enumerate(d.ordered):
        if p <= 0:
            break
        if tid == token_id:
            return i + 1
    raise UnknownToken(f"token {token_id} has no positive probability here")


def tamper_probability(rank: int, top_k: int) -> float:
    """Piecewise score over the rank; thresholds are exact rationals."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if top_k < 8:
        raise ValueError("top_k must be >= 8")
    if rank > top_k:
        return 1.0
    if 2 * rank > top_k:
        return 0.75
    if 4 * rank > top_k:
        return 0.5
    if 8 * rank > top_k:
        return 0.3
    return 0.0


def trace(provider, text: str, prompt: Sequence[int] = (),
          top_k: int = 40) -> TamperReport:
    """Score every received token against the replayed distribution.

    The prefix is replayed as received, tampered or not. Words outside the
    vocabulary cannot have been produced by the embedder at all, so they
    score TP = 1 directly.
    """
    words = text.split()
    ctx = list(prompt)
    records = []
    for pos, word in enumerate(words):
        tid = provider.lookup(word)
        d = provider.next_distribution(ctx)
        if tid is None:
            rank, tp = None, 1.0
        else:
            try:
                rank = token_rank(d, tid)
                tp = tamper_probability(rank, top_k)
            except UnknownToken:
                rank, tp = None, 1.0
        records.append(TamperRecord(pos, word, tid, rank, tp))
        ctx.append(tid if tid is not None else OOV_ID)
    return TamperReport(tuple(records), top_k)


def fineness(report: TamperReport, labels: Sequence[int]) -> float:
    """Mean of TP x ground-truth label over positions."""
    if len(labels) != len(report.records):
        raise LengthMismatch(
            f"{len(labels)} labels for {len(report.records)} positions")
    if not report.records:
        return 0.0
    return math.fsum(r.tp * l for r, l in zip(report.records, labels)) / len(report.records)


def false_positive_rate(report: TamperReport, labels: Sequence[int]) -> float:
    """Share of untampered positions with TP > 0 (supplementary diagnostic)."""
    if len(labels) != len(report.records):
        raise LengthMismatch(
            f"{len(labels)} labels for {len(report.records)} positions")
    clean = [r for r, l in zip(report.records, labels) if not l]
    if not clean:
        return 0.0
    return sum(1 for r in clean if r.tp > 0) / len(clean)


def substitute_attack(text: str, rate: float, seed: int,
                      provider) -> tuple[str, tuple[int, ...]]:
    """Replace ceil(rate * T) tokens with random different vocabulary tokens.

    Positions and replacements come from one seeded generator, so the same
    seed reproduces the same attack. Returns (tampered text, 0/1 labels).
    """
    if not 0 <= rate <= 1:
        raise ValueError("rate must be in [0, 1]")
    tokens = list(provider.tokenize(text))
    n = len(tokens)
    count = math.ceil(rate * n)
    rng = random.Random(seed)
    positions = set(rng.sample(range(n), count))
    labels = []
    for pos in range(n):
        if pos in positions:
            draw = rng.randrange(provider.vocab_size - 1)
            if draw >= tokens[pos]:
                draw += 1
            tokens[pos] = draw
            labels.append(1)
        else:
            labels.append(0)
    return provider.detokenize(tokens), tuple(labels)
