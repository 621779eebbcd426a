"""Core watermark transform.

Each generation step turns the next window of message bits into a token
choice: candidate tokens get contiguous integer segments of the code space
``[0, 2^width - 1]`` sized by their (exponent-weighted) probabilities, the
window value picks the segment that contains it, and the bits actually
committed are the longest common prefix of the segment endpoints. Because
segments tile the space exactly, replaying the same partition at extraction
inverts every step bit-for-bit.
"""
from __future__ import annotations

import hashlib
import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

from .bitstream import BitWindow, MessageBits, consume, read_window
from .errors import (
    EmptyDistribution,
    EmptyMessage,
    ExtractionShort,
    NegativeLambda,
    SpaceTooSmall,
    TokenNotInCandidates,
    WatermarkIncomplete,
)

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class TokenDistribution:
    """Provider output: token id -> probability for one conditioning context."""

    context_fingerprint: str
    entries: Mapping[int, float]

    def __post_init__(self):
        total = math.fsum(self.entries.values())
        # all-zero tables are representable; build_candidates rejects them
        if self.entries and total != 0.0 and abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"distribution sums to {total!r}, expected 1")
        if any(p < 0 for p in self.entries.values()):
            raise ValueError("negative probability")

    @cached_property
    def ordered(self) -> tuple[tuple[int, float], ...]:
        """Entries sorted by descending probability, ties by ascending id."""
        return tuple(sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0])))


@dataclass(frozen=True)
class CandidateSet:
    """Deterministically ordered, renormalized top candidates."""

    entries: tuple[tuple[int, float], ...]

    @property
    def k_eff(self) -> int:
        return len(self.entries)

    @property
    def token_ids(self) -> tuple[int, ...]:
        return tuple(tid for tid, _ in self.entries)


@dataclass(frozen=True)
class AllocationVector:
    """Per-candidate share of the code space, in CandidateSet order."""

    weights: tuple[float, ...]
    lam: float
    token_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.token_ids):
            raise ValueError("weights and token_ids must align")


@dataclass(frozen=True)
class SegmentTable:
    """Contiguous per-token segments tiling [0, 2^width_eff - 1]."""

    width_eff: int
    segments: tuple[tuple[int, int, int], ...]  # (token_id, begin, end)

    @cached_property
    def _begins(self) -> tuple[int, ...]:
        return tuple(seg[1] for seg in self.segments)

    @cached_property
    def _by_token(self) -> dict[int, tuple[int, int]]:
        return {tid: (b, e) for tid, b, e in self.segments}

    def segment_for_value(self, value: int) -> tuple[int, int, int]:
        idx = bisect_right(self._begins, value) - 1
        return self.segments[idx]

    def segment_for_token(self, token_id: int) -> tuple[int, int] | None:
        return self._by_token.get(token_id)


@dataclass(frozen=True)
class EmbedStepResult:
    """One step of the embed loop: the chosen token and the bits it commits."""

    token_id: int
    begin: int
    end: int
    embedded_bits: str
    p: int


@dataclass(frozen=True)
class EmbedStep(EmbedStepResult):
    position: int = 0
    width_eff: int = 0


@dataclass(frozen=True)
class WatermarkedText:
    token_ids: tuple[int, ...]
    rendered_text: str
    prompt_fingerprint: str


@dataclass(frozen=True)
class EmbedParams:
    lam: float
    epsilon: int
    top_k: int = 40
    max_tokens: int = 1024
    pad_to_max: bool = False

    def __post_init__(self):
        if self.epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ExtractParams:
    lam: float
    epsilon: int
    top_k: int
    length_a: int


@dataclass
class EmbedResult:
    text: WatermarkedText
    trace: list[EmbedStep]
    consumed_bits: int


def fingerprint_tokens(tokens: Sequence[int]) -> str:
    raw = ",".join(str(t) for t in tokens)
    return hashlib.sha256(raw.encode("ascii")).hexdigest()[:32]


def build_candidates(d: TokenDistribution, top_k: int, space_size: int) -> CandidateSet:
    """Keep the top_k positive-probability tokens, at most space_size of them.

    Truncating to space_size guarantees every surviving candidate can receive
    at least one code point. The kept probabilities are renormalized.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if space_size < 1:
        raise ValueError("space_size must be >= 1")
    positive = [(tid, p) for tid, p in d.ordered if p > 0.0]
    if not positive:
        raise EmptyDistribution(f"no positive-probability token (context {d.context_fingerprint})")
    kept = positive[: min(top_k, space_size)]
    total = math.fsum(p for _, p in kept)
    return CandidateSet(tuple((tid, p / total) for tid, p in kept))


def allocate(c: CandidateSet, lam: float) -> AllocationVector:
    """Exponent-weighted, normalized code-space shares.

    lam = 0 flattens to uniform; larger lam concentrates space on the
    high-probability candidates.
    """
    if lam < 0:
        raise NegativeLambda(f"lambda must be >= 0, got {lam}")
    powered = [p ** lam for _, p in c.entries]
    z = math.fsum(powered)
    return AllocationVector(tuple(x / z for x in powered), lam, c.token_ids)


def partition(a: AllocationVector, width_eff: int) -> SegmentTable:
    """Integer segment sizes by largest-remainder apportionment, floor 1 each.

    Sizes are floors of weight * 2^width lifted to a minimum of 1, the
    leftover units go to the largest fractional remainders (ties broken by
    ascending candidate index). If the floor-1 lifts overdraw the pool, units
    are reclaimed from the currently largest segments. Segments are laid out
    contiguously from 0 in candidate order and always tile the space exactly.
    """
    if width_eff < 1:
        raise ValueError("width_eff must be >= 1")
    n = len(a.weights)
    space = 1 << width_eff
    if n > space:
        raise SpaceTooSmall(f"{n} candidates cannot share {space} code points")
    raws = [w * space for w in a.weights]
    sizes = [int(raw) for raw in raws]
    rems = [raw - s for raw, s in zip(raws, sizes)]
    for i in range(n):
        if sizes[i] == 0:
            sizes[i] = 1
    spare = space - sum(sizes)
    if spare > 0:
        order = sorted(range(n), key=lambda i: (-rems[i], i))
        for i in order[:spare]:
            sizes[i] += 1
    else:
        for _ in range(-spare):
            j = max(range(n), key=lambda i: (sizes[i], -i))
            sizes[j] -= 1
    segments = []
    cursor = 0
    # candidate order, so the largest segments sit at the low code points
    for tid, size in zip(a.token_ids, sizes):
        segments.append((tid, cursor, cursor + size - 1))
        cursor += size
    assert cursor == space
    return SegmentTable(width_eff, tuple(segments))


def endpoint_prefix(begin: int, end: int, width: int) -> tuple[str, int]:
    """Longest common prefix of the endpoints as width-bit strings."""
    if begin == end:
        p = width
    else:
        p = width - (begin ^ end).bit_length()
    bits = format(begin, f"0{width}b")[:p]
    return bits, p


def select_token(t: SegmentTable, w: BitWindow) -> EmbedStepResult:
    """Pick the segment containing the window value; commit its endpoint prefix."""
    if w.width_eff != t.width_eff:
        raise ValueError("window width does not match table width")
    tid, begin, end = t.segment_for_value(w.value)
    bits, p = endpoint_prefix(begin, end, t.width_eff)
    return EmbedStepResult(token_id=tid, begin=begin, end=end, embedded_bits=bits, p=p)


def locate_segment(t: SegmentTable, token_id: int) -> tuple[int, int]:
    """The segment assigned to token_id, or TokenNotInCandidates."""
    seg = t.segment_for_token(token_id)
    if seg is None:
        raise TokenNotInCandidates(f"token {token_id} has no segment", position=-1)
    return seg


def allocation_variance(a: AllocationVector) -> float:
    """Population variance of the allocation weights."""
    n = len(a.weights)
    mean = math.fsum(a.weights) / n
    return math.fsum((w - mean) ** 2 for w in a.weights) / n


def argmax_token(d: TokenDistribution) -> int:
    """Highest-probability token, ties broken by ascending id."""
    for tid, p in d.ordered:
        if p > 0.0:
            return tid
    raise EmptyDistribution("no positive-probability token")


def candidates_for_context(provider, context: Sequence[int], top_k: int,
                           space_size: int) -> CandidateSet:
    """Same result as build_candidates(next_distribution(ctx), ...) but via
    the provider's top_candidates fast path."""
    pairs = provider.top_candidates(context, min(top_k, space_size))
    if not pairs:
        raise EmptyDistribution("no positive-probability token in context")
    total = math.fsum(p for _, p in pairs)
    return CandidateSet(tuple((tid, p / total) for tid, p in pairs))


def table_for_context(provider, context: Sequence[int], width: int,
                      lam: float, top_k: int) -> SegmentTable:
    """Distribution -> candidates -> allocation -> partition for one step."""
    cands = candidates_for_context(provider, context, top_k, 1 << width)
    alloc = allocate(cands, lam)
    return partition(alloc, width)


def embed(provider, prompt: Sequence[int], m: MessageBits,
          params: EmbedParams) -> EmbedResult:
    """Generate a token stream carrying all of ``m``.

    Runs the step loop until every message bit is consumed, then (optionally)
    pads to max_tokens with deterministic argmax continuation, which the
    extractor never reads because it stops at the message length.

    Raises WatermarkIncomplete (carrying the partial result) if max_tokens
    is reached with bits left over.
    """
    if m.length_a < 1:
        raise EmptyMessage("message has no bits")
    if m.cursor != 0:
        raise ValueError("embed expects an unconsumed message (cursor 0)")
    context = list(prompt)
    generated: list[int] = []
    trace: list[EmbedStep] = []
    prompt_fp = fingerprint_tokens(prompt)

    while not m.exhausted:
        if len(generated) >= params.max_tokens:
            partial = EmbedResult(
                text=WatermarkedText(tuple(generated),
                                     provider.detokenize(generated), prompt_fp),
                trace=trace,
                consumed_bits=m.cursor,
            )
            raise WatermarkIncomplete(
                f"{m.remaining} bits left after {params.max_tokens} tokens",
                consumed_bits=m.cursor, remaining_bits=m.remaining, partial=partial)
        width = min(params.epsilon, m.remaining)
        table = table_for_context(provider, context, width, params.lam, params.top_k)
        window = read_window(m, params.epsilon)
        step = select_token(table, window)
        trace.append(EmbedStep(token_id=step.token_id, begin=step.begin,
                               end=step.end, embedded_bits=step.embedded_bits,
                               p=step.p, position=len(generated), width_eff=width))
        generated.append(step.token_id)
        context.append(step.token_id)
        m = consume(m, step.p)

    if params.pad_to_max:
        while len(generated) < params.max_tokens:
            tok = argmax_token(provider.next_distribution(context))
            generated.append(tok)
            context.append(tok)

    text = WatermarkedText(tuple(generated), provider.detokenize(generated), prompt_fp)
    return EmbedResult(text=text, trace=trace, consumed_bits=m.cursor)


def extract(provider, watermarked, params: ExtractParams,
            prompt: Sequence[int]) -> MessageBits:
    """Replay the partition at each position and collect endpoint prefixes.

    ``watermarked`` may be a WatermarkedText or a raw token-id sequence.
    Inverse of embed() whenever provider, parameters and prompt match.
    """
    token_ids = getattr(watermarked, "token_ids", None)
    if token_ids is None:
        token_ids = tuple(watermarked)
    if params.length_a < 1:
        raise ValueError("length_a must be >= 1")
    context = list(prompt)
    recovered: list[int] = []
    for pos, tok in enumerate(token_ids):
        if len(recovered) >= params.length_a:
            break
        width = min(params.epsilon, params.length_a - len(recovered))
        table = table_for_context(provider, context, width, params.lam, params.top_k)
        seg = table.segment_for_token(tok)
        if seg is None:
            raise TokenNotInCandidates(
                f"token {tok} at position {pos} is outside the replayed candidates",
                position=pos)
        bits, _ = endpoint_prefix(seg[0], seg[1], width)
        recovered.extend(int(b) for b in bits)
        context.append(tok)
    if len(recovered) < params.length_a:
        raise ExtractionShort(
            f"recovered {len(recovered)} of {params.length_a} bits",
            recovered_bits=len(recovered), expected_bits=params.length_a)
    return MessageBits(tuple(recovered))


def trace_to_jsonl(trace: Sequence[EmbedStep]) -> str:
    """Per-step trace as JSON lines: position, token_id, begin, end, p."""
    lines = [
        json.dumps({"position": s.position, "token_id": s.token_id,
                    "begin": s.begin, "end": s.end, "p": s.p})
        for s in trace
    ]
    return "\n".join(lines) + ("\n" if lines else "")
