"""Entropy-ranked sentence selection and sentence-wise re-generation.

Partial embedding rewrites only the highest-entropy sentences of a base
document. Each selected sentence is regenerated by the codec using the
current document prefix (with earlier rewritten sentences already in place)
as context; everything else passes through byte-identical, including the
original inter-sentence whitespace. Extraction re-splits the received text
and replays only the sentences listed in the cipher payload.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

from .bitstream import MessageBits, consume, read_window
from .codec import (
    EmbedParams,
    EmbedStep,
    WatermarkedText,
    argmax_token,
    endpoint_prefix,
    fingerprint_tokens,
    select_token,
    table_for_context,
)
from .errors import ExtractionShort, TokenNotInCandidates, WatermarkIncomplete

TERMINALS = (".", "!", "?")

#: nominal cap on a regenerated sentence; a non-final sentence keeps going
#: past it until a terminal token lands, so the re-split stays aligned
SENTENCE_CAP = 64
HARD_CAP = 4 * SENTENCE_CAP

_BOUNDARY = re.compile(r"[.!?](?=\s)")


@dataclass
class SentenceSpan:
    """One sentence of a document plus its trailing whitespace."""

    index: int
    text: str
    trailing_ws: str
    char_start: int
    char_end: int  # end of sentence text, whitespace not included
    tok_start: int
    tok_end: int
    entropy: float | None = None

    @property
    def words(self) -> list[str]:
        return self.text.split()


def split_sentences(text: str) -> list[SentenceSpan]:
    """Split on terminal punctuation followed by whitespace.

    A trailing fragment with no terminal becomes its own span. Together the
    spans (text + trailing whitespace) reproduce the document exactly.
    """
    if not text:
        raise ValueError("cannot split an empty document")
    spans: list[SentenceSpan] = []
    prev = 0
    tok_cursor = 0

    def push(sent_end: int, ws_end: int) -> None:
        nonlocal prev, tok_cursor
        sent = text[prev:sent_end]
        n_words = len(sent.split())
        spans.append(SentenceSpan(
            index=len(spans), text=sent, trailing_ws=text[sent_end:ws_end],
            char_start=prev, char_end=sent_end,
            tok_start=tok_cursor, tok_end=tok_cursor + n_words))
        prev = ws_end
        tok_cursor += n_words

    for m in _BOUNDARY.finditer(text):
        cut = m.end()
        ws_end = cut
        while ws_end < len(text) and text[ws_end].isspace():
            ws_end += 1
        push(cut, ws_end)
    if prev < len(text):
        push(len(text), len(text))
    return spans


def shannon_entropy(entries) -> float:
    """Base-2 entropy of a probability table."""
    return -math.fsum(p * math.log2(p) for p in entries.values() if p > 0)


def sentence_entropy(provider, context: Sequence[int],
                     span_tokens: Sequence[int]) -> float:
    """Mean next-token entropy (bits/token) over the span's positions."""
    if not span_tokens:
        raise ValueError("span has no tokens")
    ctx = list(context)
    total = 0.0
    for tok in span_tokens:
        total += shannon_entropy(provider.next_distribution(ctx).entries)
        ctx.append(tok)
    return total / len(span_tokens)


def select_sentences(spans: Sequence[SentenceSpan], eta: float) -> list[int]:
    """Indices of the top ceil(eta * S) spans by entropy, in document order."""
    if not spans:
        raise ValueError("no spans to select from")
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    count = math.ceil(eta * len(spans))
    ranked = sorted(range(len(spans)),
                    key=lambda i: (-(spans[i].entropy or 0.0), i))
    return sorted(ranked[:count])


@dataclass
class PartialEmbedResult:
    text: WatermarkedText
    sentence_indices: tuple[int, ...]  # the regenerated (selected) sentences
    trace: list[EmbedStep]
    consumed_bits: int
    spans_total: int


def _best_terminal(provider, dist) -> int | None:
    """Most probable vocabulary token that ends with terminal punctuation."""
    for tid, p in dist.ordered:
        if p > 0 and provider.token_string(tid).endswith(TERMINALS):
            return tid
    return None


def _regenerate_sentence(provider, context: list[int], m: MessageBits,
                         params: EmbedParams, position_base: int,
                         is_final_span: bool):
    """Watermark tokens until a terminal-punctuation token ends the sentence.

    Message bits drive generation while any remain; afterwards the sentence
    is finished deterministically (argmax, steered onto the best terminal
    token once the cap nears) so the stream past the message never carries
    phantom bits. Returns (token_ids, steps, remaining_message).
    """
    tokens: list[int] = []
    steps: list[EmbedStep] = []
    while True:
        if not m.exhausted:
            width = min(params.epsilon, m.remaining)
            table = table_for_context(provider, context, width,
                                      params.lam, params.top_k)
            window = read_window(m, params.epsilon)
            step = select_token(table, window)
            steps.append(EmbedStep(
                token_id=step.token_id, begin=step.begin, end=step.end,
                embedded_bits=step.embedded_bits, p=step.p,
                position=position_base + len(tokens), width_eff=width))
            m = consume(m, step.p)
            tok = step.token_id
        else:
            d = provider.next_distribution(context)
            tok = argmax_token(d)
            if len(tokens) >= SENTENCE_CAP - 1:
                tok = _best_terminal(provider, d) or tok
        tokens.append(tok)
        context.append(tok)
        if provider.token_string(tok).endswith(TERMINALS):
            break
        if len(tokens) >= SENTENCE_CAP and m.exhausted and is_final_span:
            break  # nothing follows, alignment cannot break
        if len(tokens) >= HARD_CAP:
            if is_final_span:
                break
            raise WatermarkIncomplete(
                f"regenerated sentence reached {HARD_CAP} tokens without "
                f"terminal punctuation", consumed_bits=m.cursor,
                remaining_bits=m.remaining)
    return tokens, steps, m


def embed_partial(provider, base_text: str, m: MessageBits, eta: float,
                  params: EmbedParams,
                  prompt: Sequence[int] = ()) -> PartialEmbedResult:
    """Rewrite the ceil(eta * S) highest-entropy sentences to carry ``m``.

    Every selected sentence is regenerated; bits are consumed across them in
    document order, and once they run out the remaining selected sentences
    are regenerated without bits (the extractor stops at the message length
    and never reads them). Raises WatermarkIncomplete if bits remain after
    the last selected sentence.
    """
    spans = split_sentences(base_text)
    ctx = list(prompt)
    for span in spans:
        ids = provider.tokenize(span.text)
        span.entropy = sentence_entropy(provider, ctx, ids)
        ctx.extend(ids)
    selected = select_sentences(spans, eta)
    selected_set = set(selected)

    out_parts: list[str] = []
    trace: list[EmbedStep] = []
    doc_tokens: list[int] = []
    context = list(prompt)
    for span in spans:
        if span.index in selected_set:
            toks, steps, m = _regenerate_sentence(
                provider, context, m, params,
                position_base=len(doc_tokens),
                is_final_span=span.index == spans[-1].index)
            out_parts.append(provider.detokenize(toks))
            trace.extend(steps)
            doc_tokens.extend(toks)
        else:
            toks = list(provider.tokenize(span.text))
            out_parts.append(span.text)
            context.extend(toks)
            doc_tokens.extend(toks)
        out_parts.append(span.trailing_ws)
    if not m.exhausted:
        raise WatermarkIncomplete(
            f"{m.remaining} bits left after the last selected sentence",
            consumed_bits=m.cursor, remaining_bits=m.remaining)

    final_text = "".join(out_parts)
    text = WatermarkedText(tuple(doc_tokens), final_text, fingerprint_tokens(prompt))
    return PartialEmbedResult(text=text, sentence_indices=tuple(selected),
                              trace=trace, consumed_bits=m.cursor,
                              spans_total=len(spans))


def extract_partial(provider, text: str, payload) -> MessageBits:
    """Replay extraction inside the payload's sentence list, in its order."""
    if payload.mode != "partial" or not payload.sentence_indices:
        raise ValueError("payload is not a partial-mode parameter set")
    spans = split_sentences(text)
    span_tokens = [provider.tokenize(s.text) for s in spans]
    prefixes: list[tuple[int, ...]] = []
    acc: list[int] = []
    for toks in span_tokens:
        prefixes.append(tuple(acc))
        acc.extend(toks)
    prompt = provider.tokenize(payload.prompt) if payload.prompt else ()

    recovered: list[int] = []
    for k in payload.sentence_indices:
        if not 0 <= k < len(spans):
            raise ExtractionShort(
                f"sentence {k} from the payload does not exist in the text",
                recovered_bits=len(recovered), expected_bits=payload.length_a)
        context = list(prompt) + list(prefixes[k])
        for offset, tok in enumerate(span_tokens[k]):
            if len(recovered) >= payload.length_a:
                break
            width = min(payload.epsilon, payload.length_a - len(recovered))
            table = table_for_context(provider, context, width,
                                      payload.lam, payload.top_k)
            seg = table.segment_for_token(tok)
            if seg is None:
                raise TokenNotInCandidates(
                    f"token {tok} (sentence {k}, offset {offset}) is outside "
                    f"the replayed candidates",
                    position=spans[k].tok_start + offset, sentence_index=k)
            bits, _ = endpoint_prefix(seg[0], seg[1], width)
            recovered.extend(int(b) for b in bits)
            context.append(tok)
        if len(recovered) >= payload.length_a:
            break
    if len(recovered) < payload.length_a:
        raise ExtractionShort(
            f"recovered {len(recovered)} of {payload.length_a} bits",
            recovered_bits=len(recovered), expected_bits=payload.length_a)
    return MessageBits(tuple(recovered))
