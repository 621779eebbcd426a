"""Message <-> bit-sequence conversion and windowed cursor access.

The watermark message travels as an ordered bit sequence with a consumption
cursor. Bytes are always emitted most-significant bit first; the same
convention is baked into window values, so embedder and extractor agree
without negotiation.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyMessage, MessageExhausted, OverConsume

#: identifier recorded in the cipher payload so future encodings can coexist
ENCODING_UTF8_MSB = "utf8/msb"


@dataclass(frozen=True)
class MessageBits:
    """An ordered bit sequence plus the index of the next unconsumed bit."""

    bits: tuple[int, ...]
    cursor: int = 0

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")
        if not 0 <= self.cursor <= len(self.bits):
            raise ValueError("cursor out of range")

    @property
    def length_a(self) -> int:
        return len(self.bits)

    @property
    def remaining(self) -> int:
        return len(self.bits) - self.cursor

    @property
    def exhausted(self) -> bool:
        return self.cursor == len(self.bits)

    def to_literal(self) -> str:
        """Render as a 0/1 string (the CLI bits-literal format)."""
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_literal(cls, literal: str) -> "MessageBits":
        """Parse a 0/1 string with no separators."""
        stripped = literal.strip()
        if not stripped:
            raise EmptyMessage("bits literal is empty")
        if any(c not in "01" for c in stripped):
            raise ValueError(f"bits literal may only contain 0 and 1: {stripped!r}")
        return cls(tuple(int(c) for c in stripped))


@dataclass(frozen=True)
class BitWindow:
    """A fixed-width read of message bits, interpreted MSB-first."""

    offset: int
    width_eff: int
    value: int

    def __post_init__(self):
        if self.width_eff < 1:
            raise ValueError("window width must be >= 1")
        if not 0 <= self.value < (1 << self.width_eff):
            raise ValueError("window value wider than width_eff")


def encode_message(text: str) -> MessageBits:
    """Convert text to its UTF-8 byte stream, each byte MSB first."""
    if text == "":
        raise EmptyMessage("cannot embed an empty message")
    bits = []
    for byte in text.encode("utf-8"):
        for shift in range(7, -1, -1):
            bits.append((byte >> shift) & 1)
    return MessageBits(tuple(bits))


def decode_message(m: MessageBits) -> tuple[str, bool]:
    """Decode whole bytes back to text.

    Returns ``(text, residue)``. ``residue`` is True when trailing bits do
    not form a whole byte or the bytes are not valid UTF-8; the decodable
    prefix is still returned.
    """
    n_bytes, n_spare = divmod(len(m.bits), 8)
    raw = bytearray()
    for i in range(n_bytes):
        byte = 0
        for b in m.bits[8 * i: 8 * i + 8]:
            byte = (byte << 1) | b
        raw.append(byte)
    try:
        text = raw.decode("utf-8")
        residue = n_spare != 0
    except UnicodeDecodeError:
        text = raw.decode("utf-8", errors="replace")
        residue = True
    return text, residue


def read_window(m: MessageBits, epsilon: int) -> BitWindow:
    """Read the next min(epsilon, remaining) bits without consuming them."""
    if epsilon < 1:
        raise ValueError("epsilon must be >= 1")
    if m.exhausted:
        raise MessageExhausted("no unconsumed bits left")
    width = min(epsilon, m.remaining)
    value = 0
    for b in m.bits[m.cursor: m.cursor + width]:
        value = (value << 1) | b
    return BitWindow(offset=m.cursor, width_eff=width, value=value)


def consume(m: MessageBits, p: int) -> MessageBits:
    """Advance the cursor by ``p`` bits; ``p = 0`` is a legal no-op."""
    if p < 0:
        raise ValueError("cannot consume a negative bit count")
    if m.cursor + p > m.length_a:
        raise OverConsume(
            f"consume({p}) from cursor {m.cursor} exceeds length {m.length_a}")
    return MessageBits(m.bits, m.cursor + p)
