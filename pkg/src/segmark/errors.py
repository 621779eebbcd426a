"""Exception taxonomy shared by all segmark modules."""
from __future__ import annotations


class SegmarkError(Exception):
    """Base class for every error raised by this package."""


# --- bitstream ---------------------------------------------------------

class EmptyMessage(SegmarkError):
    """The message to embed is empty."""


class MessageExhausted(SegmarkError):
    """A window was requested but every message bit is already consumed."""


class OverConsume(SegmarkError):
    """Consuming the requested bit count would move the cursor past the end."""


# --- codec -------------------------------------------------------------

class EmptyDistribution(SegmarkError):
    """No token in the distribution has positive probability."""


class NegativeLambda(SegmarkError):
    """The allocation weight exponent must be >= 0."""


class SpaceTooSmall(SegmarkError):
    """More candidates than code points; cannot give each a segment."""


class TokenNotInCandidates(SegmarkError):
    """An observed token is outside the replayed candidate set.

    Signals tampering or a provider mismatch. ``position`` is the
    0-based token index at which replay failed; ``sentence_index`` is set
    when the failure occurred inside partial-mode extraction.
    """

    def __init__(self, message: str, position: int, sentence_index: int | None = None):
        super().__init__(message)
        self.position = position
        self.sentence_index = sentence_index


class WatermarkIncomplete(SegmarkError):
    """The token budget ran out with message bits left to embed.

    Carries the partial result so callers can inspect how far embedding got.
    """

    def __init__(self, message: str, consumed_bits: int, remaining_bits: int,
                 partial=None):
        super().__init__(message)
        self.consumed_bits = consumed_bits
        self.remaining_bits = remaining_bits
        self.partial = partial


class ExtractionShort(SegmarkError):
    """The text ended before the full message length was recovered."""

    def __init__(self, message: str, recovered_bits: int, expected_bits: int):
        super().__init__(message)
        self.recovered_bits = recovered_bits
        self.expected_bits = expected_bits


# --- providers ---------------------------------------------------------

class UnknownToken(SegmarkError):
    """A token (string or id) is not part of the provider vocabulary."""


class CorpusTooSmall(SegmarkError):
    """The training corpus does not yield enough tokens for the order."""


class RemoteUnavailable(SegmarkError):
    """The remote logits endpoint could not be reached."""


class RemoteTimeout(SegmarkError):
    """The remote logits endpoint did not answer in time."""


class ProtocolError(SegmarkError):
    """The remote endpoint returned a malformed or non-normalizable reply."""


# --- permission --------------------------------------------------------

class UnsupportedAlgorithm(SegmarkError):
    """Requested key algorithm id is not supported."""


class SerializationError(SegmarkError):
    """The cipher payload could not be serialized or parsed."""


class VerificationFailed(SegmarkError):
    """The private key does not open this envelope."""


class IntegrityError(SegmarkError):
    """The envelope bytes were modified after sealing."""


class FormatError(SegmarkError):
    """The envelope file is not a valid sealed container."""


class FingerprintMismatch(SegmarkError):
    """The supplied provider differs from the one recorded at embed time."""


# --- metrics / tamper --------------------------------------------------

class LengthMismatch(SegmarkError):
    """Two per-position sequences that must align have different lengths."""


class ZeroProbability(SegmarkError):
    """Perplexity undefined: the provider assigned probability zero."""
