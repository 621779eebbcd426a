"""segmark: deterministic multi-bit text watermarking.

Embeds an arbitrary bit message into a token stream drawn from any
deterministic next-token-distribution provider, extracts it exactly, gates
extraction behind an encrypted parameter envelope, and traces tampered
token positions.
"""
from .bitstream import (
    BitWindow,
    MessageBits,
    consume,
    decode_message,
    encode_message,
    read_window,
)
from .codec import (
    AllocationVector,
    CandidateSet,
    EmbedParams,
    EmbedResult,
    ExtractParams,
    SegmentTable,
    TokenDistribution,
    WatermarkedText,
    allocate,
    allocation_variance,
    build_candidates,
    embed,
    extract,
    locate_segment,
    partition,
    select_token,
)
from .permission import (
    CipherEnvelope,
    CipherPayload,
    KeyPair,
    keygen,
    open_envelope,
    seal,
    verify_and_extract,
)
from .providers import (
    NGramProvider,
    Provider,
    ProviderFingerprint,
    RemoteProvider,
    StaticProvider,
    train_ngram,
)

__version__ = "0.1.0"
