"""Keypairs and the encrypted parameter envelope that gates extraction.

The extraction parameters (prompt, lambda, epsilon, eta, sentence order,
message bit length, provider identity) are sealed with hybrid authenticated
encryption: the payload is AES-256-GCM encrypted under a fresh symmetric
key, and that key is RSA-OAEP wrapped to the recipient. Without the private
key the library exposes no parameter set at all.

Envelope file layout (all integers little-endian):

    magic "ITSM" | u8 version | u8 suite id | u16 len + wrapped-key blob |
    12-byte nonce | u32 len + ciphertext | 16-byte GCM tag

The wrapped-key blob is the RSA ciphertext followed by its CRC32, so a
corrupted blob is reported as tampering rather than as a wrong key.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .bitstream import ENCODING_UTF8_MSB, MessageBits
from .codec import ExtractParams, WatermarkedText, extract
from .errors import (
    FingerprintMismatch,
    FormatError,
    IntegrityError,
    SerializationError,
    UnsupportedAlgorithm,
    VerificationFailed,
)
from .providers import ProviderFingerprint

MAGIC = b"ITSM"
FORMAT_VERSION = 1
SUITE_RSA_OAEP_AESGCM = 1

KEY_ALGORITHMS = {"rsa2048": 2048, "rsa3072": 3072}

_OAEP = padding.OAEP(mgf=padding.MGF1(algorithm=hashes.SHA256()),
                     algorithm=hashes.SHA256(), label=None)


@dataclass
class KeyPair:
    algorithm: str
    public_key: rsa.RSAPublicKey
    private_key: rsa.RSAPrivateKey


def keygen(algorithm: str = "rsa2048") -> KeyPair:
    """Fresh keypair for the given algorithm id."""
    bits = KEY_ALGORITHMS.get(algorithm)
    if bits is None:
        raise UnsupportedAlgorithm(
            f"unknown algorithm {algorithm!r}; supported: {sorted(KEY_ALGORITHMS)}")
    private = rsa.generate_private_key(public_exponent=65537, key_size=bits)
    return KeyPair(algorithm, private.public_key(), private)


def save_public_key(key: rsa.RSAPublicKey, path: str | Path) -> None:
    Path(path).write_bytes(key.public_bytes(
        serialization.Encoding.PEM,
        serialization.PublicFormat.SubjectPublicKeyInfo))


def save_private_key(key: rsa.RSAPrivateKey, path: str | Path) -> None:
    """Explicit export; the PKCS8 PEM is written unencrypted."""
    Path(path).write_bytes(key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption()))


def load_public_key(path: str | Path) -> rsa.RSAPublicKey:
    try:
        return serialization.load_pem_public_key(Path(path).read_bytes())
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot load public key: {e}") from e


def load_private_key(path: str | Path) -> rsa.RSAPrivateKey:
    try:
        return serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    except (OSError, ValueError, TypeError) as e:
        raise FormatError(f"cannot load private key: {e}") from e


@dataclass(frozen=True)
class CipherPayload:
    """The decrypted extraction parameter set."""

    prompt: str
    epsilon: int
    lam: float
    top_k: int
    eta: float
    mode: str
    length_a: int
    provider_fingerprint: ProviderFingerprint
    sentence_indices: tuple[int, ...] = ()
    message_encoding: str = ENCODING_UTF8_MSB
    version: int = 1

    def __post_init__(self):
        if self.epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")
        if self.length_a < 1:
            raise ValueError("length_a must be >= 1")
        if self.mode not in ("full", "partial"):
            raise ValueError(f"mode must be full or partial, got {self.mode!r}")
        if (self.mode == "full") != (len(self.sentence_indices) == 0):
            raise ValueError("sentence_indices must be empty exactly in full mode")

    def to_canonical_bytes(self) -> bytes:
        doc = {
            "version": self.version,
            "prompt": self.prompt,
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "top_k": self.top_k,
            "eta": self.eta,
            "mode": self.mode,
            "sentence_indices": list(self.sentence_indices),
            "length_a": self.length_a,
            "provider_fingerprint": self.provider_fingerprint.as_dict(),
            "message_encoding": self.message_encoding,
        }
        try:
            return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                              ensure_ascii=True).encode("ascii")
        except (TypeError, ValueError) as e:
            raise SerializationError(f"payload not serializable: {e}") from e

    @classmethod
    def from_canonical_bytes(cls, raw: bytes) -> "CipherPayload":
        try:
            doc = json.loads(raw.decode("utf-8"))
            return cls(
                prompt=doc["prompt"],
                epsilon=int(doc["epsilon"]),
                lam=float(doc["lambda"]),
                top_k=int(doc["top_k"]),
                eta=float(doc["eta"]),
                mode=doc["mode"],
                length_a=int(doc["length_a"]),
                provider_fingerprint=ProviderFingerprint.from_dict(
                    doc["provider_fingerprint"]),
                sentence_indices=tuple(int(i) for i in doc["sentence_indices"]),
                message_encoding=doc["message_encoding"],
                version=int(doc["version"]),
            )
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as e:
            raise SerializationError(f"payload does not parse: {e}") from e


@dataclass(frozen=True)
class CipherEnvelope:
    """Sealed container; see the module docstring for the byte layout."""

    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    tag: bytes
    version: int = FORMAT_VERSION
    suite: int = SUITE_RSA_OAEP_AESGCM

    def to_bytes(self) -> bytes:
        return (MAGIC
                + struct.pack("<BBH", self.version, self.suite, len(self.wrapped_key))
                + self.wrapped_key
                + self.nonce
                + struct.pack("<I", len(self.ciphertext))
                + self.ciphertext
                + self.tag)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CipherEnvelope":
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise FormatError("bad magic; not a sealed envelope")
        try:
            version, suite, klen = struct.unpack_from("<BBH", raw, 4)
        except struct.error as e:
            raise FormatError("truncated envelope header") from e
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported envelope version {version}")
        if suite != SUITE_RSA_OAEP_AESGCM:
            raise FormatError(f"unsupported cipher suite {suite}")
        off = 8
        if len(raw) < off + klen + 12 + 4:
            raise FormatError("truncated envelope (wrapped key / nonce)")
        wrapped = raw[off:off + klen]
        off += klen
        nonce = raw[off:off + 12]
        off += 12
        (clen,) = struct.unpack_from("<I", raw, off)
        off += 4
        if len(raw) != off + clen + 16:
            raise FormatError("envelope length does not match its headers")
        ciphertext = raw[off:off + clen]
        tag = raw[off + clen:]
        return cls(wrapped, nonce, ciphertext, tag, version, suite)

    def _aad(self) -> bytes:
        return (MAGIC
                + struct.pack("<BBH", self.version, self.suite, len(self.wrapped_key))
                + self.wrapped_key + self.nonce)


def seal(payload: CipherPayload, pubkey: rsa.RSAPublicKey) -> CipherEnvelope:
    """Serialize canonically and encrypt under a fresh wrapped symmetric key."""
    data = payload.to_canonical_bytes()
    sym = AESGCM.generate_key(bit_length=256)
    nonce = os.urandom(12)
    rsa_ct = pubkey.encrypt(sym, _OAEP)
    wrapped = rsa_ct + struct.pack("<I", zlib.crc32(rsa_ct))
    env = CipherEnvelope(wrapped_key=wrapped, nonce=nonce, ciphertext=b"", tag=b"")
    ct_and_tag = AESGCM(sym).encrypt(nonce, data, env._aad())
    return CipherEnvelope(wrapped_key=wrapped, nonce=nonce,
                          ciphertext=ct_and_tag[:-16], tag=ct_and_tag[-16:])


def open_envelope(envelope: CipherEnvelope | bytes,
                  privkey: rsa.RSAPrivateKey) -> CipherPayload:
    """Decrypt atomically: the exact sealed payload or an error, never parts.

    Raises FormatError for a malformed container, IntegrityError when the
    sealed bytes were modified, VerificationFailed when the key is wrong.
    """
    env = (CipherEnvelope.from_bytes(envelope)
           if isinstance(envelope, (bytes, bytearray)) else envelope)
    if len(env.wrapped_key) < 5:
        raise FormatError("wrapped key blob too short")
    rsa_ct, crc_raw = env.wrapped_key[:-4], env.wrapped_key[-4:]
    if struct.pack("<I", zlib.crc32(rsa_ct)) != crc_raw:
        raise IntegrityError("wrapped key blob was modified")
    try:
        sym = privkey.decrypt(rsa_ct, _OAEP)
    except ValueError as e:
        raise VerificationFailed("private key does not unwrap this envelope") from e
    if len(sym) != 32:
        raise VerificationFailed("unwrapped key has the wrong size")
    try:
        data = AESGCM(sym).decrypt(env.nonce, env.ciphertext + env.tag, env._aad())
    except InvalidTag as e:
        raise IntegrityError("envelope failed authentication") from e
    return CipherPayload.from_canonical_bytes(data)


def verify_and_extract(watermarked, envelope: CipherEnvelope | bytes,
                       privkey: rsa.RSAPrivateKey, provider) -> MessageBits:
    """Open the envelope, check the provider identity, then extract.

    ``watermarked`` is a WatermarkedText or the received text itself (partial
    mode needs the text, since sentence boundaries are re-derived from it).
    """
    payload = open_envelope(envelope, privkey)
    fp = provider.fingerprint()
    if fp != payload.provider_fingerprint:
        raise FingerprintMismatch(
            f"provider {fp.algorithm}/{fp.content_hash[:12]} does not match "
            f"the sealed fingerprint")
    prompt = provider.tokenize(payload.prompt) if payload.prompt else ()
    if payload.mode == "partial":
        from .partial import extract_partial
        text = watermarked.rendered_text if isinstance(watermarked, WatermarkedText) \
            else watermarked
        return extract_partial(provider, text, payload)
    params = ExtractParams(lam=payload.lam, epsilon=payload.epsilon,
                           top_k=payload.top_k, length_a=payload.length_a)
    if isinstance(watermarked, str):
        watermarked = provider.tokenize(watermarked)
    return extract(provider, watermarked, params, prompt)
