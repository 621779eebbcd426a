"""Operator command line: keygen / embed / extract / trace / attack / eval /
train-provider.

Machine-readable JSON goes to stdout; diagnostics go to stderr. Exit codes
are stable:

    0  success
    2  usage or validation error (bad algorithm, corpus too small, ...)
    3  I/O failure (unreadable input, output exists without --force)
    4  message did not fit in the token budget
    5  provider failure (unknown token, remote endpoint trouble)
    6  permission failure (wrong key, tampered or malformed envelope,
       provider fingerprint mismatch)
    7  replay hit a token outside the candidates (tampering signal)
    8  text ended before the full message was recovered
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import metrics, tamper
from .bitstream import MessageBits, decode_message, encode_message
from .codec import EmbedParams, trace_to_jsonl
from .errors import (
    CorpusTooSmall,
    EmptyDistribution,
    ExtractionShort,
    FingerprintMismatch,
    FormatError,
    IntegrityError,
    ProtocolError,
    RemoteTimeout,
    RemoteUnavailable,
    SegmarkError,
    TokenNotInCandidates,
    UnknownToken,
    UnsupportedAlgorithm,
    VerificationFailed,
    WatermarkIncomplete,
)
from .partial import embed_partial
from .permission import (
    CipherPayload,
    keygen,
    load_private_key,
    load_public_key,
    open_envelope,
    save_private_key,
    save_public_key,
    seal,
    verify_and_extract,
)
from .providers import NGramProvider, RemoteProvider, StaticProvider, train_ngram
from .codec import embed as embed_full

PROVIDER_ENV = "SEGMARK_PROVIDER"

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INCOMPLETE = 4
EXIT_PROVIDER = 5
EXIT_VERIFY = 6
EXIT_TAMPER = 7
EXIT_SHORT = 8

_PROVIDER_ERRORS = (UnknownToken, RemoteUnavailable, RemoteTimeout,
                    ProtocolError, EmptyDistribution)
_VERIFY_ERRORS = (VerificationFailed, IntegrityError, FormatError,
                  FingerprintMismatch)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_provider(spec: str | None):
    spec = spec or os.environ.get(PROVIDER_ENV)
    if not spec:
        raise CliError(EXIT_USAGE,
                       f"no provider given (flag --provider or ${PROVIDER_ENV})")
    kind, _, rest = spec.partition(":")
    try:
        if kind == "remote":
            return RemoteProvider(rest)
        if kind == "static":
            return StaticProvider.load(_must_exist(rest))
        if kind == "ngram":
            return NGramProvider.load(_must_exist(rest))
        # bare path defaults to an n-gram model file
        return NGramProvider.load(_must_exist(spec))
    except FormatError as e:
        raise CliError(EXIT_PROVIDER, f"cannot load provider: {e}")


def _must_exist(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_IO, f"no such file: {path}")
    return p


def _read_text(path: str | None) -> str:
    if path is None:
        return ""
    return _must_exist(path).read_text(encoding="utf-8")


def _write_guarded(path: str, data: bytes | str, force: bool) -> None:
    p = Path(path)
    if p.exists() and not force:
        raise CliError(EXIT_IO, f"{path} exists; pass --force to overwrite")
    if isinstance(data, str):
        p.write_text(data, encoding="utf-8")
    else:
        p.write_bytes(data)


def _parse_message(raw: str) -> tuple[MessageBits, str]:
    if raw.startswith("bits:"):
        return MessageBits.from_literal(raw[len("bits:"):]), "bits"
    return encode_message(raw), "text"


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2))


# --- subcommands ---------------------------------------------------------

def cmd_keygen(args) -> int:
    try:
        pair = keygen(args.algo)
    except UnsupportedAlgorithm as e:
        raise CliError(EXIT_USAGE, str(e))
    for path in (args.out_pub, args.out_priv):
        if Path(path).exists() and not args.force:
            raise CliError(EXIT_IO, f"{path} exists; pass --force to overwrite")
    save_public_key(pair.public_key, args.out_pub)
    save_private_key(pair.private_key, args.out_priv)
    _emit({"algorithm": pair.algorithm, "public_key": args.out_pub,
           "private_key": args.out_priv})
    return 0


def cmd_embed(args) -> int:
    provider = _load_provider(args.provider)
    pubkey = load_public_key(_must_exist(args.pubkey))
    message, _ = _parse_message(args.message)
    prompt_text = _read_text(args.prompt).strip()
    prompt = provider.tokenize(prompt_text) if prompt_text else ()
    params = EmbedParams(lam=args.lam, epsilon=args.epsilon,
                         top_k=args.top_k, max_tokens=args.max_tokens)
    fp = provider.fingerprint()

    if args.eta < 1.0:
        base_doc = metrics._argmax_document(provider, prompt, args.max_tokens)
        result = embed_partial(provider, base_doc, message, args.eta, params, prompt)
        payload = CipherPayload(
            prompt=prompt_text, epsilon=args.epsilon, lam=args.lam,
            top_k=args.top_k, eta=args.eta, mode="partial",
            length_a=message.length_a, provider_fingerprint=fp,
            sentence_indices=result.sentence_indices)
    else:
        result = embed_full(provider, prompt, message, params)
        payload = CipherPayload(
            prompt=prompt_text, epsilon=args.epsilon, lam=args.lam,
            top_k=args.top_k, eta=1.0, mode="full",
            length_a=message.length_a, provider_fingerprint=fp)

    envelope = seal(payload, pubkey)
    _write_guarded(args.out_text, result.text.rendered_text, args.force)
    _write_guarded(args.out_cipher, envelope.to_bytes(), args.force)
    if args.out_trace:
        _write_guarded(args.out_trace, trace_to_jsonl(result.trace), args.force)
    tokens = len(result.text.token_ids)
    _emit({"WL": result.consumed_bits, "token_count": tokens,
           "payload": metrics.payload(result.consumed_bits, tokens),
           "mode": payload.mode, "eta": args.eta,
           "out_text": args.out_text, "out_cipher": args.out_cipher})
    return 0


def cmd_extract(args) -> int:
    provider = _load_provider(args.provider)
    privkey = load_private_key(_must_exist(args.privkey))
    text = _read_text(args.text)
    envelope = _must_exist(args.cipher).read_bytes()
    bits = verify_and_extract(text, envelope, privkey, provider)
    message, residue = decode_message(bits)
    _emit({"bits": bits.to_literal(), "message": message, "residue": residue,
           "length_a": bits.length_a})
    return 0


def cmd_trace(args) -> int:
    provider = _load_provider(args.provider)
    text = _read_text(args.text)
    prompt_text = _read_text(args.prompt).strip()
    prompt = provider.tokenize(prompt_text) if prompt_text else ()
    report = tamper.trace(provider, text, prompt, args.top_k)
    doc = {
        "top_k": args.top_k,
        "positions": [{"position": r.position, "word": r.word,
                       "rank": r.rank, "tp": r.tp} for r in report.records],
    }
    if args.labels:
        labels = json.loads(_must_exist(args.labels).read_text())
        if len(labels) != len(report.records):
            raise CliError(EXIT_USAGE,
                           f"{len(labels)} labels for {len(report)} positions")
        doc["fineness"] = tamper.fineness(report, labels)
        doc["false_positive_rate"] = tamper.false_positive_rate(report, labels)
    _emit(doc)
    return 0


def cmd_attack(args) -> int:
    provider = _load_provider(args.provider)
    text = _read_text(args.text)
    tampered, labels = tamper.substitute_attack(text, args.rate, args.seed,
                                                provider)
    _write_guarded(args.out_text, tampered, args.force)
    if args.out_labels:
        _write_guarded(args.out_labels, json.dumps(list(labels)), args.force)
    _emit({"seed": args.seed, "rate": args.rate,
           "replaced": int(sum(labels)), "tokens": len(labels),
           "out_text": args.out_text})
    return 0


def cmd_eval(args) -> int:
    provider = _load_provider(args.provider)
    grid = json.loads(_read_text(args.grid) if Path(args.grid).exists()
                      else args.grid)
    prompts = []
    if args.corpus:
        corpus_text = _read_text(args.corpus)
        from .partial import split_sentences
        for span in split_sentences(corpus_text)[:50]:
            try:
                prompts.append(provider.tokenize(span.text))
            except UnknownToken:
                continue
    rows = metrics.sweep(grid, prompts, provider, args.trials, seed=args.seed,
                         top_k=args.top_k)
    _write_guarded(args.out_csv, metrics.sweep_to_csv(rows), args.force)
    _write_guarded(args.out_json, metrics.sweep_to_json(rows), args.force)
    _emit({"seed": args.seed, "cells": len(rows), "out_csv": args.out_csv,
           "out_json": args.out_json})
    return 0


def cmd_train_provider(args) -> int:
    corpus = _read_text(args.corpus)
    try:
        provider = train_ngram(corpus, args.order, args.alpha,
                               dither=args.dither)
    except CorpusTooSmall as e:
        raise CliError(EXIT_USAGE, str(e))
    provider.save(args.out)
    fp = provider.fingerprint()
    _emit({"out": args.out, "order": args.order, "alpha": args.alpha,
           "dither": args.dither, "vocab_size": fp.vocab_size,
           "content_hash": fp.content_hash})
    return 0


# --- wiring --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="segmark", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a keypair")
    p.add_argument("--algo", default="rsa2048")
    p.add_argument("--out-pub", required=True)
    p.add_argument("--out-priv", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("embed", help="embed a message and seal the parameters")
    p.add_argument("--provider")
    p.add_argument("--prompt", help="file with the prompt text")
    p.add_argument("--message", required=True,
                   help="message text, or raw bits with a bits: prefix")
    p.add_argument("--pubkey", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--epsilon", type=int, default=16)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--max-tokens", type=int, default=1024)
    p.add_argument("--out-text", required=True)
    p.add_argument("--out-cipher", required=True)
    p.add_argument("--out-trace")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="verify permission and extract")
    p.add_argument("--provider")
    p.add_argument("--text", required=True)
    p.add_argument("--cipher", required=True)
    p.add_argument("--privkey", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("trace", help="score per-position tampering probability")
    p.add_argument("--provider")
    p.add_argument("--text", required=True)
    p.add_argument("--prompt", help="file with the generation prompt, if any")
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--labels", help="JSON list of 0/1 ground-truth labels")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("attack", help="seeded random substitution attack")
    p.add_argument("--provider")
    p.add_argument("--text", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-text", required=True)
    p.add_argument("--out-labels")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="parameter sweep; writes CSV and JSON")
    p.add_argument("--provider")
    p.add_argument("--grid", required=True,
                   help='JSON file or literal, e.g. {"lambda":[1.0],"epsilon":[16]}')
    p.add_argument("--corpus", help="text file supplying prompts")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--out-csv", default="sweep.csv")
    p.add_argument("--out-json", default="sweep.json")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-provider", help="train and save an n-gram model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--dither", type=float, default=0.05,
                   help="full-context perturbation strength; keeps the "
                        "conditionals unique per position (0 disables)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_provider)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except WatermarkIncomplete as e:
        print(f"error: watermark incomplete: {e} "
              f"(remaining bits: {e.remaining_bits})", file=sys.stderr)
        return EXIT_INCOMPLETE
    except TokenNotInCandidates as e:
        print(f"error: tampering signal at position {e.position}: {e}",
              file=sys.stderr)
        return EXIT_TAMPER
    except ExtractionShort as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHORT
    except _VERIFY_ERRORS as e:
        print(f"error: verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except _PROVIDER_ERRORS as e:
        print(f"error: provider failure: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except (CorpusTooSmall, UnsupportedAlgorithm, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SegmarkError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
