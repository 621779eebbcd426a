import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from segmark.errors import (
    CorpusTooSmall,
    FormatError,
    ProtocolError,
    RemoteUnavailable,
    UnknownToken,
)
from segmark.providers import (
    EOT_TOKEN,
    NGramProvider,
    RemoteProvider,
    StaticProvider,
    remote_distribution,
    train_ngram,
)


class TestTrainNGram:
    def test_bigram_counting_no_smoothing(self):
        p = train_ngram("a b a b a b", order=1, smoothing_alpha=0.0)
        a, b = p.tokenize("a b")[0], p.tokenize("a b")[1]
        d = p.next_distribution([a])
        assert d.entries[b] == pytest.approx(1.0)

    def test_add_one_arithmetic_on_two_token_vocab(self):
        # counts a->b: 2, a->a: 0 over vocab {a, b}
        p = NGramProvider(order=1, alpha=1.0, vocab=["a", "b"],
                          counts={(): {0: 1, 1: 2}, (0,): {1: 2}})
        d = p.next_distribution([0])
        assert d.entries[1] == pytest.approx(3 / 4)
        assert d.entries[0] == pytest.approx(1 / 4)

    def test_too_small(self):
        with pytest.raises(CorpusTooSmall):
            train_ngram("a b c", order=3, smoothing_alpha=0.0)

    def test_vocabulary_includes_end_marker(self):
        p = train_ngram("a b a", order=1, smoothing_alpha=0.0)
        assert EOT_TOKEN in p.vocab

    def test_empty_context_uses_unigram(self):
        p = train_ngram("a a a b", order=2, smoothing_alpha=0.0)
        d = p.next_distribution([])
        a = p.lookup("a")
        assert d.entries[a] == pytest.approx(3 / 5)  # 3 of 4 words + <eot>

    def test_unseen_context_backs_off(self, ngram2_pure):
        tid = ngram2_pure.tokenize("car")[0]
        via_backoff = ngram2_pure.next_distribution([tid, tid])  # bigram never seen
        shorter = ngram2_pure.next_distribution([tid])
        assert via_backoff.entries == shorter.entries

    def test_oov_sentinel_in_context_is_tolerated(self, ngram2):
        d = ngram2.next_distribution([-1, -1])
        assert abs(sum(d.entries.values()) - 1) < 1e-9

    def test_invalid_context_id_rejected(self, ngram2):
        with pytest.raises(UnknownToken):
            ngram2.next_distribution([10 ** 9])


class TestDeterminismAndPersistence:
    def test_identical_calls_bit_identical(self, ngram2):
        ctx = ngram2.tokenize("the car")
        d1 = ngram2.next_distribution(ctx)
        d2 = ngram2.next_distribution(list(ctx))
        assert d1.entries == d2.entries

    def test_save_load_preserves_everything(self, tmp_path, corpus_text):
        p = train_ngram(corpus_text[:2000], order=2, smoothing_alpha=0.5)
        path = tmp_path / "model.json"
        p.save(path)
        q = NGramProvider.load(path)
        assert q.fingerprint() == p.fingerprint()
        ctx = p.tokenize("the")
        assert q.next_distribution(ctx).entries == p.next_distribution(ctx).entries
        assert path.read_text().find("NGRM") != -1

    def test_load_rejects_bad_magic(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"magic": "NOPE"}))
        with pytest.raises(FormatError):
            NGramProvider.load(bad)

    def test_distributions_normalized(self, ngram2, corpus_text):
        for ctx_text in ["the", "a busy road.", "meanwhile ,"]:
            ctx = ngram2.tokenize(ctx_text)
            total = sum(ngram2.next_distribution(ctx).entries.values())
            assert abs(total - 1) < 1e-9

    def test_dither_is_deterministic_and_context_unique(self, ngram2):
        ctx = ngram2.tokenize("the car")
        again = ngram2.next_distribution(ctx)
        assert ngram2.next_distribution(ctx).entries == again.entries
        longer = ngram2.next_distribution(list(ctx) + [ctx[0]] + list(ctx))
        shorter = ngram2.next_distribution(ctx)
        # same suffix, different full context: the conditionals must differ
        assert longer.entries != shorter.entries

    def test_top_candidates_matches_full_distribution(self, ngram2):
        from segmark.codec import build_candidates, candidates_for_context
        for text in ["the car", "a busy road.", "when that sensor"]:
            ctx = ngram2.tokenize(text)
            for k, space in [(40, 1 << 16), (40, 8), (5, 1 << 4), (70, 1 << 12)]:
                via_fast = candidates_for_context(ngram2, ctx, k, space)
                via_full = build_candidates(ngram2.next_distribution(ctx),
                                            k, space)
                assert via_fast == via_full

    def test_dither_round_trips_through_save(self, tmp_path, corpus_text):
        p = train_ngram(corpus_text[:3000], 2, 0.05, dither=0.02)
        p.save(tmp_path / "d.json")
        q = NGramProvider.load(tmp_path / "d.json")
        assert q.dither == 0.02
        assert q.fingerprint() == p.fingerprint()
        ctx = p.tokenize("the")
        assert q.next_distribution(ctx).entries == p.next_distribution(ctx).entries


class TestTokenization:
    def test_round_trip(self, ngram2):
        s = "the car stops quickly."
        assert ngram2.detokenize(ngram2.tokenize(s)) == s

    def test_unknown_word(self, ngram2):
        with pytest.raises(UnknownToken):
            ngram2.tokenize("zzz-not-a-word")

    def test_unknown_id(self, ngram2):
        with pytest.raises(UnknownToken):
            ngram2.detokenize([10 ** 9])


class TestStaticProvider:
    def test_ignores_context(self, static4):
        assert static4.next_distribution([]).entries == \
            static4.next_distribution([0, 1, 2]).entries

    def test_normalizes_weights(self):
        p = StaticProvider([2.0, 1.0, 1.0])
        assert p.next_distribution([]).entries[0] == pytest.approx(0.5)

    def test_load(self, tmp_path):
        path = tmp_path / "static.json"
        path.write_text(json.dumps({"probs": [0.5, 0.5], "vocab": ["x", "y"]}))
        p = StaticProvider.load(path)
        assert p.vocab == ("x", "y")


# --- remote wire protocol -------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    canned: dict = {}

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        request = json.loads(self.rfile.read(length))
        assert "context_tokens" in request and "top_k" in request
        body = json.dumps(self.canned).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def remote_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/logits", _Handler
    server.shutdown()


class TestRemote:
    def test_well_formed_response(self, remote_server):
        url, handler = remote_server
        handler.canned = {"entries": [{"id": 0, "prob": 0.6},
                                      {"id": 3, "prob": 0.4}]}
        d = remote_distribution(url, [1, 2], top_k=5)
        assert d.entries == pytest.approx({0: 0.6, 3: 0.4})

    def test_renormalizes_within_band(self, remote_server):
        url, handler = remote_server
        handler.canned = {"entries": [{"id": 0, "prob": 0.505},
                                      {"id": 1, "prob": 0.5}]}
        d = remote_distribution(url, [])
        assert sum(d.entries.values()) == pytest.approx(1.0)

    def test_missing_prob_field(self, remote_server):
        url, handler = remote_server
        handler.canned = {"entries": [{"id": 0}]}
        with pytest.raises(ProtocolError):
            remote_distribution(url, [])

    def test_bad_sum_rejected(self, remote_server):
        url, handler = remote_server
        handler.canned = {"entries": [{"id": 0, "prob": 0.5}]}
        with pytest.raises(ProtocolError):
            remote_distribution(url, [])

    def test_unreachable(self):
        with pytest.raises(RemoteUnavailable):
            remote_distribution("http://127.0.0.1:9/logits", [], timeout=0.5)

    def test_provider_wrapper(self, remote_server):
        url, handler = remote_server
        handler.canned = {"entries": [{"id": 0, "prob": 1.0}]}
        p = RemoteProvider(url, vocab=["only"])
        assert p.next_distribution([]).entries == {0: 1.0}
        assert p.detokenize([0]) == "only"

    def test_wrapper_without_vocab_cannot_tokenize(self, remote_server):
        url, _ = remote_server
        p = RemoteProvider(url)
        with pytest.raises(UnknownToken):
            p.tokenize("hello")
