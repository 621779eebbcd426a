"""CLI pipeline tests: every command runs in-process via cli.main()."""
import json

import pytest

from segmark.cli import main

from conftest import HashProvider  # noqa: F401  (fixture module import)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """train-provider + keygen once; the demo corpus is a corpus slice."""
    ws = tmp_path_factory.mktemp("cliws")
    from importlib import resources
    corpus = resources.files("segmark").joinpath("data/corpus.txt").read_text("utf-8")
    (ws / "corpus.txt").write_text(corpus, encoding="utf-8")
    (ws / "prompt.txt").write_text("the car", encoding="utf-8")
    assert main(["train-provider", "--corpus", str(ws / "corpus.txt"),
                 "--order", "2", "--alpha", "0.05",
                 "--out", str(ws / "model.json")]) == 0
    assert main(["keygen", "--out-pub", str(ws / "pub.pem"),
                 "--out-priv", str(ws / "priv.pem")]) == 0
    return ws


def provider_arg(ws):
    return f"ngram:{ws / 'model.json'}"


def run_embed(ws, capsys, message="salute", eta="1.0", extra=()):
    code = main(["embed", "--provider", provider_arg(ws),
                 "--prompt", str(ws / "prompt.txt"),
                 "--message", message, "--pubkey", str(ws / "pub.pem"),
                 "--lambda", "1.0", "--epsilon", "8", "--eta", eta,
                 "--out-text", str(ws / "wm.txt"),
                 "--out-cipher", str(ws / "wm.cipher"),
                 "--force", *extra])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


class TestPipeline:
    def test_embed_writes_outputs(self, workspace, capsys):
        code, doc = run_embed(workspace, capsys)
        assert code == 0
        assert (workspace / "wm.txt").exists()
        assert (workspace / "wm.cipher").read_bytes()[:4] == b"ITSM"
        assert doc["WL"] == len("salute") * 8
        assert doc["payload"] == pytest.approx(doc["WL"] / doc["token_count"])

    def test_extract_round_trip(self, workspace, capsys):
        run_embed(workspace, capsys)
        code = main(["extract", "--provider", provider_arg(workspace),
                     "--text", str(workspace / "wm.txt"),
                     "--cipher", str(workspace / "wm.cipher"),
                     "--privkey", str(workspace / "priv.pem")])
        doc = json.loads(capsys.readouterr().out)
        assert code == 0
        assert doc["message"] == "salute"
        assert doc["residue"] is False

    def test_wrong_privkey_exits_6_and_prints_nothing(self, workspace, capsys, tmp_path):
        run_embed(workspace, capsys)
        assert main(["keygen", "--out-pub", str(tmp_path / "p.pem"),
                     "--out-priv", str(tmp_path / "s.pem")]) == 0
        capsys.readouterr()
        code = main(["extract", "--provider", provider_arg(workspace),
                     "--text", str(workspace / "wm.txt"),
                     "--cipher", str(workspace / "wm.cipher"),
                     "--privkey", str(tmp_path / "s.pem")])
        captured = capsys.readouterr()
        assert code == 6
        assert captured.out == ""  # nothing of the message on stdout

    def test_tampered_text_exits_7(self, workspace, capsys):
        run_embed(workspace, capsys)
        words = (workspace / "wm.txt").read_text().split()
        words[0] = "harbor" if words[0] != "harbor" else "tunnel"
        (workspace / "wm.txt").write_text(" ".join(words))
        capsys.readouterr()
        code = main(["extract", "--provider", provider_arg(workspace),
                     "--text", str(workspace / "wm.txt"),
                     "--cipher", str(workspace / "wm.cipher"),
                     "--privkey", str(workspace / "priv.pem")])
        assert code == 7

    def test_partial_mode_recorded(self, workspace, capsys):
        code, doc = run_embed(workspace, capsys, message="hi", eta="0.5",
                              extra=["--max-tokens", "60"])
        assert code == 0
        assert doc["mode"] == "partial"
        code = main(["extract", "--provider", provider_arg(workspace),
                     "--text", str(workspace / "wm.txt"),
                     "--cipher", str(workspace / "wm.cipher"),
                     "--privkey", str(workspace / "priv.pem")])
        got = json.loads(capsys.readouterr().out)
        assert code == 0 and got["message"] == "hi"

    def test_bits_literal_message(self, workspace, capsys):
        code, doc = run_embed(workspace, capsys, message="bits:10110010")
        assert code == 0 and doc["WL"] == 8
        main(["extract", "--provider", provider_arg(workspace),
              "--text", str(workspace / "wm.txt"),
              "--cipher", str(workspace / "wm.cipher"),
              "--privkey", str(workspace / "priv.pem")])
        got = json.loads(capsys.readouterr().out)
        assert got["bits"] == "10110010"

    def test_oversize_message_exits_4(self, workspace, capsys):
        code, _ = run_embed(workspace, capsys, message="x" * 400,
                            extra=["--max-tokens", "4"])
        assert code == 4


class TestTraceAndAttack:
    @pytest.fixture()
    def clean_text(self, workspace, capsys):
        code, _ = run_embed(workspace, capsys, message="trace me")
        assert code == 0
        return workspace / "wm.txt"

    def test_trace_clean(self, workspace, capsys, clean_text):
        code = main(["trace", "--provider", provider_arg(workspace),
                     "--text", str(clean_text),
                     "--prompt", str(workspace / "prompt.txt")])
        doc = json.loads(capsys.readouterr().out)
        assert code == 0
        assert all(p["tp"] in (0.0, 0.3, 0.5, 0.75, 1.0) for p in doc["positions"])

    def test_attack_then_trace_with_labels(self, workspace, capsys, clean_text):
        code = main(["attack", "--provider", provider_arg(workspace),
                     "--text", str(clean_text), "--rate", "0.2", "--seed", "5",
                     "--out-text", str(workspace / "attacked.txt"),
                     "--out-labels", str(workspace / "labels.json"), "--force"])
        attack_doc = json.loads(capsys.readouterr().out)
        assert code == 0 and attack_doc["seed"] == 5
        code = main(["trace", "--provider", provider_arg(workspace),
                     "--text", str(workspace / "attacked.txt"),
                     "--prompt", str(workspace / "prompt.txt"),
                     "--labels", str(workspace / "labels.json")])
        doc = json.loads(capsys.readouterr().out)
        assert code == 0
        assert doc["fineness"] > 0.0

    def test_attack_rate_zero_identity(self, workspace, capsys, clean_text):
        original = clean_text.read_text()
        code = main(["attack", "--provider", provider_arg(workspace),
                     "--text", str(clean_text), "--rate", "0", "--seed", "1",
                     "--out-text", str(workspace / "same.txt"), "--force"])
        assert code == 0
        assert (workspace / "same.txt").read_text() == original

    def test_labels_length_mismatch_exits_2(self, workspace, capsys, clean_text):
        (workspace / "short.json").write_text("[1, 0]")
        code = main(["trace", "--provider", provider_arg(workspace),
                     "--text", str(clean_text),
                     "--labels", str(workspace / "short.json")])
        assert code == 2


class TestEval:
    def test_default_grid_writes_reports(self, workspace, capsys):
        code = main(["eval", "--provider", provider_arg(workspace),
                     "--grid", '{"lambda": [1.0], "epsilon": [8]}',
                     "--corpus", str(workspace / "corpus.txt"),
                     "--trials", "3", "--seed", "2",
                     "--out-csv", str(workspace / "sweep.csv"),
                     "--out-json", str(workspace / "sweep.json"), "--force"])
        assert code == 0
        rows = (workspace / "sweep.csv").read_text().strip().splitlines()
        assert rows[0].startswith("lambda,epsilon,eta,trials,success_pct")
        assert len(rows) == 2


class TestErrorPaths:
    def test_bad_algo_exits_2(self, tmp_path, capsys):
        code = main(["keygen", "--algo", "rot13",
                     "--out-pub", str(tmp_path / "a"),
                     "--out-priv", str(tmp_path / "b")])
        assert code == 2

    def test_existing_output_without_force_exits_3(self, tmp_path, capsys):
        (tmp_path / "pub.pem").write_text("occupied")
        code = main(["keygen", "--out-pub", str(tmp_path / "pub.pem"),
                     "--out-priv", str(tmp_path / "priv.pem")])
        assert code == 3

    def test_train_provider_small_corpus_exits_2(self, tmp_path, capsys):
        (tmp_path / "tiny.txt").write_text("a b c")
        code = main(["train-provider", "--corpus", str(tmp_path / "tiny.txt"),
                     "--order", "3", "--alpha", "0",
                     "--out", str(tmp_path / "m.json")])
        assert code == 2

    def test_missing_input_exits_3(self, tmp_path, capsys):
        code = main(["train-provider", "--corpus", str(tmp_path / "nope.txt"),
                     "--order", "1", "--alpha", "0",
                     "--out", str(tmp_path / "m.json")])
        assert code == 3

    def test_no_provider_exits_2(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("SEGMARK_PROVIDER", raising=False)
        (tmp_path / "t.txt").write_text("x")
        code = main(["trace", "--text", str(tmp_path / "t.txt")])
        assert code == 2

    def test_env_var_provider(self, workspace, capsys, monkeypatch):
        monkeypatch.setenv("SEGMARK_PROVIDER", provider_arg(workspace))
        run_embed(workspace, capsys, message="env")
        capsys.readouterr()
        code = main(["trace", "--text", str(workspace / "wm.txt")])
        assert code == 0
