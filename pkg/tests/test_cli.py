import subprocess
import sys

import pytest

from sandhiseg.cli import main
from sandhiseg.corpus import read_corpus
from sandhiseg.seq2seq import load_checkpoint
from sandhiseg.subword import load_vocab

TRAIN_FLAGS = ["--num-layers", "1", "--embed-dim", "8", "--hidden-dim", "8", "--batch-size", "4", "--epochs", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def pipeline(tmp_path, capsys):
    """gen -> vocab on a small corpus; returns the paths."""
    corpus, test, vocab = tmp_path / "train.tsv", tmp_path / "test.tsv", tmp_path / "v.vocab"
    assert run(capsys, "gen", "--n", 40, "--seed", 7, "--out", corpus, "--test-out", test, "--test-fraction", 0.2)[0] == 0
    assert run(capsys, "vocab", "--corpus", corpus, "--vocab", vocab, "--vocab-size", 80)[0] == 0
    return tmp_path, corpus, test, vocab


class TestGen:
    def test_deterministic_and_format(self, tmp_path, capsys):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        code, out, err = run(capsys, "--seed", 42, "gen", "--n", 200, "--out", a)
        assert code == 0 and "200 pairs" in out
        assert "seed = 42" in err and "n = 200" in err
        run(capsys, "gen", "--n", 200, "--seed", 42, "--out", b)
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text(encoding="utf-8").split("\n")
        assert lines[-1] == "" and len(lines) == 201
        assert all(line.count("\t") == 1 for line in lines[:-1])

    def test_zero_pairs(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--n", 0, "--out", tmp_path / "x.tsv")
        assert code != 0
        assert err.strip().splitlines()[-1].startswith("sandhiseg: error:")

    def test_missing_rules_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--n", 5, "--rules", tmp_path / "nope.tsv", "--out", tmp_path / "x.tsv")
        assert code == 1 and "nope.tsv" in err

    def test_split_and_exclude(self, tmp_path, capsys):
        full, tr, te = tmp_path / "full.tsv", tmp_path / "tr.tsv", tmp_path / "te.tsv"
        run(capsys, "gen", "--n", 100, "--seed", 3, "--out", full)
        excl = tmp_path / "ex.tsv"
        excl.write_text("".join(full.read_text(encoding="utf-8").splitlines(keepends=True)[:5]), encoding="utf-8")
        code, _, _ = run(capsys, "gen", "--from-corpus", full, "--out", tr, "--test-out", te, "--exclude", excl)
        assert code == 0
        train, test, dropped = read_corpus(tr), read_corpus(te), read_corpus(excl)
        assert not set(train) & set(test)
        assert not (set(train) | set(test)) & set(dropped)
        kept = [pair for pair in read_corpus(full) if pair not in set(dropped)]
        assert len(train) + len(test) == len(kept)


class TestConfig:
    def test_file_then_flags(self, tmp_path, capsys):
        cfg = tmp_path / "run.conf"
        cfg.write_text("# comment\nn = 12\nseed = 5\napply-probability = 1.0\n", encoding="utf-8")
        out1 = tmp_path / "a.tsv"
        code, _, err = run(capsys, "--config", cfg, "gen", "--out", out1, "--n", 9)
        assert code == 0
        assert "n = 9" in err and "seed = 5" in err and "apply_probability = 1.0" in err
        assert len(read_corpus(out1)) == 9

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.conf"
        cfg.write_text("bogus = 1\n", encoding="utf-8")
        code, _, err = run(capsys, "gen", "--config", cfg, "--n", 3, "--out", tmp_path / "a.tsv")
        assert code == 1 and "run.conf:1" in err


class TestVocab:
    def test_contains_merge_and_is_stable(self, tmp_path, capsys):
        corpus = tmp_path / "c.tsv"
        corpus.write_text("ab ab\tab ab\n", encoding="utf-8")
        v1, v2 = tmp_path / "1.vocab", tmp_path / "2.vocab"
        code, out, _ = run(capsys, "vocab", "--corpus", corpus, "--vocab", v1, "--vocab-size", 8)
        assert code == 0 and "ab" in load_vocab(v1).pieces
        assert "encoder vocabulary\t" in out and "decoder vocabulary\t" in out
        run(capsys, "vocab", "--corpus", corpus, "--vocab", v2, "--vocab-size", 8)
        assert v1.read_bytes() == v2.read_bytes()

    def test_too_small(self, pipeline, capsys):
        tmp, corpus, _, _ = pipeline
        code, _, err = run(capsys, "vocab", "--corpus", corpus, "--vocab", tmp / "x.vocab", "--vocab-size", 3)
        assert code == 1 and "error" in err


class TestTrainSegmentEval:
    def test_end_to_end(self, pipeline, capsys):
        tmp, corpus, test, vocab = pipeline
        ckpt, curve = tmp / "m.ckpt", tmp / "loss.tsv"
        code, out, err = run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", ckpt,
                             "--loss-out", curve, *TRAIN_FLAGS)
        assert code == 0
        assert out.splitlines()[0] == "epoch\tmean_loss" and out.splitlines()[1].startswith("1\t")
        assert curve.read_text(encoding="utf-8") == out
        assert load_checkpoint(ckpt, load_vocab(vocab)).epoch == 1

        pred = tmp / "pred.txt"
        code, _, _ = run(capsys, "segment", "--checkpoint", ckpt, "--vocab", vocab, "--input", test, "--tsv", "true",
                         "--output", pred)
        assert code == 0
        data = pred.read_bytes()
        assert data.count(b"\n") == len(read_corpus(test)) and b"\r" not in data and b"  " not in data

        code, out, _ = run(capsys, "eval", "--predictions", pred, "--gold", test, "--report", tmp / "r.txt",
                           "--csv", tmp / "r.csv")
        assert code == 0 and "f-score" in out
        assert (tmp / "r.csv").read_text(encoding="utf-8").startswith("gold_len,precision,recall,count\n")

    def test_attention_flag_schema(self, pipeline, capsys):
        tmp, corpus, _, vocab = pipeline
        paths = {}
        for flag in ("true", "false"):
            paths[flag] = tmp / f"{flag}.ckpt"
            assert run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", paths[flag],
                       "--attention", flag, *TRAIN_FLAGS)[0] == 0
        v = load_vocab(vocab)
        on, off = load_checkpoint(paths["true"], v), load_checkpoint(paths["false"], v)
        assert set(on.params) - set(off.params) == {"attention.W", "attention.b"}

    def test_rerun_identical(self, pipeline, capsys):
        tmp, corpus, _, vocab = pipeline
        outs = []
        for k in range(2):
            ck, lo = tmp / f"{k}.ckpt", tmp / f"{k}.loss"
            run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", ck, "--loss-out", lo, *TRAIN_FLAGS)
            outs.append((ck.read_bytes(), lo.read_bytes()))
        assert outs[0] == outs[1]

    def test_resume_and_save_every(self, pipeline, capsys):
        tmp, corpus, _, vocab = pipeline
        ck = tmp / "m.ckpt"
        flags = list(TRAIN_FLAGS)
        flags[-1] = "2"
        run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", ck, "--save-every", 1, *flags)
        ck2 = tmp / "m2.ckpt"
        code, out, _ = run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", ck2, "--resume", ck,
                           *TRAIN_FLAGS)
        assert code == 0 and out.splitlines()[1].startswith("3\t")
        code, _, err = run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", ck2, "--resume", ck,
                           *TRAIN_FLAGS[:-4], "--hidden-dim", "10", "--epochs", "1")
        assert code == 1 and "architecture" in err

    def test_segment_empty_input(self, pipeline, capsys):
        tmp, corpus, _, vocab = pipeline
        ck = tmp / "m.ckpt"
        run(capsys, "train", "--corpus", corpus, "--vocab", vocab, "--checkpoint", ck, *TRAIN_FLAGS)
        empty = tmp / "empty.txt"
        empty.write_text("", encoding="utf-8")
        code, out, _ = run(capsys, "segment", "--checkpoint", ck, "--vocab", vocab, "--input", empty)
        assert code == 0 and out == ""

    def test_bad_checkpoint(self, pipeline, capsys):
        tmp, _, _, vocab = pipeline
        bad = tmp / "bad.ckpt"
        bad.write_bytes(b"nope")
        code, _, err = run(capsys, "segment", "--checkpoint", bad, "--vocab", vocab, "--input", bad)
        assert code == 1 and len(err.strip().splitlines()[-1]) > len("sandhiseg: error: ")


class TestEval:
    def test_fixture(self, tmp_path, capsys):
        gold = tmp_path / "g.tsv"
        gold.write_text("x\trāmaḥ vanam gacchati\ny\ta b\n", encoding="utf-8")
        pred = tmp_path / "p.txt"
        pred.write_text("rāmaḥ vanaṃgacchati\na b\n", encoding="utf-8")
        code, out, _ = run(capsys, "eval", "--predictions", pred, "--gold", gold)
        assert code == 0
        assert "precision  75.00" in out and "recall     60.00" in out and "f-score    66.67" in out

    def test_identity(self, tmp_path, capsys):
        gold = tmp_path / "g.tsv"
        gold.write_text("x\trāma iti\ny\tca\n", encoding="utf-8")
        pred = tmp_path / "p.txt"
        pred.write_text("rāma iti\nca\n", encoding="utf-8")
        code, out, _ = run(capsys, "eval", "--predictions", pred, "--gold", gold)
        assert code == 0 and "f-score    100.00" in out

    def test_line_count_mismatch(self, tmp_path, capsys):
        gold = tmp_path / "g.tsv"
        gold.write_text("x\ta\n", encoding="utf-8")
        pred = tmp_path / "p.txt"
        pred.write_text("a\nb\n", encoding="utf-8")
        code, _, err = run(capsys, "eval", "--predictions", pred, "--gold", gold)
        assert code == 1 and "2 prediction lines" in err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "sandhiseg.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("gen", "vocab", "train", "segment", "eval"):
        assert name in res.stdout
