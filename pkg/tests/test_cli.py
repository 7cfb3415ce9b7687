import csv
import json

import numpy as np
import pytest

from parcv2 import checkpoint as ckpt
from parcv2.cli import main
from parcv2.perf import BENCH_COLUMNS


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("PARC2_THREADS", raising=False)
    return tmp_path


def _logits(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


XT_FWD = ["forward", "--variant", "XT", "--seed", "42", "--input", "random:2x3x64x64"]


class TestForward:
    def test_smoke(self, capsys):
        assert main(XT_FWD + ["--out", "a.csv"]) == 0
        assert _logits("a.csv").shape == (2, 1000)
        out = capsys.readouterr().out
        assert "item 0: argmax=" in out and "top5=" in out

    def test_byte_identical(self, workdir):
        assert main(XT_FWD + ["--out", "a.csv"]) == 0
        assert main(XT_FWD + ["--out", "b.csv"]) == 0
        assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()

    def test_fused_close(self):
        assert main(XT_FWD + ["--out", "a.csv"]) == 0
        assert main(XT_FWD + ["--out", "f.csv", "--fused"]) == 0
        assert np.max(np.abs(_logits("a.csv") - _logits("f.csv"))) <= 1e-3

    def test_seed_required(self, capsys):
        assert main(["forward", "--variant", "XT", "--input", "random:1x3x64x64"]) == 2
        assert "--seed" in capsys.readouterr().err

    def test_usage_errors(self):
        assert main(["forward", "--variant", "XT", "--seed", "1", "--input", "random:1x3x63x64"]) == 2
        assert main(["forward", "--variant", "ZZ", "--seed", "1", "--input", "random:1x3x64x64"]) == 2
        assert main(["forward", "--variant", "XT", "--seed", "1", "--input", "random:1x3x64"]) == 2
        assert main(["forward", "--variant", "XT", "--seed", "1", "--input", "missing.npy"]) == 2
        assert main(["frobnicate"]) == 2

    def test_npy_input_and_non_finite(self, workdir):
        x = np.random.default_rng(0).standard_normal((1, 3, 64, 64)).astype(np.float32)
        np.save("x.npy", x)
        assert main(["forward", "--variant", "XT", "--seed", "3", "--input", "x.npy"]) == 0
        x[0, 0, 5, 5] = np.inf
        np.save("bad.npy", x)
        assert main(["forward", "--variant", "XT", "--seed", "3", "--input", "bad.npy"]) == 3

    def test_config_file(self, workdir):
        (workdir / "cfg.json").write_text(json.dumps(
            {"channels": [8, 8, 16, 16], "blocks": [1, 1, 1, 1], "input_size": [32, 32], "num_classes": 7}))
        assert main(["forward", "--config", "cfg.json", "--seed", "1", "--input", "random:3x3x32x32"]) == 0
        assert _logits("logits.csv").shape == (3, 7)
        assert main(["forward", "--config", "cfg.json", "--seed", "1", "--input", "random:1x3x64x64"]) == 2
        (workdir / "bad.json").write_text("{not json")
        assert main(["forward", "--config", "bad.json", "--seed", "1", "--input", "random:1x3x32x32"]) == 2

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("PARC2_THREADS", "lots")
        assert main(["count", "--variant", "XT"]) == 2
        monkeypatch.setenv("PARC2_THREADS", "1")
        assert main(["count", "--variant", "XT"]) == 0


class TestCheckpointCommands:
    @pytest.fixture
    def xt(self, workdir):
        assert main(["init", "--variant", "XT", "--seed", "9", "--out", "xt.ckpt"]) == 0
        return workdir / "xt.ckpt"

    def test_init_needs_seed(self):
        assert main(["init", "--variant", "XT", "--out", "x.ckpt"]) == 2

    def test_forward_from_checkpoint(self, xt):
        assert main(["forward", "--checkpoint", str(xt), "--seed", "1",
                     "--input", "random:1x3x224x224", "--out", "c.csv"]) == 0
        assert _logits("c.csv").shape == (1, 1000)
        # wrong resolution for a bound checkpoint
        assert main(["forward", "--checkpoint", str(xt), "--seed", "1", "--input", "random:1x3x160x160"]) == 2
        # wrong variant
        assert main(["forward", "--checkpoint", str(xt), "--variant", "T", "--seed", "1",
                     "--input", "random:1x3x224x224"]) == 2

    def test_resize_same_size(self, xt, workdir):
        assert main(["resize", "--checkpoint", str(xt), "--to", "224x224", "--out", "same.ckpt"]) == 0
        h1, s1 = ckpt.read_header(xt)
        h2, s2 = ckpt.read_header(workdir / "same.ckpt")
        h1.pop("created_utc"), h2.pop("created_utc")
        assert h1 == h2
        assert xt.read_bytes()[s1:] == (workdir / "same.ckpt").read_bytes()[s2:]

    def test_resize_224_to_160(self, xt, workdir):
        assert main(["resize", "--checkpoint", str(xt), "--to", "160x160", "--out", "r.ckpt"]) == 0
        _, before = ckpt.load_tensors(xt)
        _, after = ckpt.load_tensors(workdir / "r.ckpt")
        assert before["stages.0.blocks.0.spatial.oversized.k_h"].shape == (48, 111)
        assert after["stages.0.blocks.0.spatial.oversized.k_h"].shape == (48, 79)
        for k, v in before.items():
            if ".oversized.k_" not in k:
                assert after[k].tobytes() == v.tobytes()
        assert main(["forward", "--checkpoint", "r.ckpt", "--seed", "2",
                     "--input", "random:1x3x160x160", "--out", "r.csv"]) == 0
        assert np.all(np.isfinite(_logits("r.csv")))

    def test_resize_bad_size(self, xt):
        assert main(["resize", "--checkpoint", str(xt), "--to", "150x160", "--out", "r.ckpt"]) == 2
        assert main(["resize", "--checkpoint", str(xt), "--to", "160", "--out", "r.ckpt"]) == 2

    def test_truncated(self, xt, workdir, capsys):
        (workdir / "t.ckpt").write_bytes(xt.read_bytes()[:100_000])
        assert main(["forward", "--checkpoint", "t.ckpt", "--seed", "1", "--input", "random:1x3x224x224"]) == 2
        assert "tensor '" in capsys.readouterr().err

    def test_config_mismatch(self, xt, workdir):
        (workdir / "t.json").write_text(json.dumps({"variant": "T"}))
        assert main(["forward", "--checkpoint", str(xt), "--config", "t.json", "--seed", "1",
                     "--input", "random:1x3x224x224"]) == 2


class TestCheck:
    def test_commute(self, workdir):
        assert main(["check", "--suite", "commute", "--report", "r.json"]) == 0
        report = json.loads((workdir / "r.json").read_text())
        assert report["passed"] is True
        assert report["suites"][0]["suite"] == "commute"

    def test_fault_injection(self, workdir, capsys):
        assert main(["check", "--suite", "oracle", "--inject-fault", "dense2d:0,1,1:0.01",
                     "--report", "r.json"]) == 1
        out = capsys.readouterr().out
        assert "dense2d/f32: max_abs_diff=" in out and " at [" in out
        report = json.loads((workdir / "r.json").read_text())
        failed = report["suites"][0]["details"]["failed"]
        assert failed and all(k.startswith("dense2d/") for k in failed)

    def test_bad_fault_spec(self):
        assert main(["check", "--suite", "oracle", "--inject-fault", "nowhere:0:1"]) == 2
        assert main(["check", "--suite", "shift", "--inject-fault", "dense2d:0,0,0:1"]) == 2


class TestCount:
    def test_xt(self, capsys):
        assert main(["count", "--variant", "XT"]) == 0
        out = capsys.readouterr().out
        assert "stage0.channel_bgu" in out
        assert "reference XT@224: 7.4M params" in out

    def test_channel_line_item(self, capsys):
        assert main(["count", "--variant", "T"]) == 0
        assert "stage 0 (C=64): 31,104" in capsys.readouterr().out

    def test_other_size_has_no_reference(self, capsys):
        assert main(["count", "--variant", "S", "--input-size", "160x160"]) == 0
        assert "reference" not in capsys.readouterr().out


class TestBench:
    def test_zero_iters(self):
        assert main(["bench", "--op", "fast-separable", "--shape", "1x4x8x8", "--iters", "0", "--seed", "1"]) == 2

    def test_needs_seed(self):
        assert main(["bench", "--op", "fast-separable", "--shape", "1x4x8x8"]) == 2

    def test_unknown_op(self):
        assert main(["bench", "--op", "gpu-dense", "--shape", "1x4x8x8", "--seed", "1"]) == 2

    def test_separable_and_dense(self, workdir):
        assert main(["bench", "--op", "fast-separable,fast-dense", "--shape", "1x8x14x14",
                     "--seed", "1", "--csv", "b.csv", "--json", "b.json"]) == 0
        with open(workdir / "b.csv") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == BENCH_COLUMNS
        assert [r["label"] for r in rows] == ["fast-separable", "fast-dense"]
        assert all(r["verified"] == "True" for r in rows)
        assert len(json.loads((workdir / "b.json").read_text())) == 2
