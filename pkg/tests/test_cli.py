import json

import numpy as np
import pytest

from framepress import cli, ftv1
from framepress.curriculum import synthetic_manifest, write_manifest
from framepress.verify import CheckResult


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_encode_adapt_compress_assemble_chain(tmp_path, capsys):
    feats = tmp_path / "feats.ftv1"
    ckpt = tmp_path / "ckpt"
    kept = tmp_path / "kept.ftv1"
    seq = tmp_path / "seq.ftv1"

    code, out, _ = run(
        capsys, "encode", "--frames", "4", "--grid", "3x3", "--dim", "8",
        "--seed", "1", "--out", str(feats),
    )
    assert code == 0 and "4 frames x 9 tokens x 8 dims" in out

    code, out, _ = run(
        capsys, "compress", "--features", str(feats), "--checkpoint", str(ckpt),
        "--queries", "6", "--width", "8", "--k", "2", "--out", str(kept),
    )
    assert code == 0 and "top-2 of 6" in out

    code, out, _ = run(
        capsys, "assemble", "--tokens", str(kept), "--prompt-len", "10",
        "--out", str(seq),
    )
    assert code == 0 and "sequence length 18" in out
    assert ftv1.read_tensor(seq, expect_rank=2).shape == (8, 8)


def test_adapt_writes_tokens_and_attention(tmp_path, capsys):
    feats = tmp_path / "feats.ftv1"
    run(capsys, "encode", "--frames", "2", "--grid", "2x2", "--dim", "4",
        "--seed", "2", "--out", str(feats))
    code, out, _ = run(
        capsys, "adapt", "--features", str(feats), "--queries", "3", "--width", "4",
        "--out", str(tmp_path / "tok.ftv1"),
        "--attention-out", str(tmp_path / "att.ftv1"),
    )
    assert code == 0
    assert ftv1.read_tensor(tmp_path / "tok.ftv1").shape == (2, 3, 4)
    att = ftv1.read_tensor(tmp_path / "att.ftv1")
    assert att.shape == (2, 3, 4)
    # float32 storage still keeps rows summing to 1 tightly
    np.testing.assert_allclose(att.sum(axis=2), 1.0, atol=1e-6)


def test_encode_from_npy_images(tmp_path, capsys):
    rng = np.random.default_rng(3)
    for i in range(2):
        np.save(tmp_path / f"img{i}.npy", rng.random((4, 4, 3)))
    code, out, _ = run(
        capsys, "encode",
        "--images", str(tmp_path / "img0.npy"), str(tmp_path / "img1.npy"),
        "--patch", "2", "--dim", "6", "--out", str(tmp_path / "f.ftv1"),
    )
    assert code == 0
    assert ftv1.read_tensor(tmp_path / "f.ftv1").shape == (2, 2, 2, 6)


def test_cost_calibrates_from_csv(tmp_path, capsys):
    csv = tmp_path / "measured.csv"
    csv.write_text("k,tflops\n4,32.14\n16,33.47\n32,35.24\n64,38.79\n", encoding="utf-8")
    code, out, _ = run(capsys, "cost", "--calibrate", str(csv), "--k", "4,64")
    assert code == 0
    assert "overhead_tflops" in out
    assert out.count("residual=") == 4
    last = out.strip().splitlines()[-1]
    assert last.startswith("64,")


def test_cost_uses_builtin_reference_by_default(capsys):
    code, out, _ = run(capsys, "cost")
    assert code == 0
    assert "k=256" in out


def test_subsample_and_filter(tmp_path, capsys):
    manifest = tmp_path / "m.jsonl"
    write_manifest(synthetic_manifest(40, 2, seed=4), manifest)
    code, out, _ = run(
        capsys, "subsample", str(manifest), "--fraction", "0.25", "--seed", "6",
        "--out", str(tmp_path / "sub.jsonl"),
    )
    assert code == 0 and "-> 10 videos" in out

    code, out, _ = run(
        capsys, "filter", str(manifest), "--types", "vqa,reasoning",
        "--out", str(tmp_path / "f.jsonl"),
    )
    assert code == 0
    kept = [json.loads(line) for line in (tmp_path / "f.jsonl").read_text().splitlines()]
    assert kept and all(r["data_type"] in {"vqa", "reasoning"} for r in kept)


def test_filter_unknown_type_exits_2(tmp_path, capsys):
    manifest = tmp_path / "m.jsonl"
    write_manifest(synthetic_manifest(3, 1, seed=5), manifest)
    code, _, err = run(
        capsys, "filter", str(manifest), "--types", "haiku",
        "--out", str(tmp_path / "f.jsonl"),
    )
    assert code == 2 and "error:" in err


def test_plan_command(tmp_path, capsys):
    code, out, _ = run(
        capsys, "plan", "--strategy", "S4-V", "--instruct-fraction", "0.1",
        "--out", str(tmp_path / "plan.json"),
    )
    assert code == 0
    parsed = json.loads((tmp_path / "plan.json").read_text())
    assert [s["name"] for s in parsed["stages"]][-1] == "video-instruct"


def test_plan_forbidden_fraction_exits_2(capsys):
    code, _, err = run(capsys, "plan", "--strategy", "S3-IV", "--pretrain-fraction", "0.5")
    assert code == 2 and "video-free" in err


def test_train_toy_with_config(tmp_path, capsys):
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps({
        "steps": 5, "frames": 2, "grid_h": 2, "grid_w": 2, "feature_dim": 4,
        "queries": 4, "embed_dim": 8, "keep": 2, "signal_patches": 1,
        "out_dim": 2, "batch_videos": 2,
    }), encoding="utf-8")
    report_path = tmp_path / "report.json"
    code, out, _ = run(
        capsys, "train-toy", "--config", str(cfg), "--report", str(report_path)
    )
    assert code == 0
    assert "keep=2/4" in out
    saved = json.loads(report_path.read_text())
    assert saved["kind"] == "train-toy"
    assert len(saved["loss_curve"]) == 6


def test_train_toy_bad_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "toy.json"
    cfg.write_text('{"stepz": 5}', encoding="utf-8")
    code, _, err = run(capsys, "train-toy", "--config", str(cfg))
    assert code == 2 and "unknown config keys" in err


def test_verify_exit_codes(monkeypatch, capsys, tmp_path):
    """Exit 0 when every check passes, nonzero as soon as one fails."""
    import framepress.verify as verify_mod

    monkeypatch.setattr(
        verify_mod, "ALL_CHECKS",
        (verify_mod.check_reference_fit, verify_mod.check_sequence_arithmetic),
    )
    report_path = tmp_path / "verify.json"
    code, out, _ = run(capsys, "verify", "--report", str(report_path))
    assert code == 0
    assert "2 passed, 0 failed" in out
    assert report_path.is_file()

    def broken():
        return CheckResult("planted_failure", False, "synthetic counterexample")

    monkeypatch.setattr(
        verify_mod, "ALL_CHECKS", (verify_mod.check_reference_fit, broken)
    )
    code, out, _ = run(capsys, "verify")
    assert code == 1
    assert "FAIL  planted_failure" in out
