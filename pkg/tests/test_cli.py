import json
import subprocess
import sys

import pytest

from fogattack.cli import main

SMALL = ["--size", "16", "--samples-per-class", "20"]


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", *SMALL, "--epochs", "3", "--channels", "4", "--out", str(out)]) == 0
    return out / "model.fogb"


def _report(path):
    return json.loads((path / "report.json").read_text())


def test_noise_deterministic(tmp_path):
    for name in ("a.pgm", "b.pgm"):
        assert main(["noise", "--height", "20", "--width", "12", "--seed", "5",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n12 20\n255\n")


def test_noise_single_pixel(tmp_path):
    assert main(["noise", "--height", "1", "--width", "1", "--out", str(tmp_path / "p.pgm")]) == 0
    assert (tmp_path / "p.pgm").read_bytes()[-1] == 128


def test_train_report(ckpt):
    rep = _report(ckpt.parent)
    assert rep["command"] == "train"
    assert rep["config"]["epochs"] == 3 and "out" not in rep["config"]
    assert 0.0 <= rep["metrics"]["test_accuracy"] <= 1.0


def test_attack_zero_blend_gives_zero_asr(ckpt, tmp_path):
    out = tmp_path / "atk"
    assert main(["attack", "--model", str(ckpt), *SMALL, "--lambda-b", "0", "--steps", "2",
                 "--save-images", "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["metrics"]["n_adv"] == 0
    assert rep["metrics"]["asr"] in (0.0, None)
    assert rep["config"]["lambda_b"] == 0.0 and rep["config"]["seed"] == 0
    assert len(list((out / "images").glob("*.ppm"))) == rep["metrics"]["n_total"]
    assert (out / "report.csv").read_text().startswith("index,")


def test_eval_identical_files(ckpt, tmp_path):
    out = tmp_path / "atk"
    assert main(["attack", "--model", str(ckpt), *SMALL, "--steps", "1", "--n-samples", "10",
                 "--out", str(out)]) == 0
    clean = str(out / "clean_predictions.csv")
    assert main(["eval", "--clean", clean, "--adv", clean, "--out", str(tmp_path / "ev")]) == 0
    assert _report(tmp_path / "ev")["metrics"]["n_adv"] == 0
    assert main(["eval", "--clean", clean, "--adv", str(out / "adv_predictions.csv"),
                 "--out", str(tmp_path / "ev2")]) == 0
    assert _report(tmp_path / "ev2")["metrics"]["n_adv"] == _report(out)["metrics"]["n_adv"]


def test_transfer_self_equals_whitebox(ckpt, tmp_path):
    out = tmp_path / "tr"
    assert main(["transfer", "--surrogate", str(ckpt), "--target-model", str(ckpt), *SMALL,
                 "--steps", "3", "--n-samples", "16", "--out", str(out)]) == 0
    m = _report(out)["metrics"]
    assert m["targets"][0]["asr"] == m["whitebox"]["asr"]
    assert m["mean_tasr"] == m["whitebox"]["asr"]


def test_defend_report(ckpt, tmp_path):
    out = tmp_path / "df"
    assert main(["defend", "--model", str(ckpt), *SMALL, "--defense", "tv", "--tv-iterations", "5",
                 "--steps", "2", "--n-samples", "8", "--out", str(out)]) == 0
    m = _report(out)["metrics"]
    assert set(m) == {"before", "after"}
    assert m["before"]["n_mis"] == m["after"]["n_mis"]


def test_replay_byte_identical_across_workers(ckpt, tmp_path):
    out = tmp_path / "a"
    assert main(["attack", "--model", str(ckpt), *SMALL, "--steps", "3", "--n-samples", "40",
                 "--seed", "7", "--out", str(out)]) == 0
    for workers in ("1", "4"):
        dst = tmp_path / f"r{workers}"
        assert main(["replay", str(out / "report.json"), "--workers", workers, "--out", str(dst)]) == 0
        for name in ("report.json", "report.csv", "adv_predictions.csv"):
            assert (dst / name).read_bytes() == (out / name).read_bytes()


def test_error_exit_codes_and_messages(ckpt, tmp_path, capsys):
    cases = [
        (["attack", "--model", str(tmp_path / "none.fogb"), "--out", str(tmp_path / "x")],
         "checkpoint not found"),
        (["attack", "--model", str(ckpt), "--size", "32", "--out", str(tmp_path / "x")],
         "shape mismatch"),
        (["attack", "--model", str(ckpt), *SMALL, "--alpha", "0", "--out", str(tmp_path / "x")],
         "invalid attack flags"),
        (["eval", "--clean", str(tmp_path / "c.csv"), "--adv", str(tmp_path / "c.csv"),
          "--out", str(tmp_path / "x")], "prediction file not found"),
        (["replay", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")], "report not found"),
        (["noise", "--height", "0", "--out", str(tmp_path / "n.pgm")], "must be positive"),
    ]
    seen = set()
    for argv, msg in cases:
        capsys.readouterr()
        assert main(argv) == 1
        err = capsys.readouterr().err
        assert err.startswith("fogattack: error:") and msg in err
        seen.add(err)
    assert len(seen) == len(cases)
    assert not (tmp_path / "x").exists()


def test_bad_checkpoint_file(tmp_path, capsys):
    bad = tmp_path / "bad.fogb"
    bad.write_bytes(b"JUNKJUNK")
    assert main(["attack", "--model", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "bad magic" in capsys.readouterr().err


def test_argparse_errors_exit_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["attack", "--out", "x"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "fogattack.cli", "--help"], capture_output=True)
    assert res.returncode == 0 and b"noise" in res.stdout
