import json

import numpy as np
import pytest

from svcdiff.cli import main
from svcdiff.denoiser import init_denoiser, save_checkpoint
from svcdiff.features import AudioClip, write_wav
from svcdiff.tensorio import read_tensor

from util import RATE, VOWEL_A, VOWEL_I, formant_tone


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One slice -> featurize -> train chain shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    in_dir = root / "wavs"
    in_dir.mkdir()
    two_part = np.concatenate(
        [formant_tone(220, VOWEL_A, 1.2, seed=1), np.zeros(int(0.6 * RATE)), formant_tone(300, VOWEL_I, 1.2, seed=2)]
    )
    write_wav(in_dir / "song.wav", AudioClip(two_part, RATE))
    write_wav(in_dir / "quiet.wav", AudioClip(np.zeros(RATE), RATE))
    cfg = {
        "denoiser": {"arch": [16, 16], "time_embed": 8},
        "train": {"steps": 25, "seed": 3},
        "loss": {"batch": 2, "lr": 1e-3},
        "sampler": {"steps": 2, "seed": 5},
        "features": {"gl_iters": 2},
        "distill": {"start_steps": 8, "halvings": 3, "steps_per_stage": 3, "batch": 2},
        "slicer": {"min_silence": 0.4, "min_segment": 0.5},
        "bench": {"repetitions": 2, "steps": [2, 4], "threads": [1]},
    }
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    return root, in_dir, cfg_path


def run(argv):
    return main([str(a) for a in argv])


class TestSlice:
    def test_slices_and_writes_manifest(self, workdir):
        root, in_dir, cfg = workdir
        out = root / "segments"
        assert run(["slice", in_dir, "--config", cfg, "--out", out]) == 0
        rows = (out / "manifest.csv").read_text().strip().splitlines()
        assert rows[0] == "source,start_sec,end_sec,path"
        assert len(rows) == 3  # two segments from song.wav, none from quiet.wav
        assert (out / "slice_run.json").exists()

    def test_empty_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run(["slice", tmp_path / "empty", "--out", tmp_path / "o"]) == 0
        rows = (tmp_path / "o" / "manifest.csv").read_text().strip().splitlines()
        assert rows == ["source,start_sec,end_sec,path"]

    def test_silent_files_give_zero_segments(self, tmp_path):
        d = tmp_path / "silent"
        d.mkdir()
        write_wav(d / "a.wav", AudioClip(np.zeros(RATE), RATE))
        assert run(["slice", d, "--out", tmp_path / "o"]) == 0
        assert len((tmp_path / "o" / "manifest.csv").read_text().strip().splitlines()) == 1

    def test_augmentation_re_windows_segments(self, tmp_path):
        d = tmp_path / "wavs"
        d.mkdir()
        write_wav(d / "long.wav", AudioClip(formant_tone(220, VOWEL_A, 4.0, seed=7), RATE))
        cfg = tmp_path / "aug.json"
        cfg.write_text(json.dumps({
            "slicer": {"min_segment": 0.5},
            "augment": {"sizes": [1.0], "overlap": 0.5},
        }))
        out = tmp_path / "o"
        assert run(["slice", d, "--config", cfg, "--out", out]) == 0
        rows = (out / "manifest.csv").read_text().strip().splitlines()[1:]
        # 4 s segment, 1 s windows at 0.5 s hop -> windows at 0.0..3.0
        assert len(rows) == 7
        starts = [float(r.split(",")[1]) for r in rows]
        assert starts == pytest.approx([0.5 * k for k in range(7)], abs=0.05)

    def test_unreadable_input_exit_2_partial_progress(self, tmp_path, capsys):
        d = tmp_path / "mixed"
        d.mkdir()
        (d / "bad.wav").write_bytes(b"garbage")
        write_wav(d / "ok.wav", AudioClip(formant_tone(250, VOWEL_A, 1.5, seed=3), RATE))
        rc = run(["slice", d, "--out", tmp_path / "o2"])
        err = capsys.readouterr().err
        assert rc == 2
        assert "bad.wav" in err
        manifest = (tmp_path / "o2" / "manifest.csv").read_text().strip().splitlines()
        assert len(manifest) >= 2  # ok.wav still sliced


class TestFeaturize:
    def test_features_written_and_idempotent(self, workdir):
        root, in_dir, cfg = workdir
        seg_out = root / "segments"
        feat_out = root / "features"
        if not (seg_out / "manifest.csv").exists():
            run(["slice", in_dir, "--config", cfg, "--out", seg_out])
        assert run(["featurize", seg_out / "manifest.csv", "--config", cfg, "--out", feat_out]) == 0
        mels = sorted(feat_out.glob("*.mel.bin"))
        assert len(mels) == 2
        mel = read_tensor(mels[0])
        cond = read_tensor(sorted(feat_out.glob("*.cond.bin"))[0])
        f0 = read_tensor(sorted(feat_out.glob("*.f0.bin"))[0])
        assert mel.shape[1] == 80 and cond.shape == (mel.shape[0], 256) and f0.shape[0] == mel.shape[0]
        stamps = {p: p.stat().st_mtime_ns for p in feat_out.glob("*.bin")}
        assert run(["featurize", seg_out / "manifest.csv", "--config", cfg, "--out", feat_out]) == 0
        assert {p: p.stat().st_mtime_ns for p in feat_out.glob("*.bin")} == stamps

    def test_missing_manifest_exit_2(self, tmp_path):
        assert run(["featurize", tmp_path / "nope.csv", "--out", tmp_path / "o"]) == 2

    def test_empty_manifest(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("source,start_sec,end_sec,path\n")
        assert run(["featurize", m, "--out", tmp_path / "o"]) == 0


class TestTrain:
    def test_train_writes_checkpoint_and_curve(self, workdir):
        root, in_dir, cfg = workdir
        feat = root / "features"
        out = root / "model"
        assert run(["train", "--features", feat, "--config", cfg, "--out", out]) == 0
        assert (out / "checkpoint.ckpt").exists()
        curve = (out / "loss_curve.csv").read_text().strip().splitlines()
        assert curve[0] == "step,loss" and len(curve) == 26

    def test_byte_identical_rerun(self, workdir):
        root, in_dir, cfg = workdir
        feat = root / "features"
        a, b = root / "model_a", root / "model_b"
        assert run(["train", "--features", feat, "--config", cfg, "--out", a]) == 0
        assert run(["train", "--features", feat, "--config", cfg, "--out", b]) == 0
        assert (a / "checkpoint.ckpt").read_bytes() == (b / "checkpoint.ckpt").read_bytes()

    def test_run_record_carries_hash_and_versions(self, workdir):
        root, _, cfg = workdir
        rec = json.loads((root / "model" / "train_run.json").read_text())
        assert set(rec) >= {"command", "config_hash", "seed", "versions", "timestamp"}
        assert rec["command"] == "train"
        assert rec["versions"]["svcdiff"]


class TestDistill:
    def test_three_halvings_give_three_checkpoints(self, workdir):
        root, _, cfg = workdir
        out = root / "distilled"
        rc = run([
            "distill", "--checkpoint", root / "model" / "checkpoint.ckpt",
            "--features", root / "features", "--config", cfg, "--out", out, "--halvings", "3",
        ])
        assert rc == 0
        ckpts = sorted(out.glob("stage*.ckpt"))
        assert [p.name for p in ckpts] == [
            "stage1_steps4.ckpt", "stage2_steps2.ckpt", "stage3_steps1.ckpt",
        ]
        lines = (out / "stages.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3


class TestConvert:
    def test_point_mass_checkpoint_single_step(self, workdir, tmp_path):
        root, in_dir, cfg = workdir
        # a net that always predicts the same frame vector
        p = init_denoiser((8,), cond_dim=256, data_dim=80, time_embed=8, seed=0)
        p = p.from_vector(np.zeros(p.param_count()))
        x0 = np.linspace(-11.5, -2.0, 80)
        p.b_out = x0.copy()
        ckpt = tmp_path / "pm.ckpt"
        save_checkpoint(p, ckpt)
        wav = in_dir / "song.wav"
        out = tmp_path / "conv"
        rc = run(["convert", wav, "--checkpoint", ckpt, "--config", cfg, "--out", out, "--steps", "1"])
        assert rc == 0
        mel = read_tensor(out / "converted.mel.bin")
        assert np.allclose(mel, np.float32(x0)[None, :], atol=1e-5)
        assert (out / "converted.wav").exists()

    def test_deterministic_outputs(self, workdir, tmp_path):
        root, in_dir, cfg = workdir
        ckpt = root / "model" / "checkpoint.ckpt"
        a, b = tmp_path / "c1", tmp_path / "c2"
        for out in (a, b):
            assert run(["convert", in_dir / "song.wav", "--checkpoint", ckpt,
                        "--config", cfg, "--out", out]) == 0
        assert (a / "converted.wav").read_bytes() == (b / "converted.wav").read_bytes()
        assert (a / "converted.mel.bin").read_bytes() == (b / "converted.mel.bin").read_bytes()


class TestBench:
    def test_two_cells_and_plot(self, workdir, tmp_path):
        root, in_dir, cfg = workdir
        out = tmp_path / "bench"
        rc = run(["bench", in_dir / "song.wav", "--checkpoint", root / "model" / "checkpoint.ckpt",
                  "--config", cfg, "--out", out, "--steps", "2,4", "--plot"])
        assert rc == 0
        lines = (out / "bench.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        recs = [json.loads(line) for line in lines]
        assert [r["steps"] for r in recs] == [2, 4]
        assert (out / "bench.svg").read_text().startswith("<svg")
        assert (out / "bench.csv").exists()


class TestErrorsAndHelp:
    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"sampler": {"stepz": 1}}))
        rc = run(["slice", tmp_path, "--config", bad, "--out", tmp_path / "o"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"

    @pytest.mark.parametrize("command,expect", [
        ("slice", "slicer."),
        ("featurize", "features."),
        ("train", "denoiser."),
        ("distill", "distill."),
        ("slim", "slim."),
        ("convert", "sampler."),
        ("bench", "bench."),
    ])
    def test_help_lists_config_keys(self, command, expect, capsys):
        with pytest.raises(SystemExit) as exc:
            run([command, "--help"])
        assert exc.value.code == 0
        assert expect in capsys.readouterr().out
