import json
import struct

import numpy as np
import pytest

from horouf.audio import AudioClip, write_wav
from horouf.cli import main
from horouf.corpus import Manifest, ManifestEntry, Split, decode_label, load_manifest
from horouf.embedding import read_hrf, write_hrf
from horouf.evaluation import SweepResult
from horouf.util import stable_rng


def run(*argv):
    return main(list(argv))


def pipeline(tmp_path, threads="1", classes="6", dim="16", per_class="40",
             epochs="3", epsilons="0,0.1,0.2", seed="5"):
    """synth -> split -> train -> adversarial train -> sweep, returning paths."""
    synth = tmp_path / "synth"
    splitd = tmp_path / "split"
    std = tmp_path / "std"
    adv = tmp_path / "adv"
    sweepd = tmp_path / "sweep"
    assert run("synth", "--classes", classes, "--dim", dim, "--per-class", per_class,
               "--sigma", "0.4", "--margin", "5", "--seed", seed, "--out", str(synth)) == 0
    assert run("split", "--manifest", str(synth / "manifest.jsonl"), "--out", str(splitd),
               "--train-frac", "0.68", "--val-frac", "0.12", "--seed", seed) == 0
    manifest = str(splitd / "manifest.jsonl")
    assert run("train", "--manifest", manifest, "--out", str(std), "--epochs", epochs,
               "--seed", seed, "--hidden", "32,16") == 0
    assert run("train", "--manifest", manifest, "--out", str(adv), "--epochs", epochs,
               "--seed", seed, "--hidden", "32,16", "--adversarial",
               "--epsilon", "0.3", "--steps", "5") == 0
    assert run("sweep", "--standard", str(std / "model.ckpt"),
               "--adversarial", str(adv / "model.ckpt"), "--manifest", manifest,
               "--out", str(sweepd), "--epsilons", epsilons, "--steps", "10",
               "--threads", threads) == 0
    return {"synth": synth, "split": splitd, "std": std, "adv": adv, "sweep": sweepd,
            "manifest": manifest}


class TestBasics:
    def test_version(self, capsys):
        assert run("--version") == 0
        assert "horouf" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        assert run("frobnicate") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_no_subcommand(self):
        assert run() == 1

    def test_missing_required_flag(self, capsys):
        assert run("split") == 1
        assert "--manifest" in capsys.readouterr().err

    def test_missing_file_is_data_error(self, tmp_path):
        assert run("split", "--manifest", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "o")) == 2

    def test_json_error_line(self, tmp_path, capsys):
        assert run("--json", "split", "--manifest", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "o")) == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["event"] == "error"
        assert err["type"] == "ManifestError"

    def test_numeric_error_exit_code(self, tmp_path, monkeypatch, capsys):
        import horouf.neural as neural
        from horouf.errors import NumericError

        synth = tmp_path / "s"
        assert run("synth", "--classes", "3", "--dim", "8", "--per-class", "5",
                   "--out", str(synth), "--seed", "1") == 0

        def poisoned(logits, y):
            raise NumericError("non-finite loss")

        monkeypatch.setattr(neural, "cross_entropy", poisoned)
        code = run("train", "--manifest", str(synth / "manifest.jsonl"),
                   "--out", str(tmp_path / "t"), "--epochs", "1", "--hidden", "8,4")
        assert code == 3


class TestPipeline:
    def test_end_to_end_outputs(self, tmp_path):
        paths = pipeline(tmp_path)
        sweep_csv = paths["sweep"] / "sweep.csv"
        assert sweep_csv.exists()
        result = SweepResult.load_csv(sweep_csv)
        assert [r.epsilon for r in result.rows] == [0.0, 0.1, 0.2]
        # robust accuracy never exceeds the zero-budget row
        assert all(r.acc_standard <= result.rows[0].acc_standard for r in result.rows)
        assert all(r.acc_adversarial <= result.rows[0].acc_adversarial for r in result.rows)
        assert (paths["std"] / "metrics.csv").exists()
        assert (paths["std"] / "model.ckpt.json").exists()
        assert (paths["std"] / "run_config.ini").exists()

    def test_rerun_from_recorded_config_is_byte_identical(self, tmp_path):
        paths = pipeline(tmp_path / "first")
        first_sweep = (paths["sweep"] / "sweep.csv").read_bytes()
        first_metrics = (paths["std"] / "metrics.csv").read_bytes()

        redo = tmp_path / "redo"
        std2 = redo / "std"
        assert run("train", "--config", str(paths["std"] / "run_config.ini"),
                   "--out", str(std2)) == 0
        assert (std2 / "metrics.csv").read_bytes() == first_metrics
        assert (std2 / "model.ckpt").read_bytes() == (paths["std"] / "model.ckpt").read_bytes()

        sweep2 = redo / "sweep"
        assert run("sweep", "--config", str(paths["sweep"] / "run_config.ini"),
                   "--standard", str(std2 / "model.ckpt"),
                   "--out", str(sweep2)) == 0
        assert (sweep2 / "sweep.csv").read_bytes() == first_sweep

    def test_thread_count_does_not_change_outputs(self, tmp_path):
        a = pipeline(tmp_path / "t1", threads="1")
        b = pipeline(tmp_path / "t4", threads="4")
        assert (a["sweep"] / "sweep.csv").read_bytes() == (b["sweep"] / "sweep.csv").read_bytes()

    def test_eval_attack_report(self, tmp_path):
        paths = pipeline(tmp_path)
        evald = tmp_path / "eval"
        assert run("eval", "--model", str(paths["std"] / "model.ckpt"),
                   "--manifest", paths["manifest"], "--out", str(evald)) == 0
        report = json.loads((evald / "report.json").read_text())
        assert 0.0 <= report["clean_accuracy"] <= 1.0
        assert (evald / "per_class.csv").exists()
        assert (evald / "confusion.csv").exists()

        attackd = tmp_path / "attack"
        assert run("attack", "--model", str(paths["std"] / "model.ckpt"),
                   "--manifest", paths["manifest"], "--out", str(attackd),
                   "--epsilon", "0.2", "--steps", "10") == 0
        summary = json.loads((attackd / "attack.json").read_text())
        assert summary["robust_accuracy"] <= summary["clean_accuracy"]
        perturbed = read_hrf(attackd / "perturbed.hrf")
        assert perturbed.shape[0] == summary["n"]

        reportd = tmp_path / "report"
        assert run("report", "--eval", str(evald / "report.json"),
                   "--sweep", str(paths["sweep"] / "sweep.csv"),
                   "--out", str(reportd), "--svg") == 0
        assert (reportd / "report.md").exists()
        assert (reportd / "sweep.svg").exists()
        doc = json.loads((reportd / "report.json").read_text())
        assert "reference_baselines" in doc

    def test_progress_json_lines(self, tmp_path, capsys):
        synth = tmp_path / "s"
        assert run("--json", "synth", "--classes", "3", "--dim", "8",
                   "--per-class", "4", "--out", str(synth), "--seed", "0") == 0
        lines = [json.loads(ln) for ln in capsys.readouterr().out.strip().splitlines()]
        assert any(ln["event"] == "synth" for ln in lines)

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HOROUF_SEED", "123")
        a = tmp_path / "a"
        assert run("synth", "--classes", "3", "--dim", "8", "--per-class", "4",
                   "--out", str(a)) == 0
        cfg = (a / "run_config.ini").read_text()
        assert "seed = 123" in cfg


class TestAudioCommands:
    def test_trim_command(self, tmp_path):
        samples = np.concatenate([np.zeros(640), stable_rng(0, "cli").uniform(-0.8, 0.8, 640),
                                  np.zeros(640)])
        wav = tmp_path / "clip.wav"
        write_wav(AudioClip(samples, 16000), wav)
        out = tmp_path / "trimmed"
        assert run("trim", "--in", str(wav), "--out", str(out)) == 0
        from horouf.audio import read_wav

        trimmed = read_wav(out / "clip.wav")
        assert len(trimmed) == 640

    def test_augment_single_file(self, tmp_path):
        wav = tmp_path / "clip.wav"
        write_wav(AudioClip(stable_rng(1, "cli").uniform(-0.5, 0.5, 400), 16000), wav)
        out = tmp_path / "aug"
        assert run("augment", "--in", str(wav), "--kind", "circular-shift",
                   "--value", "10", "--out", str(out)) == 0
        assert (out / "clip.wav").exists()

    def test_augment_fan_out(self, tmp_path):
        rng = stable_rng(2, "cli")
        entries = []
        for i in range(3):
            write_wav(AudioClip(rng.uniform(-0.5, 0.5, 300), 16000), tmp_path / f"w{i}.wav")
            entries.append(ManifestEntry(id=f"w{i}", label=decode_label(i),
                                         audio_path=f"w{i}.wav", split=Split.TRAIN))
        from horouf.corpus import save_manifest

        save_manifest(Manifest(tuple(entries)), tmp_path / "manifest.jsonl")
        out = tmp_path / "fan"
        assert run("augment", "--manifest", str(tmp_path / "manifest.jsonl"),
                   "--out", str(out), "--specs-per-entry", "2", "--seed", "4") == 0
        grown = load_manifest(out / "manifest.jsonl")
        assert len(grown) == 9

    def test_pool_command(self, tmp_path):
        rng = stable_rng(3, "cli")
        entries = []
        for i in range(2):
            write_hrf(rng.normal(0, 1, (5, 8)).astype(np.float32), tmp_path / f"f{i}.hrf")
            entries.append(ManifestEntry(id=f"f{i}", label=decode_label(i),
                                         embedding_path=f"f{i}.hrf"))
        from horouf.corpus import save_manifest

        save_manifest(Manifest(tuple(entries)), tmp_path / "manifest.jsonl")
        out = tmp_path / "pooled"
        assert run("pool", "--manifest", str(tmp_path / "manifest.jsonl"),
                   "--out", str(out)) == 0
        pooled = read_hrf(out / "f0.hrf")
        assert pooled.shape == (1, 8)
        from horouf.embedding import mean_pool

        expected = mean_pool(read_hrf(tmp_path / "f0.hrf"))
        assert np.array_equal(pooled[0], expected)
