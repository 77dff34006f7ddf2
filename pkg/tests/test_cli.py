import json
import shutil
import subprocess

import numpy as np
import pytest

from melrefine import dataio
from melrefine.cli import main
from melrefine.dsp import DspParams

SR = 16000

TRAIN_FLAGS = [
    "--batch-size", "2", "--epochs", "1", "--decay-start-epoch", "0",
    "--lr0", "1e-3", "--image-size", "32", "--base-width", "8", "--depth", "2",
    "--disc-base-width", "8", "--disc-layers", "2", "--scales", "2",
    "--ssim-window", "7", "--alpha", "0.1", "--checkpoint-every", "5",
]


def run(argv) -> int:
    return main(argv)


class TestPrepare:
    def test_happy_path_and_idempotence(self, toy_corpus, tmp_path, capsys):
        out = tmp_path / "prep"
        argv = [
            "prepare", "--audio-dir", str(toy_corpus), "--out-dir", str(out),
            "--train-count", "6", "--test-count", "4", "--seed", "0",
        ]
        assert run(argv) == 0
        assert (out / "manifest.tsv").exists()
        assert (out / "resolved_config.json").exists()
        pairs = sorted((out / "pairs").glob("*.melpair"))
        assert len(pairs) == 10
        before = {p.name: p.read_bytes() for p in pairs}
        manifest_before = (out / "manifest.tsv").read_bytes()
        assert run(argv) == 0
        assert (out / "manifest.tsv").read_bytes() == manifest_before
        for p in sorted((out / "pairs").glob("*.melpair")):
            assert p.read_bytes() == before[p.name]

    def test_missing_dir_fails_with_data_error(self, tmp_path, capsys):
        code = run([
            "prepare", "--audio-dir", str(tmp_path / "nope"), "--out-dir",
            str(tmp_path / "o"), "--train-count", "1", "--test-count", "0",
        ])
        assert code == 2
        assert "error" in capsys.readouterr().err.lower()

    def test_insufficient_clips(self, toy_corpus, tmp_path):
        assert run([
            "prepare", "--audio-dir", str(toy_corpus), "--out-dir",
            str(tmp_path / "o"), "--train-count", "20", "--test-count", "0",
        ]) == 2

    def test_missing_counts_is_usage_error(self, toy_corpus, tmp_path):
        assert run([
            "prepare", "--audio-dir", str(toy_corpus), "--out-dir", str(tmp_path / "o"),
        ]) == 1


@pytest.fixture(scope="module")
def cli_prepared(toy_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cliprep")
    assert run([
        "prepare", "--audio-dir", str(toy_corpus), "--out-dir", str(out),
        "--train-count", "6", "--test-count", "4", "--seed", "0",
    ]) == 0
    return out


@pytest.fixture(scope="module")
def cli_trained(cli_prepared, tmp_path_factory):
    out = tmp_path_factory.mktemp("clitrain")
    code = run([
        "train", "--manifest", str(cli_prepared / "manifest.tsv"),
        "--pairs-dir", str(cli_prepared / "pairs"), "--out-dir", str(out),
        *TRAIN_FLAGS,
    ])
    assert code == 0
    return out


class TestTrain:
    def test_outputs(self, cli_trained):
        assert (cli_trained / "checkpoints" / "final.pt").exists()
        assert (cli_trained / "train_log.jsonl").exists()
        assert (cli_trained / "resolved_config.json").exists()

    def test_missing_pairs_fails(self, cli_prepared, tmp_path):
        assert run([
            "train", "--manifest", str(cli_prepared / "manifest.tsv"),
            "--pairs-dir", str(tmp_path / "empty"), "--out-dir", str(tmp_path / "o"),
            *TRAIN_FLAGS,
        ]) == 2

    def test_resume_appends_log(self, cli_prepared, tmp_path):
        out = tmp_path / "resume"
        base = [
            "train", "--manifest", str(cli_prepared / "manifest.tsv"),
            "--pairs-dir", str(cli_prepared / "pairs"), "--out-dir", str(out),
            "--batch-size", "2", "--decay-start-epoch", "0", "--lr0", "1e-3",
            "--image-size", "32", "--base-width", "8", "--depth", "2",
            "--disc-base-width", "8", "--disc-layers", "2", "--scales", "2",
            "--ssim-window", "7", "--checkpoint-every", "1",
        ]
        assert run(base + ["--epochs", "1"]) == 0
        lines_before = (out / "train_log.jsonl").read_text().splitlines()
        assert run(base + [
            "--epochs", "2", "--resume", str(out / "checkpoints" / "final.pt"),
        ]) == 0
        lines_after = (out / "train_log.jsonl").read_text().splitlines()
        assert len(lines_after) == 2 * len(lines_before)
        assert lines_after[: len(lines_before)] == lines_before


class TestInfer:
    def test_pair_input_and_shape(self, cli_prepared, cli_trained, tmp_path):
        pair_file = sorted((cli_prepared / "pairs").glob("*.melpair"))[0]
        out_npy = tmp_path / "pred.npy"
        argv = [
            "infer", "--checkpoint", str(cli_trained / "checkpoints" / "final.pt"),
            "--input", str(pair_file), "--output", str(out_npy),
            "--image-size", "32", "--ssim-window", "7",
        ]
        assert run(argv) == 0
        pred = np.load(out_npy)
        pair = dataio.read_pair(pair_file, DspParams(sample_rate=SR))
        assert pred.shape == pair.coarse.values.shape

    def test_repeat_invocations_identical(self, cli_prepared, cli_trained, tmp_path):
        pair_file = sorted((cli_prepared / "pairs").glob("*.melpair"))[0]
        outs = []
        for name in ("a", "b"):
            out_npy = tmp_path / f"{name}.npy"
            wav = tmp_path / f"{name}.wav"
            assert run([
                "infer", "--checkpoint", str(cli_trained / "checkpoints" / "final.pt"),
                "--input", str(pair_file), "--output", str(out_npy), "--wav", str(wav),
                "--image-size", "32", "--ssim-window", "7", "--seed", "0",
            ]) == 0
            outs.append((out_npy.read_bytes(), wav.read_bytes()))
        assert outs[0] == outs[1]

    def test_npy_input(self, cli_trained, tmp_path, dsp16, speech_clip):
        from melrefine.dsp import wav_to_mel

        mel = wav_to_mel(speech_clip, dsp16)
        src = tmp_path / "mel.npy"
        np.save(src, mel.values.astype(np.float32))
        out = tmp_path / "pred.npy"
        assert run([
            "infer", "--checkpoint", str(cli_trained / "checkpoints" / "final.pt"),
            "--input", str(src), "--output", str(out), "--sample-rate", str(SR),
            "--image-size", "32", "--ssim-window", "7",
        ]) == 0
        assert np.load(out).shape == mel.values.shape

    def test_missing_checkpoint_fails(self, cli_prepared, tmp_path):
        pair_file = sorted((cli_prepared / "pairs").glob("*.melpair"))[0]
        assert run([
            "infer", "--checkpoint", str(tmp_path / "none.pt"),
            "--input", str(pair_file), "--output", str(tmp_path / "o.npy"),
        ]) == 2


class TestEvaluate:
    def test_report_rows_and_summary(self, cli_prepared, cli_trained, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run([
            "evaluate", "--manifest", str(cli_prepared / "manifest.tsv"),
            "--pairs-dir", str(cli_prepared / "pairs"),
            "--checkpoint", str(cli_trained / "checkpoints" / "final.pt"),
            "--out-dir", str(out), "--image-size", "32", "--ssim-window", "7",
        ])
        assert code == 0
        report_lines = (out / "report.tsv").read_text().splitlines()
        assert len(report_lines) == 1 + 4  # header + test split rows
        summary = (out / "summary.txt").read_text()
        for condition in ("coarse", "predicted", "original"):
            assert condition in summary
        assert "original" in capsys.readouterr().out

    def test_failing_external_vocoder_signals_partial(self, cli_prepared, cli_trained, tmp_path):
        out = tmp_path / "evalfail"
        code = run([
            "evaluate", "--manifest", str(cli_prepared / "manifest.tsv"),
            "--pairs-dir", str(cli_prepared / "pairs"),
            "--checkpoint", str(cli_trained / "checkpoints" / "final.pt"),
            "--out-dir", str(out), "--image-size", "32", "--ssim-window", "7",
            "--external-vocoder", "false {mel_in} {wav_out}",
        ])
        assert code == 2
        assert "error" in (out / "report.tsv").read_text().splitlines()[0]


class TestPlot:
    def _mels(self, tmp_path, n, shape=(80, 60)):
        rng = np.random.default_rng(0)
        paths = []
        for i in range(n):
            path = tmp_path / f"mel{i}.npy"
            np.save(path, rng.uniform(-11.5, 0.0, shape).astype(np.float32))
            paths.append(str(path))
        return paths

    def test_three_panel_figure(self, tmp_path):
        out = tmp_path / "fig.png"
        assert run(["plot", *self._mels(tmp_path, 3), "--output", str(out)]) == 0
        assert out.stat().st_size > 0

    def test_two_panel_figure(self, tmp_path):
        out = tmp_path / "fig2.png"
        assert run(["plot", *self._mels(tmp_path, 2), "--output", str(out)]) == 0
        assert out.exists()

    def test_mismatched_shapes_fail(self, tmp_path):
        a, b = self._mels(tmp_path, 2)
        bad = tmp_path / "bad.npy"
        np.save(bad, np.zeros((40, 60), dtype=np.float32))
        assert run(["plot", a, str(bad), "--output", str(tmp_path / "f.png")]) == 2

    def test_wrong_panel_count_is_usage_error(self, tmp_path):
        (a,) = self._mels(tmp_path, 1)
        assert run(["plot", a, "--output", str(tmp_path / "f.png")]) == 1


class TestHelpAndUsage:
    @pytest.mark.parametrize(
        "command,expected",
        [
            ("prepare", ["1024", "256", "80", "60", "1e-5"]),
            ("train", ["16", "100", "2e-4", "40", "0.5", "0.999", "1e-6", "10"]),
            ("infer", ["512", "lsgan"]),
            ("evaluate", ["512", "0.5"]),
        ],
    )
    def test_help_lists_paper_defaults(self, command, expected, capsys):
        assert run([command, "--help"]) == 0
        text = capsys.readouterr().out
        for token in expected:
            assert token in text, f"{command} --help missing default {token}"

    def test_top_level_help(self, capsys):
        assert run(["--help"]) == 0
        out = capsys.readouterr().out
        for sub in ("prepare", "train", "infer", "evaluate", "plot"):
            assert sub in out

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["prepare", "--bogus"]) == 1

    def test_missing_subcommand_is_usage_error(self):
        assert run([]) == 1

    def test_console_script_installed(self):
        exe = shutil.which("melrefine")
        if exe is None:
            pytest.skip("console script not on PATH")
        proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "prepare" in proc.stdout


class TestConfigFile:
    def test_precedence_default_file_flag(self, toy_corpus, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "dsp": {"n_mels": 40, "hop_length": 128},
            "prepare": {"seed": 5},
        }))
        out = tmp_path / "prep"
        assert run([
            "prepare", "--audio-dir", str(toy_corpus), "--out-dir", str(out),
            "--train-count", "2", "--test-count", "1",
            "--config", str(config), "--n-mels", "20",
        ]) == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["dsp"]["n_mels"] == 20  # flag beats file
        assert resolved["dsp"]["hop_length"] == 128  # file beats default
        assert resolved["dsp"]["n_fft"] == 1024  # default
        assert resolved["prepare"]["seed"] == 5

    def test_bad_config_file_is_data_error(self, toy_corpus, tmp_path):
        config = tmp_path / "broken.json"
        config.write_text("{not json")
        assert run([
            "prepare", "--audio-dir", str(toy_corpus), "--out-dir", str(tmp_path / "o"),
            "--train-count", "1", "--test-count", "0", "--config", str(config),
        ]) == 2
