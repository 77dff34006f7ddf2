import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOY_CODEC, TOY_DISC, TOY_GEN, toy_train_config
from melrefine.errors import DataError, NumericsError
from melrefine.losses import LossWeights
from melrefine.model import DiscriminatorBank, DiscriminatorConfig, GeneratorConfig, ResUnetGenerator
from melrefine.training import TrainConfig, fit, load_split_tensors, lr_at, train_step


class TestLrSchedule:
    def test_paper_anchor_points(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == pytest.approx(2e-4)
        assert lr_at(39, cfg) == pytest.approx(2e-4)
        assert lr_at(70, cfg) == pytest.approx(1e-4)
        assert lr_at(100, cfg) == 0.0

    def test_flat_then_linear(self):
        cfg = TrainConfig()
        flat = [lr_at(e, cfg) for e in range(cfg.decay_start_epoch)]
        assert all(v == cfg.lr0 for v in flat)
        tail = [lr_at(e, cfg) for e in range(cfg.decay_start_epoch, cfg.epochs + 1)]
        diffs = np.diff(tail)
        assert np.allclose(diffs, diffs[0])
        assert tail[-1] == 0.0

    def test_out_of_range_rejected(self):
        cfg = TrainConfig()
        with pytest.raises(DataError):
            lr_at(-1, cfg)
        with pytest.raises(DataError):
            lr_at(101, cfg)

    @settings(max_examples=50, deadline=None)
    @given(epoch=st.integers(0, 100))
    def test_within_bounds_everywhere(self, epoch):
        cfg = TrainConfig()
        value = lr_at(epoch, cfg)
        assert 0.0 <= value <= cfg.lr0

    def test_config_validation(self):
        with pytest.raises(DataError):
            TrainConfig(decay_start_epoch=100, epochs=100)
        with pytest.raises(DataError):
            TrainConfig(batch_size=0)
        with pytest.raises(DataError):
            TrainConfig(grad_accum=3, batch_size=16)


def tiny_setup(seed: int = 0, n: int = 4, size: int = 16):
    torch.manual_seed(seed)
    g = ResUnetGenerator(GeneratorConfig(base_width=4, depth=2))
    bank = DiscriminatorBank(DiscriminatorConfig(base_width=4, n_layers=2, num_scales=2))
    g_opt = torch.optim.Adam(g.parameters(), lr=1e-3, betas=(0.5, 0.999), eps=1e-6)
    d_opt = torch.optim.Adam(bank.parameters(), lr=1e-3, betas=(0.5, 0.999), eps=1e-6)
    rng = np.random.default_rng(seed)
    coarse = torch.from_numpy(rng.uniform(-1, 1, (n, 1, size, size))).float()
    real = torch.from_numpy(rng.uniform(-1, 1, (n, 1, size, size))).float()
    return g, bank, g_opt, d_opt, coarse, real


class TestTrainStep:
    def test_deterministic_across_runs(self):
        weights = LossWeights(alpha=0.3, ssim_window=7)
        reports = []
        for _ in range(2):
            g, bank, g_opt, d_opt, coarse, real = tiny_setup(seed=3)
            run = [
                train_step(coarse, real, g, bank, g_opt, d_opt, weights).as_dict()
                for _ in range(3)
            ]
            reports.append(run)
        assert reports[0] == reports[1]

    def test_regression_path_reduces_mse(self):
        # alpha=0: pure SSIM+MSE regression on a single pair
        weights = LossWeights(alpha=0.0, ssim_window=7)
        g, bank, g_opt, d_opt, coarse, real = tiny_setup(seed=1, n=1)
        for group in g_opt.param_groups:
            group["lr"] = 5e-3
        history = [
            train_step(coarse, real, g, bank, g_opt, d_opt, weights).mse
            for _ in range(60)
        ]
        assert np.mean(history[-10:]) < history[0]
        assert np.mean(history[-10:]) < 0.5 * np.mean(history[:10])

    def test_parameters_stay_finite(self):
        weights = LossWeights(alpha=0.5, ssim_window=7)
        g, bank, g_opt, d_opt, coarse, real = tiny_setup(seed=2)
        for _ in range(5):
            train_step(coarse, real, g, bank, g_opt, d_opt, weights)
        for p in list(g.parameters()) + list(bank.parameters()):
            assert torch.isfinite(p).all()

    def test_nan_input_aborts_with_term_name(self):
        weights = LossWeights(ssim_window=7)
        g, bank, g_opt, d_opt, coarse, real = tiny_setup(seed=4)
        coarse[0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericsError, match="adv_d"):
            train_step(coarse, real, g, bank, g_opt, d_opt, weights)

    def test_grad_accum_runs_and_is_deterministic(self):
        weights = LossWeights(ssim_window=7)
        runs = []
        for _ in range(2):
            g, bank, g_opt, d_opt, coarse, real = tiny_setup(seed=5)
            runs.append(
                train_step(coarse, real, g, bank, g_opt, d_opt, weights, grad_accum=2).as_dict()
            )
        assert runs[0] == runs[1]

    def test_batch_shape_mismatch_rejected(self):
        weights = LossWeights(ssim_window=7)
        g, bank, g_opt, d_opt, coarse, real = tiny_setup()
        with pytest.raises(DataError):
            train_step(coarse, real[:2], g, bank, g_opt, d_opt, weights)


def read_log(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def strip_wall_time(records):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


class TestFit:
    def test_log_line_count_and_lr_wiring(self, tiny_run, prepared):
        result = tiny_run["result"]
        records = read_log(result.train_log)
        cfg = toy_train_config()
        n_train = len(prepared["manifest"].train_entries)
        steps = -(-n_train // cfg.batch_size)
        assert len(records) == steps * cfg.epochs
        for r in records:
            assert r["lr"] == lr_at(r["epoch"], cfg)
        evals = read_log(result.eval_log)
        assert len(evals) == cfg.epochs
        assert {"epoch", "ssim_pred", "ssim_coarse"} <= set(evals[0])

    def test_outputs_exist(self, tiny_run):
        out = tiny_run["out"]
        assert (out / "config.json").exists()
        assert tiny_run["result"].final_checkpoint.exists()
        assert (out / "checkpoints" / "epoch_0002.pt").exists()
        blob = json.loads((out / "config.json").read_text())
        assert blob["train"]["epochs"] == 3

    def test_identical_seeded_runs_produce_identical_logs(self, prepared, tmp_path, tiny_run):
        result = fit(
            prepared["manifest"],
            toy_train_config(),
            tmp_path / "rerun",
            pairs_dir=prepared["pairs_dir"],
            dsp_params=prepared["params"],
            codec=TOY_CODEC,
            gen_config=TOY_GEN,
            disc_config=TOY_DISC,
        )
        assert strip_wall_time(read_log(result.train_log)) == strip_wall_time(
            read_log(tiny_run["result"].train_log)
        )

    def test_resume_rejoins_trajectory(self, prepared, tmp_path, tiny_run):
        interrupted = fit(
            prepared["manifest"],
            toy_train_config(epochs=2),
            tmp_path / "short",
            pairs_dir=prepared["pairs_dir"],
            dsp_params=prepared["params"],
            codec=TOY_CODEC,
            gen_config=TOY_GEN,
            disc_config=TOY_DISC,
        )
        resumed = fit(
            prepared["manifest"],
            toy_train_config(epochs=3),
            tmp_path / "short",
            pairs_dir=prepared["pairs_dir"],
            dsp_params=prepared["params"],
            codec=TOY_CODEC,
            gen_config=TOY_GEN,
            disc_config=TOY_DISC,
            resume=interrupted.final_checkpoint,
        )
        assert resumed.epochs_run == 1
        full = strip_wall_time(read_log(tiny_run["result"].train_log))
        stitched = strip_wall_time(read_log(resumed.train_log))
        assert stitched == full

    def test_missing_pairs_rejected(self, prepared, tmp_path):
        with pytest.raises(DataError, match="pair record missing"):
            fit(
                prepared["manifest"],
                toy_train_config(),
                tmp_path / "nowhere",
                pairs_dir=tmp_path / "empty",
                dsp_params=prepared["params"],
                codec=TOY_CODEC,
                gen_config=TOY_GEN,
                disc_config=TOY_DISC,
            )

    def test_load_split_tensors_shapes(self, prepared):
        coarse, real, ids = load_split_tensors(
            prepared["manifest"], prepared["pairs_dir"], prepared["params"], TOY_CODEC, "test"
        )
        assert coarse.shape == real.shape == (4, 1, 32, 32)
        assert len(ids) == 4
