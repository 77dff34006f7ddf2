import numpy as np
import pytest
import torch

from melrefine import dataio
from melrefine.dsp import DspParams
from melrefine.imaging import ImageCodecParams
from melrefine.losses import LossWeights
from melrefine.model import DiscriminatorConfig, GeneratorConfig
from melrefine.synth import speech_like
from melrefine.training import TrainConfig, fit

SR = 16000


@pytest.fixture(scope="session")
def dsp16() -> DspParams:
    return DspParams(sample_rate=SR)


@pytest.fixture(scope="session")
def speech_clip() -> np.ndarray:
    return speech_like(0, SR, 1.5)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Directory of 10 one-second mono wavs at 16 kHz."""
    root = tmp_path_factory.mktemp("corpus")
    for seed in range(10):
        dataio.write_wav(root / f"clip{seed:02d}.wav", speech_like(seed, SR, 1.0), SR)
    return root


@pytest.fixture(scope="session")
def prepared(toy_corpus, dsp16, tmp_path_factory):
    """Manifest (6 train / 4 test) plus materialized pairs."""
    root = tmp_path_factory.mktemp("prepared")
    manifest = dataio.build_manifest(toy_corpus, 6, 4, seed=0, params=dsp16)
    manifest_path = root / "manifest.tsv"
    manifest.save(manifest_path)
    pairs_dir = root / "pairs"
    written = dataio.materialize_pairs(manifest, dsp16, pairs_dir)
    assert written == 10
    return {
        "manifest": manifest,
        "manifest_path": manifest_path,
        "pairs_dir": pairs_dir,
        "params": dsp16,
    }


TOY_CODEC = ImageCodecParams(target_size=(32, 32))
TOY_GEN = GeneratorConfig(base_width=8, depth=2)
TOY_DISC = DiscriminatorConfig(base_width=8, n_layers=2, num_scales=2)


def toy_train_config(**overrides) -> TrainConfig:
    base = dict(
        batch_size=2,
        epochs=3,
        lr0=1e-3,
        decay_start_epoch=1,
        seed=0,
        scales=2,
        checkpoint_every=2,
        eval_clips=2,
        loss_weights=LossWeights(alpha=0.1, ssim_window=7),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_run(prepared, tmp_path_factory):
    """A short but real training run; checkpoint shared by later tests."""
    out = tmp_path_factory.mktemp("tinyrun")
    result = fit(
        prepared["manifest"],
        toy_train_config(),
        out,
        pairs_dir=prepared["pairs_dir"],
        dsp_params=prepared["params"],
        codec=TOY_CODEC,
        gen_config=TOY_GEN,
        disc_config=TOY_DISC,
    )
    return {"result": result, "out": out, "codec": TOY_CODEC}


@pytest.fixture(autouse=True)
def _fixed_torch_threads():
    torch.set_num_threads(min(4, torch.get_num_threads()))
    yield
