"""Alternating generator/discriminator optimization.

Each step runs one discriminator update on its least-squares term, then one
generator update on the combined objective. Adam hyperparameters and the
learning-rate schedule follow the defaults in TrainConfig: flat lr0 until
``decay_start_epoch``, then linear decay hitting exactly zero at ``epochs``.

Runs are reproducible: weight init comes from ``torch.manual_seed(seed)``,
epoch shuffles from ``default_rng([seed, epoch])``, and Griffin-Lim seeds
live in the data, so two runs with one config produce identical loss logs
and a resumed run rejoins the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .dsp import DspParams
from .errors import DataError, NumericsError
from .imaging import ImageCodecParams, SpectrogramImage, center_crop_frames, mel_to_image
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    feature_matching_loss,
    mse_loss,
    ssim_loss,
    ssim_mean,
    total_generator_loss,
)
from .model import (
    DiscriminatorBank,
    DiscriminatorConfig,
    GeneratorConfig,
    ResUnetGenerator,
    load_checkpoint,
    models_from_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 100
    lr0: float = 2e-4
    decay_start_epoch: int = 40
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    seed: int = 0
    scales: int = 4
    grad_accum: int = 1
    checkpoint_every: int = 10
    eval_clips: int = 4
    frame_budget: int | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if not 0 <= self.decay_start_epoch < self.epochs:
            raise DataError(
                f"need 0 <= decay_start_epoch < epochs, got "
                f"{self.decay_start_epoch} / {self.epochs}"
            )
        if self.lr0 <= 0:
            raise DataError("lr0 must be positive")
        if self.scales < 1:
            raise DataError("scales must be >= 1")
        if self.grad_accum < 1 or self.batch_size % self.grad_accum:
            raise DataError("grad_accum must divide batch_size")
        if self.checkpoint_every < 1:
            raise DataError("checkpoint_every must be >= 1")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for an epoch: flat, then linear to 0 at ``epochs``."""
    if not 0 <= epoch <= cfg.epochs:
        raise DataError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if epoch < cfg.decay_start_epoch:
        return cfg.lr0
    return cfg.lr0 * (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start_epoch)


def _require_finite(name: str, value: torch.Tensor) -> None:
    if not bool(torch.isfinite(value).all()):
        raise NumericsError(f"loss term {name!r} is not finite: {float(value)}")


def _require_finite_params(tag: str, module: torch.nn.Module) -> None:
    for pname, p in module.named_parameters():
        if not bool(torch.isfinite(p).all()):
            raise NumericsError(f"{tag} parameter {pname!r} became non-finite")


def train_step(
    coarse: torch.Tensor,
    real: torch.Tensor,
    generator: ResUnetGenerator,
    bank: DiscriminatorBank,
    g_opt: torch.optim.Optimizer,
    d_opt: torch.optim.Optimizer,
    weights: LossWeights,
    grad_accum: int = 1,
) -> LossReport:
    """One D update then one G update on a (coarse, original) image batch."""
    if coarse.shape != real.shape or coarse.dim() != 4:
        raise DataError(
            f"batch shapes must match and be 4-D, got {tuple(coarse.shape)} "
            f"vs {tuple(real.shape)}"
        )
    batch = coarse.shape[0]
    chunks = list(zip(torch.chunk(coarse, grad_accum), torch.chunk(real, grad_accum)))

    # discriminator update (generator frozen for this pass)
    d_opt.zero_grad(set_to_none=True)
    adv_d_total = 0.0
    for c_chunk, r_chunk in chunks:
        frac = c_chunk.shape[0] / batch
        with torch.no_grad():
            fake = generator(c_chunk)
        real_out = bank(c_chunk, r_chunk)
        fake_out = bank(c_chunk, fake)
        _, d_term = adversarial_loss(
            bank.logits(real_out), bank.logits(fake_out), weights.adv_form
        )
        _require_finite("adv_d", d_term)
        (d_term * frac).backward()
        adv_d_total += float(d_term.detach()) * frac
    d_opt.step()
    _require_finite_params("discriminator", bank)

    # generator update against the just-updated discriminators
    g_opt.zero_grad(set_to_none=True)
    sums = {"adv_g": 0.0, "fm": 0.0, "ssim": 0.0, "mse": 0.0, "total_g": 0.0}
    for c_chunk, r_chunk in chunks:
        frac = c_chunk.shape[0] / batch
        fake = generator(c_chunk)
        fake_out = bank(c_chunk, fake)
        with torch.no_grad():
            real_out = bank(c_chunk, r_chunk)
        adv_g, _ = adversarial_loss(
            bank.logits(real_out), bank.logits(fake_out), weights.adv_form
        )
        fm = feature_matching_loss(bank.features(real_out), bank.features(fake_out))
        ssim_term = ssim_loss(fake, r_chunk, weights)
        mse_term = mse_loss(fake, r_chunk)
        for name, value in (
            ("adv_g", adv_g),
            ("fm", fm),
            ("ssim", ssim_term),
            ("mse", mse_term),
        ):
            _require_finite(name, value)
        total, report = total_generator_loss(
            adv_g, adv_d_total, fm, ssim_term, mse_term, weights
        )
        (total * frac).backward()
        for name in ("adv_g", "fm", "ssim", "mse", "total_g"):
            sums[name] += report.as_dict()[name] * frac
    g_opt.step()
    _require_finite_params("generator", generator)

    return LossReport(
        adv_g=sums["adv_g"],
        adv_d=adv_d_total,
        fm=sums["fm"],
        ssim=sums["ssim"],
        mse=sums["mse"],
        total_g=sums["total_g"],
    )


def _encode_pair(
    pair: dataio.PairedExample,
    codec: ImageCodecParams,
    frame_budget: int | None,
) -> tuple[SpectrogramImage, SpectrogramImage]:
    coarse_mel, orig_mel = pair.coarse, pair.original
    if frame_budget is not None:
        coarse_mel = center_crop_frames(coarse_mel, frame_budget)
        orig_mel = center_crop_frames(orig_mel, frame_budget)
    return (
        mel_to_image(coarse_mel, codec, frame_budget),
        mel_to_image(orig_mel, codec, frame_budget),
    )


def load_split_tensors(
    manifest: dataio.CorpusManifest,
    pairs_dir: str | Path,
    params: DspParams,
    codec: ImageCodecParams,
    split: str,
    frame_budget: int | None = None,
    limit: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    """Stack a split's pair images into (coarse, original) float32 tensors."""
    entries = manifest.split_entries(split)
    if limit is not None:
        entries = entries[:limit]
    coarse_list, real_list, ids = [], [], []
    for entry in entries:
        path = dataio.pair_path(pairs_dir, entry.clip_id)
        if not path.exists():
            raise DataError(
                f"pair record missing for clip {entry.clip_id!r}: {path}; "
                "run data preparation first"
            )
        pair = dataio.read_pair(path, params)
        c_img, o_img = _encode_pair(pair, codec, frame_budget)
        coarse_list.append(torch.from_numpy(c_img.pixels).float())
        real_list.append(torch.from_numpy(o_img.pixels).float())
        ids.append(entry.clip_id)
    if not coarse_list:
        raise DataError(f"no pairs found for split {split!r}")
    return torch.stack(coarse_list)[:, None], torch.stack(real_list)[:, None], ids


@dataclass
class FitResult:
    final_checkpoint: Path
    train_log: Path
    eval_log: Path
    epochs_run: int


def fit(
    manifest: dataio.CorpusManifest,
    cfg: TrainConfig,
    out_dir: str | Path,
    *,
    pairs_dir: str | Path,
    dsp_params: DspParams,
    codec: ImageCodecParams | None = None,
    gen_config: GeneratorConfig | None = None,
    disc_config: DiscriminatorConfig | None = None,
    resume: str | Path | None = None,
    device: str = "cpu",
) -> FitResult:
    """Train on the manifest's train split; see module docstring.

    Writes ``train_log.jsonl`` (one record per step), ``eval_log.jsonl``
    (one record per epoch, SSIM on a small held-out subset), ``config.json``
    and ``checkpoints/``. ``resume`` continues a previous run, appending to
    its logs and reproducing the uninterrupted trajectory.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    codec = codec or ImageCodecParams()
    gen_config = gen_config or GeneratorConfig()
    if disc_config is None:
        disc_config = DiscriminatorConfig(num_scales=cfg.scales)

    torch.manual_seed(cfg.seed)
    coarse_all, real_all, _ = load_split_tensors(
        manifest, pairs_dir, dsp_params, codec, "train", cfg.frame_budget
    )
    coarse_all = coarse_all.to(device)
    real_all = real_all.to(device)
    n_clips = coarse_all.shape[0]

    # held-out subset for per-epoch SSIM: test split if materialized, else
    # the tail of the train split (desk-scale overfit runs have no test set)
    try:
        eval_coarse, eval_real, _ = load_split_tensors(
            manifest, pairs_dir, dsp_params, codec, "test", cfg.frame_budget,
            limit=cfg.eval_clips,
        )
    except DataError:
        take = min(cfg.eval_clips, n_clips)
        eval_coarse, eval_real = coarse_all[-take:], real_all[-take:]

    generator = ResUnetGenerator(gen_config).to(device)
    bank = DiscriminatorBank(disc_config).to(device)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    g_opt = torch.optim.Adam(generator.parameters(), lr=cfg.lr0, betas=betas, eps=cfg.adam_eps)
    d_opt = torch.optim.Adam(bank.parameters(), lr=cfg.lr0, betas=betas, eps=cfg.adam_eps)

    start_epoch = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        generator, bank = models_from_checkpoint(payload)
        generator = generator.to(device)
        bank = bank.to(device)
        g_opt = torch.optim.Adam(generator.parameters(), lr=cfg.lr0, betas=betas, eps=cfg.adam_eps)
        d_opt = torch.optim.Adam(bank.parameters(), lr=cfg.lr0, betas=betas, eps=cfg.adam_eps)
        if payload["g_opt_state"] is None or payload["d_opt_state"] is None:
            raise DataError(f"checkpoint {resume} has no optimizer state; cannot resume")
        g_opt.load_state_dict(payload["g_opt_state"])
        d_opt.load_state_dict(payload["d_opt_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        start_epoch = int(payload["extra"]["next_epoch"])
        if start_epoch >= cfg.epochs:
            raise DataError(
                f"checkpoint already covers epoch {start_epoch}; nothing to resume"
            )

    config_blob = {
        "train": asdict(cfg),
        "generator": asdict(gen_config),
        "discriminator": asdict(disc_config),
        "codec": asdict(codec),
        "dsp": asdict(dsp_params),
        "dsp_fingerprint": dsp_params.fingerprint(),
        "train_clips": n_clips,
    }
    (out_dir / "config.json").write_text(
        json.dumps(config_blob, indent=2, sort_keys=True) + "\n"
    )
    log.info(
        "training on %d pairs, generator %d params, discriminators %d params",
        n_clips,
        generator.parameter_count(),
        bank.parameter_count(),
    )

    train_log = out_dir / "train_log.jsonl"
    eval_log = out_dir / "eval_log.jsonl"
    ckpt_dir = out_dir / "checkpoints"
    mode = "a" if resume is not None else "w"
    steps_per_epoch = (n_clips + cfg.batch_size - 1) // cfg.batch_size
    started = time.monotonic()

    def checkpoint(path: Path, next_epoch: int) -> None:
        save_checkpoint(
            path, generator, bank, g_opt, d_opt,
            extra={"next_epoch": next_epoch, "config": config_blob},
        )

    with open(train_log, mode) as tlog, open(eval_log, mode) as elog:
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_at(epoch, cfg)
            for group in (*g_opt.param_groups, *d_opt.param_groups):
                group["lr"] = lr
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n_clips)
            generator.train()
            bank.train()
            for step in range(steps_per_epoch):
                idx = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
                batch_idx = torch.from_numpy(idx.copy())
                report = train_step(
                    coarse_all[batch_idx],
                    real_all[batch_idx],
                    generator,
                    bank,
                    g_opt,
                    d_opt,
                    cfg.loss_weights,
                    cfg.grad_accum,
                )
                record = {"epoch": epoch, "step": step, "lr": lr}
                record.update(report.as_dict())
                record["wall_time"] = round(time.monotonic() - started, 3)
                tlog.write(json.dumps(record, sort_keys=True) + "\n")
            generator.eval()
            with torch.no_grad():
                pred = generator(eval_coarse.to(device))
                eval_record = {
                    "epoch": epoch,
                    "ssim_pred": float(ssim_mean(pred, eval_real.to(device), cfg.loss_weights)),
                    "ssim_coarse": float(
                        ssim_mean(eval_coarse.to(device), eval_real.to(device), cfg.loss_weights)
                    ),
                }
            elog.write(json.dumps(eval_record, sort_keys=True) + "\n")
            tlog.flush()
            elog.flush()
            if (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
                checkpoint(ckpt_dir / f"epoch_{epoch + 1:04d}.pt", epoch + 1)
        final_path = ckpt_dir / "final.pt"
        checkpoint(final_path, cfg.epochs)
    return FitResult(final_path, train_log, eval_log, cfg.epochs - start_epoch)
