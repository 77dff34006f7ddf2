"""Command-line surface: prepare | train | infer | evaluate | plot.

Exit codes: 0 success, 1 usage, 2 data error, 3 runtime/numeric error.

Every value can come from three places, later wins: built-in defaults,
a JSON config file (``--config``, sections "dsp", "codec", "generator",
"discriminator", "train", "loss", "prepare"), then explicit flags. The
fully resolved configuration is written into each command's output
directory for provenance.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataio, metrics, training
from .dsp import DspParams, MelSpectrogram, griffin_lim, mel_to_linear
from .errors import DataError, MelRefineError, NumericsError
from .imaging import ImageCodecParams
from .losses import LossWeights
from .model import DiscriminatorConfig, GeneratorConfig, load_checkpoint, models_from_checkpoint

log = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


DSP_DEFAULTS = {
    "sample_rate": None,  # prepare: taken from the corpus; other commands: 22050
    "n_fft": 1024,
    "win_length": 1024,
    "hop_length": 256,
    "n_mels": 80,
    "fmin": 0.0,
    "fmax": None,
    "griffin_lim_iters": 60,
    "log_floor": 1e-5,
    "filterbank_norm": "area",
}

TRAIN_DEFAULTS = {
    "batch_size": 16,
    "epochs": 100,
    "lr0": 2e-4,
    "decay_start_epoch": 40,
    "adam_beta1": 0.5,
    "adam_beta2": 0.999,
    "adam_eps": 1e-6,
    "seed": 0,
    "scales": 4,
    "grad_accum": 1,
    "checkpoint_every": 10,
    "eval_clips": 4,
    "frame_budget": None,
}

LOSS_DEFAULTS = {"alpha": 0.5, "fm_weight": 10.0, "ssim_window": 11, "adv_form": "lsgan"}
GEN_DEFAULTS = {"base_width": 64, "depth": 4, "residual_blocks_per_level": 1}
DISC_DEFAULTS = {"base_width": 64, "n_layers": 4}
IMAGE_SIZE_DEFAULT = 512


class Resolver:
    """default < config file < explicit flag, recording what was used."""

    def __init__(self, config_path: str | None):
        self.file: dict = {}
        if config_path:
            try:
                self.file = json.loads(Path(config_path).read_text())
            except FileNotFoundError:
                raise DataError(f"config file not found: {config_path}")
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {config_path} is not valid JSON: {exc}")
        self.resolved: dict = {}

    def get(self, section: str, key: str, flag_value, default):
        if flag_value is not None:
            value = flag_value
        elif key in self.file.get(section, {}):
            value = self.file[section][key]
        else:
            value = default
        self.resolved.setdefault(section, {})[key] = value
        return value

    def dump(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.resolved, indent=2, sort_keys=True) + "\n")


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")


def _add_dsp_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dsp")
    g.add_argument("--sample-rate", type=int, help="expected sample rate in Hz (default: the corpus rate)")
    g.add_argument("--n-fft", type=int, help="FFT frame length in samples (default: 1024)")
    g.add_argument("--win-length", type=int, help="analysis window length in samples (default: 1024)")
    g.add_argument("--hop-length", type=int, help="hop between frames in samples (default: 256)")
    g.add_argument("--n-mels", type=int, help="mel filterbank channels (default: 80)")
    g.add_argument("--fmin", type=float, help="lowest filterbank frequency in Hz (default: 0)")
    g.add_argument("--fmax", type=float, help="highest filterbank frequency in Hz (default: sample_rate/2)")
    g.add_argument("--griffin-lim-iters", type=int, help="Griffin-Lim iterations (default: 60)")
    g.add_argument("--log-floor", type=float, help="magnitude floor before the log (default: 1e-5)")
    g.add_argument("--filterbank-norm", choices=["area", "peak"], help="filter normalization (default: area)")


def _add_codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--image-size", type=int, help="square model input size in pixels (default: 512)")


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("loss")
    g.add_argument("--alpha", type=float, help="importance factor between adversarial and pixel loss groups (default: 0.5)")
    g.add_argument("--fm-weight", type=float, help="feature matching weight inside the adversarial group (default: 10)")
    g.add_argument("--ssim-window", type=int, help="SSIM Gaussian window size in pixels (default: 11)")
    g.add_argument("--adv-form", choices=["lsgan", "logistic"], help="adversarial loss form (default: lsgan)")


def _resolve_dsp(res: Resolver, args, default_rate: int | None = 22050) -> DspParams:
    rate = res.get("dsp", "sample_rate", args.sample_rate, default_rate)
    if rate is None:
        raise _UsageError("--sample-rate is required here")
    return DspParams(
        sample_rate=int(rate),
        n_fft=res.get("dsp", "n_fft", args.n_fft, DSP_DEFAULTS["n_fft"]),
        win_length=res.get("dsp", "win_length", args.win_length, DSP_DEFAULTS["win_length"]),
        hop_length=res.get("dsp", "hop_length", args.hop_length, DSP_DEFAULTS["hop_length"]),
        n_mels=res.get("dsp", "n_mels", args.n_mels, DSP_DEFAULTS["n_mels"]),
        fmin=res.get("dsp", "fmin", args.fmin, DSP_DEFAULTS["fmin"]),
        fmax=res.get("dsp", "fmax", args.fmax, DSP_DEFAULTS["fmax"]),
        griffin_lim_iters=res.get("dsp", "griffin_lim_iters", args.griffin_lim_iters, DSP_DEFAULTS["griffin_lim_iters"]),
        log_floor=res.get("dsp", "log_floor", args.log_floor, DSP_DEFAULTS["log_floor"]),
        filterbank_norm=res.get("dsp", "filterbank_norm", args.filterbank_norm, DSP_DEFAULTS["filterbank_norm"]),
    )


def _resolve_codec(res: Resolver, args) -> ImageCodecParams:
    size = res.get("codec", "image_size", args.image_size, IMAGE_SIZE_DEFAULT)
    return ImageCodecParams(target_size=(size, size))


def _resolve_weights(res: Resolver, args) -> LossWeights:
    return LossWeights(
        alpha=res.get("loss", "alpha", args.alpha, LOSS_DEFAULTS["alpha"]),
        fm_weight=res.get("loss", "fm_weight", args.fm_weight, LOSS_DEFAULTS["fm_weight"]),
        ssim_window=res.get("loss", "ssim_window", args.ssim_window, LOSS_DEFAULTS["ssim_window"]),
        adv_form=res.get("loss", "adv_form", args.adv_form, LOSS_DEFAULTS["adv_form"]),
    )


def cmd_prepare(args) -> int:
    res = Resolver(args.config)
    audio_dir = Path(args.audio_dir)
    out_dir = Path(args.out_dir)
    train_count = res.get("prepare", "train_count", args.train_count, None)
    test_count = res.get("prepare", "test_count", args.test_count, None)
    if train_count is None or test_count is None:
        raise _UsageError("--train-count and --test-count are required")
    seed = res.get("prepare", "seed", args.seed, 0)
    trim_db = res.get("prepare", "trim_silence_db", args.trim_silence_db, None)
    if not audio_dir.is_dir():
        raise DataError(f"{audio_dir} is not a directory")
    probed = dataio_probe_rate(audio_dir)
    if probed is None and args.sample_rate is None:
        raise DataError(f"no decodable mono wav clips in {audio_dir}")
    params = _resolve_dsp(res, args, default_rate=probed)
    manifest = dataio.build_manifest(audio_dir, int(train_count), int(test_count), int(seed), params)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.save(out_dir / "manifest.tsv")
    written = dataio.materialize_pairs(manifest, params, out_dir / "pairs", trim_db)
    res.dump(out_dir / "resolved_config.json")
    total = len(manifest.entries)
    print(f"manifest: {total} clips ({len(manifest.train_entries)} train / "
          f"{len(manifest.test_entries)} test), sample rate {manifest.sample_rate} Hz")
    print(f"pairs written: {written} of {total} -> {out_dir / 'pairs'}")
    if written < total:
        print("some clips failed; see warnings above", file=sys.stderr)
        return 2
    return 0


def dataio_probe_rate(audio_dir: Path) -> int | None:
    """Rate of the first decodable mono wav, for defaulting --sample-rate."""
    if not audio_dir.is_dir():
        return None
    for wav_path in sorted(audio_dir.glob("*.wav")):
        try:
            _, rate = dataio.read_wav(wav_path)
            return rate
        except MelRefineError:
            continue
    return None


def cmd_train(args) -> int:
    res = Resolver(args.config)
    manifest = dataio.CorpusManifest.load(args.manifest)
    params = _resolve_dsp(res, args, default_rate=manifest.sample_rate)
    codec = _resolve_codec(res, args)
    weights = _resolve_weights(res, args)
    t = TRAIN_DEFAULTS
    cfg = training.TrainConfig(
        batch_size=res.get("train", "batch_size", args.batch_size, t["batch_size"]),
        epochs=res.get("train", "epochs", args.epochs, t["epochs"]),
        lr0=res.get("train", "lr0", args.lr0, t["lr0"]),
        decay_start_epoch=res.get("train", "decay_start_epoch", args.decay_start_epoch, t["decay_start_epoch"]),
        adam_beta1=res.get("train", "adam_beta1", args.beta1, t["adam_beta1"]),
        adam_beta2=res.get("train", "adam_beta2", args.beta2, t["adam_beta2"]),
        adam_eps=res.get("train", "adam_eps", args.adam_eps, t["adam_eps"]),
        seed=res.get("train", "seed", args.seed, t["seed"]),
        scales=res.get("train", "scales", args.scales, t["scales"]),
        grad_accum=res.get("train", "grad_accum", args.grad_accum, t["grad_accum"]),
        checkpoint_every=res.get("train", "checkpoint_every", args.checkpoint_every, t["checkpoint_every"]),
        eval_clips=res.get("train", "eval_clips", args.eval_clips, t["eval_clips"]),
        frame_budget=res.get("train", "frame_budget", args.frame_budget, t["frame_budget"]),
        loss_weights=weights,
    )
    gen_config = GeneratorConfig(
        base_width=res.get("generator", "base_width", args.base_width, GEN_DEFAULTS["base_width"]),
        depth=res.get("generator", "depth", args.depth, GEN_DEFAULTS["depth"]),
        residual_blocks_per_level=res.get("generator", "residual_blocks_per_level", args.res_blocks, GEN_DEFAULTS["residual_blocks_per_level"]),
    )
    disc_config = DiscriminatorConfig(
        base_width=res.get("discriminator", "base_width", args.disc_base_width, DISC_DEFAULTS["base_width"]),
        n_layers=res.get("discriminator", "n_layers", args.disc_layers, DISC_DEFAULTS["n_layers"]),
        num_scales=cfg.scales,
    )
    out_dir = Path(args.out_dir)
    res.dump(out_dir / "resolved_config.json")
    result = training.fit(
        manifest, cfg, out_dir,
        pairs_dir=args.pairs_dir,
        dsp_params=params,
        codec=codec,
        gen_config=gen_config,
        disc_config=disc_config,
        resume=args.resume,
        device=args.device or "cpu",
    )
    print(f"trained {result.epochs_run} epochs; final checkpoint: {result.final_checkpoint}")
    print(f"step log: {result.train_log}")
    return 0


def cmd_infer(args) -> int:
    res = Resolver(args.config)
    input_path = Path(args.input)
    if input_path.suffix == ".melpair":
        params = _resolve_dsp(res, args, default_rate=_pair_rate(input_path))
        coarse = dataio.read_pair(input_path, params).coarse
    else:
        params = _resolve_dsp(res, args)
        values = np.load(input_path)
        if values.ndim != 2:
            raise DataError(f"{input_path}: expected a 2-D mel matrix, got {values.shape}")
        coarse = MelSpectrogram(
            np.maximum(values.astype(np.float64), params.log_floor_value), params
        )
    codec = _resolve_codec(res, args)
    weights = _resolve_weights(res, args)
    payload = load_checkpoint(args.checkpoint)
    generator, _ = models_from_checkpoint(payload)
    generator.eval()
    pred_mel, _, _ = metrics.predict_mel(generator, coarse, None, codec, weights)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.save(out_path, pred_mel.values.astype(np.float32))
    res.dump(out_path.with_suffix(out_path.suffix + ".config.json"))
    print(f"predicted mel {pred_mel.values.shape} -> {out_path}")
    if args.wav:
        seed = args.seed if args.seed is not None else 0
        wave = griffin_lim(mel_to_linear(pred_mel), params.griffin_lim_iters, seed)
        dataio.write_wav(args.wav, wave, params.sample_rate)
        print(f"synthesized audio -> {args.wav}")
    return 0


def _pair_rate(path: Path) -> int | None:
    try:
        blob = path.open("rb").read(dataio._PAIR_HEADER.size)
        _, _, _, rate, _ = dataio._PAIR_HEADER.unpack_from(blob)
        return rate
    except Exception:
        return None


def cmd_evaluate(args) -> int:
    res = Resolver(args.config)
    manifest = dataio.CorpusManifest.load(args.manifest)
    params = _resolve_dsp(res, args, default_rate=manifest.sample_rate)
    codec = _resolve_codec(res, args)
    weights = _resolve_weights(res, args)
    report = metrics.evaluate_corpus(
        manifest,
        args.checkpoint,
        params,
        pairs_dir=args.pairs_dir,
        codec=codec,
        weights=weights,
        external_vocoder=args.external_vocoder,
        split=args.split or "test",
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.tsv").write_text(report.to_tsv())
    summary = report.summary()
    (out_dir / "summary.txt").write_text(summary)
    res.dump(out_dir / "resolved_config.json")
    print(summary, end="")
    incomplete = len(report.rows) - len(report.complete_rows())
    if incomplete:
        print(f"{incomplete} of {len(report.rows)} rows incomplete", file=sys.stderr)
        return 2
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mels = []
    for path in args.mels:
        values = np.load(path)
        if values.ndim != 2:
            raise DataError(f"{path}: expected a 2-D mel matrix, got {values.shape}")
        mels.append(values)
    if len(mels) not in (2, 3):
        raise _UsageError("plot takes two or three mel files")
    shapes = {m.shape for m in mels}
    if len(shapes) != 1:
        raise DataError(f"mel shapes differ: {sorted(shapes)}")
    if args.labels:
        labels = [s.strip() for s in args.labels.split(",")]
        if len(labels) != len(mels):
            raise _UsageError(f"{len(labels)} labels for {len(mels)} panels")
    else:
        labels = ["coarse", "predicted", "original"][: len(mels)] if len(mels) == 3 \
            else ["coarse", "original"]
    vmin = min(float(m.min()) for m in mels)
    vmax = max(float(m.max()) for m in mels)
    fig, axes = plt.subplots(len(mels), 1, figsize=(10, 3 * len(mels)), squeeze=False)
    for ax, mel, label in zip(axes[:, 0], mels, labels):
        im = ax.imshow(mel, origin="lower", aspect="auto", cmap="magma", vmin=vmin, vmax=vmax)
        ax.set_title(label)
        ax.set_xlabel("frame")
        ax.set_ylabel("mel channel")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    print(f"figure -> {out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="melrefine",
        description="Mel-spectrogram post-filter: data preparation, adversarial "
        "training, inference, and SSIM/STOI evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="build a manifest and <coarse, original> pair records")
    p.add_argument("--audio-dir", required=True, help="directory of mono wav clips at one sample rate")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-count", type=int, help="clips in the train split (e.g. 13000 at full scale)")
    p.add_argument("--test-count", type=int, help="clips in the test split (e.g. 100 at full scale)")
    p.add_argument("--seed", type=int, help="shuffle seed for the split (default: 0)")
    p.add_argument("--trim-silence-db", type=float,
                   help="trim leading/trailing silence this many dB below peak (default: no trimming)")
    _add_config_flag(p)
    _add_dsp_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the post-filter on materialized pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--device", help="torch device (default: cpu)")
    g = p.add_argument_group("optimizer")
    g.add_argument("--batch-size", type=int, help="images per step (default: 16)")
    g.add_argument("--epochs", type=int, help="training epochs (default: 100)")
    g.add_argument("--lr0", type=float, help="initial Adam learning rate (default: 2e-4)")
    g.add_argument("--decay-start-epoch", type=int,
                   help="epoch where the linear decay to zero begins (default: 40)")
    g.add_argument("--beta1", type=float, help="Adam beta1 (default: 0.5)")
    g.add_argument("--beta2", type=float, help="Adam beta2 (default: 0.999)")
    g.add_argument("--adam-eps", type=float, help="Adam epsilon (default: 1e-6)")
    g.add_argument("--seed", type=int, help="run seed (default: 0)")
    g.add_argument("--grad-accum", type=int,
                   help="gradient accumulation chunks per step, to emulate batch 16 on small devices (default: 1)")
    g.add_argument("--checkpoint-every", type=int, help="epochs between checkpoints (default: 10)")
    g.add_argument("--eval-clips", type=int, help="held-out clips for per-epoch SSIM (default: 4)")
    g.add_argument("--frame-budget", type=int,
                   help="fixed pre-resize frame count; longer clips are center-cropped (default: none)")
    g = p.add_argument_group("model")
    g.add_argument("--base-width", type=int, help="generator channels at full resolution (default: 64)")
    g.add_argument("--depth", type=int, help="generator resolution levels (default: 4)")
    g.add_argument("--res-blocks", type=int, help="residual units per level (default: 1)")
    g.add_argument("--disc-base-width", type=int, help="discriminator base channels (default: 64)")
    g.add_argument("--disc-layers", type=int, help="strided conv layers per discriminator (default: 4)")
    g.add_argument("--scales", type=int, help="discriminator pyramid scales (default: 4)")
    _add_loss_flags(p)
    _add_codec_flags(p)
    _add_config_flag(p)
    _add_dsp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run the post-filter on a coarse mel")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".npy log-mel matrix or a .melpair record (its coarse side)")
    p.add_argument("--output", required=True, help="output .npy for the predicted log-mel")
    p.add_argument("--wav", help="also synthesize the prediction with Griffin-Lim to this wav")
    p.add_argument("--seed", type=int, help="Griffin-Lim phase seed for --wav (default: 0)")
    _add_codec_flags(p)
    _add_loss_flags(p)
    _add_config_flag(p)
    _add_dsp_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="fill the SSIM/STOI comparison table on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=["train", "test"], help="split to evaluate (default: test)")
    p.add_argument("--external-vocoder",
                   help="shell template with {mel_in} and {wav_out} placeholders for an external synthesizer")
    _add_codec_flags(p)
    _add_loss_flags(p)
    _add_config_flag(p)
    _add_dsp_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render stacked spectrogram comparison panels")
    p.add_argument("mels", nargs="+", help="two or three .npy log-mel files (same shape)")
    p.add_argument("--output", required=True, help="output raster image (png)")
    p.add_argument("--labels", help="comma-separated panel titles (default: coarse,predicted,original)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"melrefine: error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"melrefine: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as exc:
        print(f"melrefine: data error: {exc}", file=sys.stderr)
        return 2
    except MelRefineError as exc:
        print(f"melrefine: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
