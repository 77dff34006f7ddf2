"""Objective evaluation: corpus-level SSIM and STOI tables.

For every test clip the generator predicts a mel from the coarse input,
all three mels (coarse / predicted / original) are synthesized with
Griffin-Lim, and the table gets one row of image SSIM and waveform STOI
columns. The STOI reference is the Griffin-Lim synthesis of the original
mel, so the original condition scores 1.0 by construction and the summary
mirrors a three-row coarse/predicted/original comparison.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .dsp import DspParams, MelSpectrogram, Waveform, griffin_lim, mel_to_linear
from .errors import DataError
from .imaging import ImageCodecParams, SpectrogramImage, image_to_mel, mel_to_image
from .losses import LossWeights, ssim_mean
from .model import ResUnetGenerator, load_checkpoint, models_from_checkpoint
from .stoi import stoi

log = logging.getLogger(__name__)

__all__ = ["stoi", "ssim_metric", "EvalRow", "EvalReport", "evaluate_corpus"]


def ssim_metric(a: SpectrogramImage, b: SpectrogramImage, weights: LossWeights | None = None) -> float:
    """Mean SSIM between two spectrogram images (training constants)."""
    weights = weights or LossWeights()
    with torch.no_grad():
        return float(
            ssim_mean(
                torch.from_numpy(np.asarray(a.pixels)).double(),
                torch.from_numpy(np.asarray(b.pixels)).double(),
                weights,
            )
        )


@dataclass
class EvalRow:
    clip_id: str
    ssim_coarse: float = float("nan")
    ssim_pred: float = float("nan")
    ssim_original: float = 1.0
    stoi_gl_coarse: float = float("nan")
    stoi_gl_pred: float = float("nan")
    stoi_gl_original: float = float("nan")
    stoi_ext_coarse: float | None = None
    stoi_ext_pred: float | None = None
    stoi_ext_original: float | None = None
    complete: bool = True
    error: str = ""


_SUMMARY_CONDITIONS = (
    ("coarse", "ssim_coarse", "stoi_gl_coarse", "stoi_ext_coarse"),
    ("predicted", "ssim_pred", "stoi_gl_pred", "stoi_ext_pred"),
    ("original", "ssim_original", "stoi_gl_original", "stoi_ext_original"),
)


@dataclass
class EvalReport:
    rows: list[EvalRow]
    dsp_fingerprint: str
    checkpoint: str
    external_vocoder: str | None = None
    notes: list[str] = field(default_factory=list)

    def complete_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if r.complete]

    def mean(self, column: str) -> float:
        values = [
            getattr(r, column)
            for r in self.complete_rows()
            if getattr(r, column) is not None
        ]
        return float(np.mean(values)) if values else float("nan")

    @property
    def ordering_ok(self) -> bool:
        """Whether corpus means rank coarse <= predicted <= original."""
        return (
            self.mean("ssim_coarse")
            <= self.mean("ssim_pred")
            <= self.mean("ssim_original")
        )

    def to_tsv(self) -> str:
        columns = [
            "clip_id", "ssim_coarse", "ssim_pred", "ssim_original",
            "stoi_gl_coarse", "stoi_gl_pred", "stoi_gl_original",
        ]
        if self.external_vocoder:
            columns += ["stoi_ext_coarse", "stoi_ext_pred", "stoi_ext_original"]
        columns += ["complete", "error"]
        lines = ["\t".join(columns)]
        for r in self.rows:
            cells = []
            for col in columns:
                value = getattr(r, col)
                if isinstance(value, float):
                    cells.append(f"{value:.6f}")
                elif value is None:
                    cells.append("")
                else:
                    cells.append(str(value))
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        have_ext = self.external_vocoder is not None
        header = ["condition", "ssim", "stoi_griffin_lim"]
        if have_ext:
            header.append("stoi_external")
        lines = [
            f"clips evaluated: {len(self.complete_rows())} of {len(self.rows)}",
            "\t".join(header),
        ]
        for name, ssim_col, stoi_col, ext_col in _SUMMARY_CONDITIONS:
            cells = [name, f"{self.mean(ssim_col):.3f}", f"{self.mean(stoi_col):.3f}"]
            if have_ext:
                cells.append(f"{self.mean(ext_col):.3f}")
            lines.append("\t".join(cells))
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"


def _synthesize(mel: MelSpectrogram, seed: int) -> Waveform:
    return griffin_lim(mel_to_linear(mel), mel.params.griffin_lim_iters, seed)


def _run_external_vocoder(
    template: str, mel: MelSpectrogram, workdir: Path, tag: str
) -> tuple[Waveform, int]:
    """Shell out to a user-supplied synthesis command.

    The template must contain ``{mel_in}`` and ``{wav_out}`` placeholders;
    the mel is handed over as a float32 .npy matrix (n_mels, T).
    """
    mel_in = workdir / f"{tag}.npy"
    wav_out = workdir / f"{tag}.wav"
    np.save(mel_in, mel.values.astype(np.float32))
    command = template.format(mel_in=mel_in, wav_out=wav_out)
    result = subprocess.run(shlex.split(command), capture_output=True, text=True)
    if result.returncode != 0 or not wav_out.exists():
        raise DataError(
            f"external vocoder failed ({result.returncode}): {result.stderr.strip()[:500]}"
        )
    return dataio.read_wav(wav_out)


def evaluate_corpus(
    manifest: dataio.CorpusManifest,
    checkpoint_path: str | Path,
    params: DspParams,
    *,
    pairs_dir: str | Path,
    codec: ImageCodecParams | None = None,
    weights: LossWeights | None = None,
    external_vocoder: str | None = None,
    split: str = "test",
    device: str = "cpu",
) -> EvalReport:
    """Fill the evaluation table for a manifest split.

    Per-clip failures are recorded on the row and skipped; the report's
    summary counts how many rows completed.
    """
    codec = codec or ImageCodecParams()
    weights = weights or LossWeights()
    payload = load_checkpoint(checkpoint_path)
    generator, _ = models_from_checkpoint(payload)
    generator = generator.to(device)
    generator.eval()

    entries = manifest.split_entries(split)
    if not entries:
        raise DataError(f"manifest has no entries in split {split!r}")
    rows: list[EvalRow] = []
    notes: list[str] = []
    for entry in entries:
        row = EvalRow(clip_id=entry.clip_id)
        rows.append(row)
        try:
            pair = dataio.read_pair(dataio.pair_path(pairs_dir, entry.clip_id), params)
            pred_mel, row.ssim_coarse, row.ssim_pred = predict_mel(
                generator, pair.coarse, pair.original, codec, weights, device
            )
            seed = dataio.clip_seed(entry.clip_id)
            reference = _synthesize(pair.original, seed)
            row.stoi_gl_coarse = stoi(
                reference, _synthesize(pair.coarse, seed), params.sample_rate
            )
            row.stoi_gl_pred = stoi(
                reference, _synthesize(pred_mel, seed), params.sample_rate
            )
            row.stoi_gl_original = stoi(reference, reference, params.sample_rate)
        except Exception as exc:
            row.complete = False
            row.error = str(exc)
            log.warning("evaluation failed for %s: %s", entry.clip_id, exc)
            continue
        if external_vocoder:
            try:
                with tempfile.TemporaryDirectory() as tmp:
                    workdir = Path(tmp)
                    ref_ext, rate = _run_external_vocoder(
                        external_vocoder, pair.original, workdir, "original"
                    )
                    coarse_ext, _ = _run_external_vocoder(
                        external_vocoder, pair.coarse, workdir, "coarse"
                    )
                    pred_ext, _ = _run_external_vocoder(
                        external_vocoder, pred_mel, workdir, "predicted"
                    )
                row.stoi_ext_coarse = stoi(ref_ext, coarse_ext, rate)
                row.stoi_ext_pred = stoi(ref_ext, pred_ext, rate)
                row.stoi_ext_original = stoi(ref_ext, ref_ext, rate)
            except Exception as exc:
                row.complete = False
                row.error = f"external vocoder: {exc}"
                log.warning("external vocoder failed for %s: %s", entry.clip_id, exc)
    return EvalReport(
        rows,
        dsp_fingerprint=params.fingerprint(),
        checkpoint=str(checkpoint_path),
        external_vocoder=external_vocoder,
        notes=notes,
    )


def predict_mel(
    generator: ResUnetGenerator,
    coarse: MelSpectrogram,
    original: MelSpectrogram | None,
    codec: ImageCodecParams,
    weights: LossWeights,
    device: str = "cpu",
) -> tuple[MelSpectrogram, float, float]:
    """Run the post-filter on one coarse mel.

    Returns the predicted mel plus (ssim_coarse, ssim_pred) against the
    original when one is given (NaN otherwise). The predicted image reuses
    the coarse image's scaling metadata: that is the only metadata
    available at inference time.
    """
    coarse_img = mel_to_image(coarse, codec)
    with torch.no_grad():
        x = torch.from_numpy(coarse_img.pixels).float()[None, None].to(device)
        pred_pixels = generator(x)[0, 0].cpu().numpy().astype(np.float64)
    lo, hi = codec.value_range
    pred_img = coarse_img.with_pixels(np.clip(pred_pixels, lo, hi))
    ssim_coarse = float("nan")
    ssim_pred = float("nan")
    if original is not None:
        orig_img = mel_to_image(original, codec)
        ssim_coarse = ssim_metric(coarse_img, orig_img, weights)
        ssim_pred = ssim_metric(pred_img, orig_img, weights)
    return image_to_mel(pred_img), ssim_coarse, ssim_pred
