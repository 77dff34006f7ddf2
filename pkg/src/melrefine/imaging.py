"""Reversible codec between mel matrices and fixed-size model images.

Encoding is a per-image affine map from the mel's own dynamic range onto
the pixel value range, followed by a corner-aligned bilinear resize to the
model's square input. The scaling metadata travels with every image so
decoding needs nothing else. At native size the round trip is exact; with
resizing it is lossy but bounded (see tests).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dsp import DspParams, MelSpectrogram
from .errors import CodecError, ShapeMismatchError


@dataclass(frozen=True)
class ImageCodecParams:
    target_size: tuple[int, int] = (512, 512)  # (height, width)
    value_range: tuple[float, float] = (-1.0, 1.0)  # (lo, hi)

    def __post_init__(self) -> None:
        h, w = self.target_size
        lo, hi = self.value_range
        if h < 8 or w < 8:
            raise CodecError(f"target_size must be at least 8x8, got {h}x{w}")
        if not lo < hi:
            raise CodecError(f"value_range must satisfy lo < hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class ScalingMeta:
    """Everything needed to undo mel_to_image."""

    orig_shape: tuple[int, int]  # (n_mels, T) before any padding
    dyn_min: float
    dyn_max: float
    pad_frames: int = 0

    def __post_init__(self) -> None:
        n_mels, n_frames = self.orig_shape
        if n_mels < 1 or n_frames < 1:
            raise CodecError(f"invalid orig_shape {self.orig_shape}")
        if not self.dyn_min <= self.dyn_max:
            raise CodecError(f"dyn_min {self.dyn_min} > dyn_max {self.dyn_max}")
        if self.pad_frames < 0:
            raise CodecError(f"pad_frames must be >= 0, got {self.pad_frames}")


@dataclass(frozen=True)
class SpectrogramImage:
    pixels: np.ndarray  # (height, width), every entry within value_range
    meta: ScalingMeta
    value_range: tuple[float, float] = (-1.0, 1.0)
    dsp_params: DspParams | None = None

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2:
            raise ShapeMismatchError(f"pixels must be 2-D, got {self.pixels.shape}")
        lo, hi = self.value_range
        pmin, pmax = float(self.pixels.min()), float(self.pixels.max())
        if pmin < lo - 1e-6 or pmax > hi + 1e-6:
            raise CodecError(
                f"pixels outside value range [{lo}, {hi}]: [{pmin}, {pmax}]"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray) -> "SpectrogramImage":
        """Same metadata, new pixel content (e.g. a generator prediction)."""
        return replace(self, pixels=pixels)


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner-aligned source coordinates split into floor index and weight."""
    if n_out == 1 or n_in == 1:
        coords = np.zeros(n_out)
    else:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(coords.astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, coords - i0


def resize_bilinear(a: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Separable corner-aligned bilinear resize of a 2-D array."""
    h, w = target
    r0, r1, rt = _axis_coords(a.shape[0], h)
    c0, c1, ct = _axis_coords(a.shape[1], w)
    rows = a[r0] * (1.0 - rt)[:, None] + a[r1] * rt[:, None]
    return rows[:, c0] * (1.0 - ct)[None, :] + rows[:, c1] * ct[None, :]


def mel_to_image(
    mel: MelSpectrogram,
    codec: ImageCodecParams,
    frame_budget: int | None = None,
) -> SpectrogramImage:
    """Encode a mel matrix as a normalized fixed-size image.

    ``frame_budget`` pins the pre-resize width for training data: shorter
    clips are right-padded with the log floor (recorded in ``pad_frames``)
    and longer clips are rejected, so the caller must center-crop first.
    Without a budget any width is resized directly.
    """
    values = np.asarray(mel.values, dtype=np.float64)
    if values.shape[1] < 1:
        raise CodecError("cannot encode an empty mel spectrogram")
    orig_shape = (int(values.shape[0]), int(values.shape[1]))
    pad_frames = 0
    if frame_budget is not None:
        if values.shape[1] > frame_budget:
            raise CodecError(
                f"clip has {values.shape[1]} frames, over the budget of "
                f"{frame_budget}; center-crop before encoding"
            )
        pad_frames = frame_budget - values.shape[1]
        if pad_frames:
            values = np.pad(
                values,
                ((0, 0), (0, pad_frames)),
                constant_values=mel.params.log_floor_value,
            )
    lo, hi = codec.value_range
    dyn_min = float(values.min())
    dyn_max = float(values.max())
    if dyn_max > dyn_min:
        normed = (values - dyn_min) * ((hi - lo) / (dyn_max - dyn_min)) + lo
    else:
        normed = np.full_like(values, (lo + hi) / 2.0)
    pixels = np.clip(resize_bilinear(normed, codec.target_size), lo, hi)
    meta = ScalingMeta(orig_shape, dyn_min, dyn_max, pad_frames)
    return SpectrogramImage(pixels, meta, codec.value_range, mel.params)


def image_to_mel(image: SpectrogramImage) -> MelSpectrogram:
    """Decode an image back to a mel matrix using its own metadata."""
    if image.dsp_params is None:
        raise CodecError("image carries no DSP parameters; cannot rebuild a mel")
    meta = image.meta
    n_mels, n_frames = meta.orig_shape
    lo, hi = image.value_range
    padded_shape = (n_mels, n_frames + meta.pad_frames)
    normed = resize_bilinear(np.asarray(image.pixels, dtype=np.float64), padded_shape)
    if meta.dyn_max > meta.dyn_min:
        values = (normed - lo) * ((meta.dyn_max - meta.dyn_min) / (hi - lo)) + meta.dyn_min
    else:
        values = np.full(padded_shape, meta.dyn_min)
    if meta.pad_frames:
        values = values[:, :n_frames]
    values = np.maximum(values, image.dsp_params.log_floor_value)
    return MelSpectrogram(values, image.dsp_params)


def center_crop_frames(mel: MelSpectrogram, budget: int) -> MelSpectrogram:
    """Crop a mel to at most ``budget`` frames, keeping the center."""
    if budget < 1:
        raise CodecError(f"frame budget must be >= 1, got {budget}")
    if mel.n_frames <= budget:
        return mel
    start = (mel.n_frames - budget) // 2
    return MelSpectrogram(mel.values[:, start : start + budget], mel.params)


def downsample_pyramid(image: SpectrogramImage, levels: int) -> list[SpectrogramImage]:
    """Average-pool pyramid at scales 1, 1/2, ..., 1/2^(levels-1)."""
    if levels < 1:
        raise CodecError(f"levels must be >= 1, got {levels}")
    h, w = image.shape
    factor = 2 ** (levels - 1)
    if h % factor or w % factor:
        raise CodecError(
            f"image size {h}x{w} not divisible by 2^{levels - 1} for {levels} levels"
        )
    out = [image]
    pixels = image.pixels
    for _ in range(levels - 1):
        hh, ww = pixels.shape
        pixels = pixels.reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))
        out.append(image.with_pixels(pixels))
    return out
