"""Training objectives: adversarial, feature matching, SSIM, MSE.

The generator objective is the convex combination

    total = alpha * (adv_g + fm_weight * fm) + (1 - alpha) * (ssim + mse)

where ``adv_g`` sums a least-squares GAN term over all discriminator
scales, ``fm`` is the per-layer L1 feature matching distance normalized by
element count, ``ssim`` is one minus the mean structural similarity over
valid windows, and ``mse`` is the mean squared pixel error. The classic
logistic adversarial form is available behind ``adv_form="logistic"``.

All functions accept torch tensors and are differentiable; tests check
them against naive scalar re-implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import DataError, ShapeMismatchError


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5  # importance factor between adversarial and pixel groups
    fm_weight: float = 10.0  # feature-matching weight inside the adversarial group
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 4.0e-4  # (0.01 * range width)^2 for pixel range (-1, 1)
    ssim_c2: float = 3.6e-3  # (0.03 * range width)^2
    adv_form: str = "lsgan"  # or "logistic"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.fm_weight < 0:
            raise DataError(f"fm_weight must be >= 0, got {self.fm_weight}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise DataError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise DataError("SSIM constants must be positive")
        if self.ssim_sigma <= 0:
            raise DataError("ssim_sigma must be positive")
        if self.adv_form not in ("lsgan", "logistic"):
            raise DataError(f"unknown adv_form {self.adv_form!r}")

    @classmethod
    def for_value_range(cls, lo: float, hi: float, **kwargs) -> "LossWeights":
        """Standard SSIM constants for a given pixel range width."""
        width = hi - lo
        return cls(ssim_c1=(0.01 * width) ** 2, ssim_c2=(0.03 * width) ** 2, **kwargs)


@dataclass
class LossReport:
    """Per-batch scalars; ``total_g`` follows the combination above."""

    adv_g: float
    adv_d: float
    fm: float
    ssim: float
    mse: float
    total_g: float

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if not math.isfinite(value):
                raise DataError(f"non-finite loss value: {name}={value}")

    def as_dict(self) -> dict[str, float]:
        return {
            "adv_g": self.adv_g,
            "adv_d": self.adv_d,
            "fm": self.fm,
            "ssim": self.ssim,
            "mse": self.mse,
            "total_g": self.total_g,
        }


def _as_nchw(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[:, None]
    if x.dim() == 4:
        return x
    raise ShapeMismatchError(f"expected 2-4 dims, got shape {tuple(x.shape)}")


def gaussian_kernel(window: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    """Normalized 2-D Gaussian window, shape (1, 1, window, window)."""
    half = (window - 1) / 2.0
    coords = torch.arange(window, dtype=torch.float64) - half
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = g[:, None] * g[None, :]
    kernel = kernel / kernel.sum()
    return kernel.to(dtype)[None, None]


def ssim_map(
    x: torch.Tensor, y: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    """Per-pixel SSIM over valid (unpadded) Gaussian windows.

    Local means, variances and covariance come from convolution with the
    Gaussian window; the map lies in (-1, 1] and equals 1 where the inputs
    agree exactly.
    """
    if x.shape != y.shape:
        raise ShapeMismatchError(f"shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    xb, yb = _as_nchw(x), _as_nchw(y)
    win = weights.ssim_window
    if xb.shape[-1] < win or xb.shape[-2] < win:
        raise ShapeMismatchError(
            f"SSIM window {win} larger than image {tuple(xb.shape[-2:])}"
        )
    kernel = gaussian_kernel(win, weights.ssim_sigma, dtype=xb.dtype).to(xb.device)
    mu_x = F.conv2d(xb, kernel)
    mu_y = F.conv2d(yb, kernel)
    mu_xx = F.conv2d(xb * xb, kernel)
    mu_yy = F.conv2d(yb * yb, kernel)
    mu_xy = F.conv2d(xb * yb, kernel)
    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov_xy = mu_xy - mu_x * mu_y
    c1, c2 = weights.ssim_c1, weights.ssim_c2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    out = num / den
    if x.dim() == 2:
        return out[0, 0]
    if x.dim() == 3:
        return out[:, 0]
    return out


def ssim_mean(x: torch.Tensor, y: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return ssim_map(x, y, weights).mean()


def ssim_loss(x: torch.Tensor, y: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """1 - mean SSIM; zero iff the images are identical."""
    return 1.0 - ssim_mean(x, y, weights)


def mse_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if x.shape != y.shape:
        raise ShapeMismatchError(f"shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    return ((x - y) ** 2).mean()


def adversarial_loss(
    logits_real: Sequence[torch.Tensor],
    logits_fake: Sequence[torch.Tensor],
    form: str = "lsgan",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator terms summed over all scales.

    Least-squares form per scale k:

        g_k = mean((fake_k - 1)^2)
        d_k = (mean((real_k - 1)^2) + mean(fake_k^2)) / 2

    The logistic form replaces the squares with softplus cross-entropy
    (non-saturating generator). The caller detaches fake logits for the
    discriminator update.
    """
    if len(logits_real) != len(logits_fake):
        raise ShapeMismatchError(
            f"scale count mismatch: {len(logits_real)} real vs {len(logits_fake)} fake"
        )
    if not logits_real:
        raise DataError("no discriminator scales given")
    g_parts, d_parts = [], []
    for real, fake in zip(logits_real, logits_fake):
        if form == "lsgan":
            g_parts.append(((fake - 1.0) ** 2).mean())
            d_parts.append((((real - 1.0) ** 2).mean() + (fake**2).mean()) / 2.0)
        elif form == "logistic":
            g_parts.append(F.softplus(-fake).mean())
            d_parts.append((F.softplus(-real).mean() + F.softplus(fake).mean()) / 2.0)
        else:
            raise DataError(f"unknown adversarial form {form!r}")
    return sum(g_parts), sum(d_parts)


def feature_matching_loss(
    feats_real: Sequence[Sequence[torch.Tensor]],
    feats_fake: Sequence[Sequence[torch.Tensor]],
) -> torch.Tensor:
    """L1 distance between discriminator activations, real vs fake.

    Each layer contributes its mean absolute difference (i.e. the L1 norm
    normalized by the element count), summed over layers and scales. Real
    activations are detached; only the fake path carries gradient.
    """
    if len(feats_real) != len(feats_fake):
        raise ShapeMismatchError(
            f"scale count mismatch: {len(feats_real)} vs {len(feats_fake)}"
        )
    total = None
    for scale, (real_layers, fake_layers) in enumerate(zip(feats_real, feats_fake)):
        if len(real_layers) != len(fake_layers):
            raise ShapeMismatchError(
                f"scale {scale}: layer count {len(real_layers)} vs {len(fake_layers)}"
            )
        for i, (r, f) in enumerate(zip(real_layers, fake_layers)):
            if r.shape != f.shape:
                raise ShapeMismatchError(
                    f"scale {scale} layer {i}: {tuple(r.shape)} vs {tuple(f.shape)}"
                )
            term = (r.detach() - f).abs().mean()
            total = term if total is None else total + term
    if total is None:
        raise DataError("no feature layers given")
    return total


def total_generator_loss(
    adv_g: torch.Tensor | float,
    adv_d: torch.Tensor | float,
    fm: torch.Tensor | float,
    ssim: torch.Tensor | float,
    mse: torch.Tensor | float,
    weights: LossWeights,
) -> tuple[torch.Tensor, LossReport]:
    """Combine the generator terms; returns the scalar to backprop plus a
    float report for logging. ``adv_d`` is report-only (the discriminator
    trains on it separately)."""
    a = weights.alpha
    adv_g_t = torch.as_tensor(adv_g)
    fm_t = torch.as_tensor(fm)
    ssim_t = torch.as_tensor(ssim)
    mse_t = torch.as_tensor(mse)
    total = a * (adv_g_t + weights.fm_weight * fm_t) + (1.0 - a) * (ssim_t + mse_t)
    report = LossReport(
        adv_g=float(adv_g_t.detach()),
        adv_d=float(torch.as_tensor(adv_d).detach()),
        fm=float(fm_t.detach()),
        ssim=float(ssim_t.detach()),
        mse=float(mse_t.detach()),
        total_g=float(total.detach()),
    )
    return total, report
