"""Networks: ResUnet generator and the multi-scale patch discriminator bank.

The generator is a U-Net whose down/up blocks are pre-activation residual
units, with channel width doubling per resolution level and a long skip
from the input image to the output, squashed into the pixel value range:

    output = squash(residual_path(x) + x)

so a zeroed residual path reduces to a near-identity mapping.

The discriminator bank holds ``num_scales`` structurally identical patch
discriminators. Scale k judges the channel-concatenated (conditioning,
candidate) pair average-pooled k-1 times, and exposes its per-layer
activations for the feature matching loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, CheckpointVersionError, ShapeMismatchError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    base_width: int = 64
    depth: int = 4  # resolution levels; spatial dims must divide 2^(depth-1)
    residual_blocks_per_level: int = 1
    long_skip: bool = True
    out_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise ShapeMismatchError(f"depth must be >= 2, got {self.depth}")
        if self.base_width < 4:
            raise ShapeMismatchError(f"base_width must be >= 4, got {self.base_width}")
        if self.residual_blocks_per_level < 1:
            raise ShapeMismatchError("residual_blocks_per_level must be >= 1")
        lo, hi = self.out_range
        if not lo < hi:
            raise ShapeMismatchError(f"out_range must satisfy lo < hi, got {self.out_range}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 2  # conditioning + candidate
    base_width: int = 64
    n_layers: int = 4  # strided conv layers before the logit conv
    num_scales: int = 4

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ShapeMismatchError("n_layers must be >= 1")
        if self.num_scales < 1:
            raise ShapeMismatchError("num_scales must be >= 1")


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ResidualUnit(nn.Module):
    """Pre-activation residual unit: norm-relu-conv twice, plus shortcut."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm1 = nn.InstanceNorm2d(in_ch, affine=True)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(out_ch, affine=True)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = (
            nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        )

    def forward(self, x):
        h = self.conv1(F.relu(self.norm1(x)))
        h = self.conv2(F.relu(self.norm2(h)))
        return h + self.shortcut(x)


def _blocks(width: int, count: int) -> nn.Sequential:
    return nn.Sequential(*(ResidualUnit(width, width) for _ in range(count)))


class ResUnetGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        widths = [config.base_width * 2**level for level in range(config.depth)]
        blocks = config.residual_blocks_per_level

        self.stem = nn.Conv2d(config.in_channels, widths[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList(
            _blocks(widths[level], blocks) for level in range(config.depth - 1)
        )
        self.down = nn.ModuleList(
            nn.Conv2d(widths[level], widths[level + 1], 3, stride=2, padding=1)
            for level in range(config.depth - 1)
        )
        self.bottom = _blocks(widths[-1], blocks)
        self.up = nn.ModuleList(
            nn.Conv2d(widths[level + 1], widths[level], 3, padding=1)
            for level in reversed(range(config.depth - 1))
        )
        self.merge = nn.ModuleList(
            nn.Conv2d(2 * widths[level], widths[level], 3, padding=1)
            for level in reversed(range(config.depth - 1))
        )
        self.dec_blocks = nn.ModuleList(
            _blocks(widths[level], blocks) for level in reversed(range(config.depth - 1))
        )
        self.head_norm = nn.InstanceNorm2d(widths[0], affine=True)
        self.head = nn.Conv2d(widths[0], config.in_channels, 3, padding=1)
        self.apply(_init_weights)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _squash(self, z: torch.Tensor) -> torch.Tensor:
        lo, hi = self.config.out_range
        if (lo, hi) == (-1.0, 1.0):
            return torch.tanh(z)
        return lo + (hi - lo) * (torch.tanh(z) + 1.0) / 2.0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatchError(
                f"expected (B, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        factor = 2 ** (self.config.depth - 1)
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise ShapeMismatchError(
                f"spatial dims {tuple(x.shape[-2:])} must divide {factor} "
                f"for depth {self.config.depth}"
            )
        h = self.stem(x)
        skips = []
        for enc, down in zip(self.enc_blocks, self.down):
            h = enc(h)
            skips.append(h)
            h = down(h)
        h = self.bottom(h)
        for up, merge, dec, skip in zip(
            self.up, self.merge, self.dec_blocks, reversed(skips)
        ):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = merge(torch.cat([h, skip], dim=1))
            h = dec(h)
        h = self.head(F.relu(self.head_norm(h)))
        if self.config.long_skip:
            h = h + x
        return self._squash(h)


class PatchDiscriminator(nn.Module):
    """Strided patch discriminator with a feature tap after every stage."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        stages = []
        width = config.base_width
        stages.append(
            nn.Sequential(
                nn.Conv2d(config.in_channels, width, 4, stride=2, padding=2),
                nn.LeakyReLU(0.2, inplace=True),
            )
        )
        for layer in range(1, config.n_layers):
            stride = 2 if layer < config.n_layers - 1 else 1
            next_width = min(width * 2, 512)
            stages.append(
                nn.Sequential(
                    nn.Conv2d(width, next_width, 4, stride=stride, padding=2),
                    nn.InstanceNorm2d(next_width, affine=True),
                    nn.LeakyReLU(0.2, inplace=True),
                )
            )
            width = next_width
        stages.append(nn.Conv2d(width, 1, 4, stride=1, padding=2))
        self.stages = nn.ModuleList(stages)
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats[-1], feats


class DiscriminatorBank(nn.Module):
    """``num_scales`` identical patch discriminators over an image pyramid."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        self.scales = nn.ModuleList(
            PatchDiscriminator(config) for _ in range(config.num_scales)
        )

    @property
    def layers_per_discriminator(self) -> int:
        return self.config.n_layers + 1  # feature taps incl. the logit conv

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self, conditioning: torch.Tensor, candidate: torch.Tensor
    ) -> list[tuple[torch.Tensor, list[torch.Tensor]]]:
        """Per-scale (logit map, feature list) for a conditioned candidate."""
        if conditioning.shape != candidate.shape:
            raise ShapeMismatchError(
                f"conditioning {tuple(conditioning.shape)} != "
                f"candidate {tuple(candidate.shape)}"
            )
        factor = 2 ** (self.config.num_scales - 1)
        if conditioning.shape[-2] % factor or conditioning.shape[-1] % factor:
            raise ShapeMismatchError(
                f"spatial dims {tuple(conditioning.shape[-2:])} must divide "
                f"{factor} for {self.config.num_scales} scales"
            )
        x = torch.cat([conditioning, candidate], dim=1)
        outputs = []
        for k, disc in enumerate(self.scales):
            if k > 0:
                x = F.avg_pool2d(x, 2)
            outputs.append(disc(x))
        return outputs

    @staticmethod
    def logits(outputs) -> list[torch.Tensor]:
        return [logit for logit, _ in outputs]

    @staticmethod
    def features(outputs) -> list[list[torch.Tensor]]:
        return [feats for _, feats in outputs]

    @staticmethod
    def element_counts(outputs) -> list[list[int]]:
        """Per-sample element count N_i of every tapped layer, per scale."""
        return [[f.shape[1:].numel() for f in feats] for _, feats in outputs]


def save_checkpoint(
    path: str | Path,
    generator: ResUnetGenerator,
    bank: DiscriminatorBank,
    g_opt: torch.optim.Optimizer | None = None,
    d_opt: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "generator_config": asdict(generator.config),
        "discriminator_config": asdict(bank.config),
        "generator_state": generator.state_dict(),
        "discriminator_state": bank.state_dict(),
        "g_opt_state": g_opt.state_dict() if g_opt is not None else None,
        "d_opt_state": d_opt.state_dict() if d_opt is not None else None,
        "torch_rng_state": torch.get_rng_state(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    """Load and validate a checkpoint payload (models not yet built)."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint of this toolkit")
    version = payload["format_version"]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    return payload


def models_from_checkpoint(
    payload: dict,
) -> tuple[ResUnetGenerator, DiscriminatorBank]:
    gen_cfg = dict(payload["generator_config"])
    gen_cfg["out_range"] = tuple(gen_cfg["out_range"])
    generator = ResUnetGenerator(GeneratorConfig(**gen_cfg))
    generator.load_state_dict(payload["generator_state"])
    bank = DiscriminatorBank(DiscriminatorConfig(**payload["discriminator_config"]))
    bank.load_state_dict(payload["discriminator_state"])
    return generator, bank
