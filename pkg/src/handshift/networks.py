"""Network architectures: encoder-decoder generator, patch discriminator,
frozen feature extractors.

The generator is the pix2pix-style U-shaped encoder-decoder: stride-2
convolutions down to a 1x1 bottleneck, mirrored transposed convolutions up,
with the encoder level ``l`` concatenated onto decoder level ``n - l`` at
every scale. Noise enters only through dropout in the innermost decoder
levels; dropout masks are drawn from an explicit RNG so callers control
stochasticity.

The discriminator scores overlapping patches on a spatial grid. It
deliberately contains no normalization layers: spatial statistics would
couple distant patches, and patch scores here depend only on each patch's
receptive field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class GeneratorConfig:
    image_size: int = 64
    in_channels: int = 4   # 3 image channels + 1 conditioning map
    out_channels: int = 3
    base_width: int = 64
    depth: int = 0         # 0 means log2(image_size)
    dropout_rate: float = 0.5
    separate_channel_heads: bool = False

    def __post_init__(self) -> None:
        depth = self.resolved_depth
        if depth < 3:
            raise ValueError(f"depth must be >= 3, got {depth}")
        if self.image_size % (1 << depth) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^depth = {1 << depth}"
            )
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1], got {self.dropout_rate}")

    @property
    def resolved_depth(self) -> int:
        return self.depth if self.depth else int(math.log2(self.image_size))


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 7   # conditioning input (image + map) stacked with candidate
    num_scales: int = 3
    base_width: int = 64


def _seeded_dropout(x: torch.Tensor, rate: float,
                    rng: torch.Generator | None) -> torch.Tensor:
    keep = 1.0 - rate
    mask = torch.rand(x.shape, generator=rng, device=x.device) < keep
    return x * mask.to(x.dtype) / keep


class UNetGenerator(nn.Module):
    """Skip-connected encoder-decoder mapping (image, conditioning map) pairs
    to images in [-1, 1].

    With ``separate_channel_heads`` the final layer is replaced by one
    single-channel head per output channel on a shared trunk, so each output
    channel is produced by its own parameters.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        depth = config.resolved_depth
        widths = [min(config.base_width * (1 << i), config.base_width * 8)
                  for i in range(depth)]

        downs = []
        in_c = config.in_channels
        for i, w in enumerate(widths):
            block: list[nn.Module] = [nn.Conv2d(in_c, w, 4, 2, 1)]
            if 0 < i < depth - 1:
                block.append(nn.InstanceNorm2d(w, affine=True))
            block.append(nn.LeakyReLU(0.2))
            downs.append(nn.Sequential(*block))
            in_c = w
        self.downs = nn.ModuleList(downs)

        self.dropout_levels = min(3, depth - 1)
        ups = []
        up_widths = list(reversed(widths[:-1]))
        in_c = widths[-1]
        for i, w in enumerate(up_widths):
            ups.append(nn.Sequential(
                nn.ConvTranspose2d(in_c, w, 4, 2, 1),
                nn.InstanceNorm2d(w, affine=True),
            ))
            in_c = w * 2
        self.ups = nn.ModuleList(ups)

        if config.separate_channel_heads:
            self.heads = nn.ModuleList(
                nn.ConvTranspose2d(in_c, 1, 4, 2, 1)
                for _ in range(config.out_channels)
            )
        else:
            self.head = nn.ConvTranspose2d(in_c, config.out_channels, 4, 2, 1)

    def forward(self, image: torch.Tensor, cond: torch.Tensor,
                dropout_active: bool = True,
                rng: torch.Generator | None = None) -> torch.Tensor:
        size = self.config.image_size
        if image.shape[-2:] != (size, size) or cond.shape[-2:] != (size, size):
            raise ValueError(
                f"expected {size}x{size} inputs, got image {tuple(image.shape[-2:])} "
                f"and conditioning {tuple(cond.shape[-2:])}"
            )
        x = torch.cat([image, cond], dim=1)
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"image + conditioning give {x.shape[1]} channels, "
                f"expected {self.config.in_channels}"
            )

        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        skips.pop()      # bottleneck has no skip partner

        for i, up in enumerate(self.ups):
            x = up(x)
            if dropout_active and i < self.dropout_levels:
                x = _seeded_dropout(x, self.config.dropout_rate, rng)
            x = torch.relu(x)
            x = torch.cat([x, skips.pop()], dim=1)

        if self.config.separate_channel_heads:
            x = torch.cat([head(x) for head in self.heads], dim=1)
        else:
            x = self.head(x)
        return torch.tanh(x)


class PatchDiscriminator(nn.Module):
    """Convolutional patch classifier returning a grid of raw scores.

    ``num_scales`` stride-2 convolutions are followed by two stride-1
    convolutions; with the default 3 scales each score sees a 70x70
    receptive field. The scalar decision reported in logs is the sigmoid
    mean of the grid.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        bw = config.base_width
        layers: list[nn.Module] = []
        in_c = config.in_channels
        for i in range(config.num_scales):
            out_c = bw * min(1 << i, 8)
            layers += [nn.Conv2d(in_c, out_c, 4, 2, 1), nn.LeakyReLU(0.2)]
            in_c = out_c
        out_c = bw * min(1 << config.num_scales, 8)
        layers += [nn.Conv2d(in_c, out_c, 4, 1, 1), nn.LeakyReLU(0.2)]
        layers += [nn.Conv2d(out_c, 1, 4, 1, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, cond_input: torch.Tensor,
                candidate: torch.Tensor) -> torch.Tensor:
        x = torch.cat([cond_input, candidate], dim=1)
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"conditioning + candidate give {x.shape[1]} channels, "
                f"expected {self.config.in_channels}"
            )
        return self.model(x)


def patch_decision(scores: torch.Tensor) -> float:
    """Collapse a raw patch score grid to the scalar used in logs."""
    return torch.sigmoid(scores).mean().item()


class RandomFeatureExtractor(nn.Module):
    """Frozen convolutional stack with weights drawn from a fixed seed.

    Deterministic by construction: the same seed produces the same
    parameters on any machine with identical arithmetic settings, and the
    parameters never receive gradient updates. Gradients still flow through
    the ops to the input, which is what the identity loss needs.
    """

    def __init__(self, seed: int = 0, in_channels: int = 3,
                 widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        in_c = in_channels
        for w in widths:
            conv = nn.Conv2d(in_c, w, 3, 2, 1)
            std = math.sqrt(2.0 / (in_c * 9))
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
                conv.bias.zero_()
            convs.append(conv)
            in_c = w
        self.convs = nn.ModuleList(convs)
        self.provenance = f"seeded-random:{seed}"
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = torch.nn.functional.leaky_relu(conv(x), 0.2)
        return x


class IdentityFeatureExtractor(nn.Module):
    """Degenerate extractor returning its input; useful in tests where the
    identity loss should reduce to a plain pixel L1."""

    provenance = "identity"

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x


def build_feature_extractor(kind: str = "seeded-random", seed: int = 0,
                            weights_path: str | None = None) -> nn.Module:
    """Build the frozen extractor for the identity loss.

    ``seeded-random`` is the default and needs no assets. ``pretrained``
    loads a torchvision VGG16 feature stack from a local state-dict file;
    the weights are an asset this package does not bundle.
    """
    if kind == "seeded-random":
        return RandomFeatureExtractor(seed=seed)
    if kind == "identity":
        return IdentityFeatureExtractor()
    if kind == "pretrained":
        if not weights_path:
            raise FileNotFoundError(
                "pretrained feature extractor requested but no weights_path "
                "given; use kind='seeded-random' if no assets are available"
            )
        from torchvision.models import vgg16

        model = vgg16(weights=None).features[:16]   # up to relu3_3
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
        model.provenance = f"pretrained:{weights_path}"
        for p in model.parameters():
            p.requires_grad_(False)
        return model
    raise ValueError(f"unknown feature extractor kind {kind!r}")
