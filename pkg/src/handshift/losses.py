"""Training objective: adversarial, color, cycle and identity terms.

The color loss is the load-bearing piece. A joint L2 over all channels has
a shared root, so the gradient of any one channel's pixels carries the
other channels' residuals in its denominator ("channel pollution"). Summing
per-channel norms instead keeps each channel's gradient a function of that
channel alone; for L1 the per-element derivatives are constants either way.
:func:`cross_channel_gradient_probe` turns that distinction into a number.

Reconstruction losses come in two forms: the normalized versions used in
the objective (per-element means, so weights keep their meaning at any
resolution) and the raw cores (plain sums / roots of sums) that the
analytic gradient statements are about.

All functions take torch tensors with channels on dim -3 (CHW or NCHW) and
return 0-dim tensors, differentiable where that matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .rasterize import VARIANTS

BCE_EPS = 1e-7

NORMS = ("l1", "l2")


def _check_norm(norm: str) -> str:
    lowered = norm.lower()
    if lowered not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    return lowered


def _check_same_shape(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(
            f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}"
        )


@dataclass(frozen=True)
class LossWeights:
    """Hyperparameters of the full objective.

    ``lambda3`` holds the current value of the scheduled identity weight;
    the training engine updates it per epoch.
    """

    lambda1: float = 100.0
    lambda2: float = 10.0
    lambda3: float = 0.1
    color_norm: str = "l1"
    conditioning_variant: str = "S"

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        object.__setattr__(self, "color_norm", _check_norm(self.color_norm))
        if self.conditioning_variant not in VARIANTS:
            raise ValueError(
                f"conditioning_variant must be one of {VARIANTS}, "
                f"got {self.conditioning_variant!r}"
            )


LOSS_CSV_HEADER = "step,adv_g,adv_d,color,cycle,identity,total,lambda3"


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's loss terms, with per-direction sub-terms.

    ``total`` always equals ``adv_g + l1*color + l2*cycle + l3*identity``
    recombined with the same float operations as the objective itself.
    """

    adv_g: float
    adv_d: float
    color: float
    cycle: float
    identity: float
    total: float
    adv_g_xy: float = 0.0
    adv_g_yx: float = 0.0
    color_xy: float = 0.0
    color_yx: float = 0.0
    cycle_xy: float = 0.0
    cycle_yx: float = 0.0
    identity_xy: float = 0.0
    identity_yx: float = 0.0

    def csv_row(self, step: int, lambda3: float) -> str:
        values = (self.adv_g, self.adv_d, self.color, self.cycle,
                  self.identity, self.total, lambda3)
        return f"{step}," + ",".join(repr(v) for v in values)


def bce(prediction: torch.Tensor, target: int) -> torch.Tensor:
    """Mean binary cross entropy of a probability grid against a constant
    0/1 target, with predictions clamped to [eps, 1 - eps]."""
    p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS)
    if target == 1:
        return -torch.log(p).mean()
    if target == 0:
        return -torch.log(1.0 - p).mean()
    raise ValueError(f"target must be 0 or 1, got {target!r}")


def adversarial_d_loss(d1_scores_real: torch.Tensor,
                       d1_scores_fake: torch.Tensor,
                       d2_scores_real: torch.Tensor | None = None,
                       d2_scores_fake: torch.Tensor | None = None,
                       ) -> torch.Tensor:
    """Discriminator objective on raw score grids, halved per direction.

    The first pair judges the x->y direction, the second the y->x
    direction; omit the second pair for a single-discriminator setup.
    Callers must pass fake scores computed on detached generator outputs.
    """
    loss = 0.5 * (bce(torch.sigmoid(d1_scores_real), 1)
                  + bce(torch.sigmoid(d1_scores_fake), 0))
    if d2_scores_real is not None:
        loss = loss + 0.5 * (bce(torch.sigmoid(d2_scores_real), 1)
                             + bce(torch.sigmoid(d2_scores_fake), 0))
    return loss


def adversarial_g_loss(d1_scores_fake: torch.Tensor,
                       d2_scores_fake: torch.Tensor | None = None,
                       ) -> torch.Tensor:
    """Non-saturating generator objective: push fake patch scores to 1."""
    loss = bce(torch.sigmoid(d1_scores_fake), 1)
    if d2_scores_fake is not None:
        loss = loss + bce(torch.sigmoid(d2_scores_fake), 1)
    return loss


def pixel_loss(pred: torch.Tensor, target: torch.Tensor,
               norm: str = "l1") -> torch.Tensor:
    """Joint reconstruction loss over all channels.

    L1 is the mean absolute difference. L2 is the root of the sum of
    squares over all elements jointly, divided by the element count for
    scale comparability with L1.
    """
    norm = _check_norm(norm)
    _check_same_shape(pred, target)
    diff = pred - target
    if norm == "l1":
        return diff.abs().mean()
    return torch.sqrt((diff * diff).sum()) / diff.numel()


def pixel_loss_core(pred: torch.Tensor, target: torch.Tensor,
                    norm: str = "l2") -> torch.Tensor:
    """Unnormalized joint core: sum of |diff| (L1) or sqrt of the joint sum
    of squares (L2). The L2 core's root couples all channels."""
    norm = _check_norm(norm)
    _check_same_shape(pred, target)
    diff = pred - target
    if norm == "l1":
        return diff.abs().sum()
    return torch.sqrt((diff * diff).sum())


def _per_channel(t: torch.Tensor) -> torch.Tensor:
    """Flatten to (channels, elements-per-channel) using dim -3 as channels."""
    channels = t.shape[-3]
    return t.movedim(-3, 0).reshape(channels, -1)


def color_loss(pred: torch.Tensor, target: torch.Tensor,
               norm: str = "l1") -> torch.Tensor:
    """Channel-independent reconstruction loss: the per-channel norm is
    computed separately for each channel and the results summed, so
    channels never mix inside a norm."""
    norm = _check_norm(norm)
    _check_same_shape(pred, target)
    diff = _per_channel(pred - target)
    if norm == "l1":
        return diff.abs().mean(dim=1).sum()
    per_channel = torch.sqrt((diff * diff).sum(dim=1)) / diff.shape[1]
    return per_channel.sum()


def color_loss_core(pred: torch.Tensor, target: torch.Tensor,
                    norm: str = "l2") -> torch.Tensor:
    """Unnormalized per-channel core: sum over channels of that channel's
    own |.|-sum (L1) or root-sum-of-squares (L2)."""
    norm = _check_norm(norm)
    _check_same_shape(pred, target)
    diff = _per_channel(pred - target)
    if norm == "l1":
        return diff.abs().sum()
    return torch.sqrt((diff * diff).sum(dim=1)).sum()


_PROBE_CORES = {
    "pixel_l1": lambda p, t: pixel_loss_core(p, t, "l1"),
    "pixel_l2": lambda p, t: pixel_loss_core(p, t, "l2"),
    "color_l1": lambda p, t: color_loss_core(p, t, "l1"),
    "color_l2": lambda p, t: color_loss_core(p, t, "l2"),
}


def _first_element_index(t: torch.Tensor, channel: int) -> tuple[int, ...]:
    """Index tuple of the channel's first element (all other dims at 0)."""
    idx = [0] * t.dim()
    idx[-3] = channel
    return tuple(idx)


def _measured_gradient(loss: str, pred: torch.Tensor, target: torch.Tensor,
                       channel_measured: int) -> float:
    probe = pred.detach().clone().requires_grad_(True)
    _PROBE_CORES[loss](probe, target).backward()
    return probe.grad[_first_element_index(probe, channel_measured)].item()


def cross_channel_gradient_probe(loss: str, pred: torch.Tensor,
                                 target: torch.Tensor, channel_perturbed: int,
                                 channel_measured: int,
                                 step: float = 1e-4) -> float:
    """How much the measured channel's gradient moves when another
    channel's residual is nudged.

    Central finite differences on the unnormalized core: the residual in
    ``channel_perturbed`` (first element) is shifted by +-``step`` and the
    change in d(core)/d(pred) at the first element of ``channel_measured``
    is returned, per unit shift. Zero for channel-independent losses;
    nonzero for the joint L2 core whenever both channels carry residual.
    """
    if loss not in _PROBE_CORES:
        raise ValueError(f"loss must be one of {sorted(_PROBE_CORES)}, got {loss!r}")
    if loss.endswith("l2"):
        with torch.no_grad():
            residual = _per_channel(pred - target)
            if loss == "pixel_l2":
                degenerate = bool((residual * residual).sum() == 0)
            else:
                degenerate = bool((residual[channel_measured] ** 2).sum() == 0)
        if degenerate:
            raise ValueError(
                "the L2 root is nondifferentiable at a zero-residual point; "
                "give the measured channel a nonzero residual"
            )
    grads = []
    for sign in (1.0, -1.0):
        shifted = pred.detach().clone()
        shifted[_first_element_index(shifted, channel_perturbed)] += sign * step
        grads.append(_measured_gradient(loss, shifted, target, channel_measured))
    return (grads[0] - grads[1]) / (2.0 * step)


def reconstruction_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference; the cycle and identity building block."""
    _check_same_shape(a, b)
    return (a - b).abs().mean()


def cycle_loss(x: torch.Tensor, y: torch.Tensor, map_x: torch.Tensor,
               map_y: torch.Tensor, generator, *,
               fake_y: torch.Tensor | None = None,
               fake_x: torch.Tensor | None = None,
               dropout_active: bool = True,
               rng: torch.Generator | None = None) -> torch.Tensor:
    """Translate to the other gesture and back with one shared generator;
    penalize the round trip's distance to the source in mean L1.

    Precomputed translations can be passed in to share forwards with the
    adversarial term.
    """
    if fake_y is None:
        fake_y = generator(x, map_y, dropout_active, rng)
    if fake_x is None:
        fake_x = generator(y, map_x, dropout_active, rng)
    rec_x = generator(fake_y, map_x, dropout_active, rng)
    rec_y = generator(fake_x, map_y, dropout_active, rng)
    return reconstruction_l1(x, rec_x) + reconstruction_l1(y, rec_y)


def identity_loss(x: torch.Tensor, y: torch.Tensor,
                  generated_xy: torch.Tensor, generated_yx: torch.Tensor,
                  extractor) -> torch.Tensor:
    """Feature-space L1 between each real image and the translation that
    should depict the same person, under a frozen extractor."""
    return (reconstruction_l1(extractor(y), extractor(generated_xy))
            + reconstruction_l1(extractor(x), extractor(generated_yx)))


def total_generator_loss(adv_g, color, cycle, identity,
                         weights: LossWeights):
    """Weighted sum of the generator-side terms; recombination is exact."""
    return (adv_g + weights.lambda1 * color + weights.lambda2 * cycle
            + weights.lambda3 * identity)
