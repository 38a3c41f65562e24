"""Render hand poses into single-channel conditioning maps.

Four variants exist:

- ``K``: a binary disk of the given radius stamped at every keypoint.
- ``Khat``: the same disks, filled with each keypoint's confidence.
- ``S``: the 20 skeleton edges drawn as lines of the given width.
- ``Shat``: the same lines, each filled with the confidence of the edge's
  joint farther from the wrist.

Disks are the closed Euclidean set ``dx^2 + dy^2 <= radius^2`` on integer
pixel centers, stamped at the keypoint rounded to the nearest pixel. Lines
are capsules: every pixel within ``width / 2`` of the real-valued segment.
Overlaps take the maximum value so maps stay in [0, 1]; untouched pixels
are exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import HandPose, iter_skeleton_segments

VARIANTS = ("K", "Khat", "S", "Shat")

DEFAULT_RADIUS = 4.0
DEFAULT_WIDTH = 4.0


@dataclass(frozen=True)
class ConditioningMap:
    """A rendered conditioning image plus the parameters that produced it."""

    pixels: np.ndarray  # H x W float32 in [0, 1]
    variant: str
    radius: float = DEFAULT_RADIUS
    width: float = DEFAULT_WIDTH

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2:
            raise ValueError(
                f"pixels must be 2-D (H, W), got shape {self.pixels.shape}"
            )
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown conditioning variant {self.variant!r}; expected "
                f"one of {{{', '.join(VARIANTS)}}}"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]


def _stamp_disk(canvas: np.ndarray, p: float, q: float, radius: float,
                value: float) -> None:
    h, w = canvas.shape
    cu = int(np.rint(p))
    cv = int(np.rint(q))
    r = int(np.floor(radius))
    u0, u1 = max(cu - r, 0), min(cu + r, w - 1)
    v0, v1 = max(cv - r, 0), min(cv + r, h - 1)
    if u0 > u1 or v0 > v1:
        return
    du = np.arange(u0, u1 + 1) - cu
    dv = np.arange(v0, v1 + 1) - cv
    inside = (dv[:, None] ** 2 + du[None, :] ** 2) <= radius * radius
    region = canvas[v0 : v1 + 1, u0 : u1 + 1]
    np.maximum(region, np.where(inside, np.float32(value), np.float32(0.0)),
               out=region)


def _stamp_capsule(canvas: np.ndarray, ax: float, ay: float, bx: float,
                   by: float, half_width: float, value: float) -> None:
    h, w = canvas.shape
    margin = half_width + 1.0
    u0 = max(int(np.floor(min(ax, bx) - margin)), 0)
    u1 = min(int(np.ceil(max(ax, bx) + margin)), w - 1)
    v0 = max(int(np.floor(min(ay, by) - margin)), 0)
    v1 = min(int(np.ceil(max(ay, by) + margin)), h - 1)
    if u0 > u1 or v0 > v1:
        return
    # Point-to-segment distance, written so that mirroring the inputs
    # negates every intermediate exactly: the inside/outside decision is
    # then bit-identical under left-right flips.
    us = np.arange(u0, u1 + 1, dtype=np.float64)
    vs = np.arange(v0, v1 + 1, dtype=np.float64)
    ux = us[None, :] - ax
    uy = vs[:, None] - ay
    dx = bx - ax
    dy = by - ay
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        t = np.zeros_like(ux + uy)
    else:
        t = np.clip((ux * dx + uy * dy) / seg_len2, 0.0, 1.0)
    ex = ux - t * dx
    ey = uy - t * dy
    inside = ex * ex + ey * ey <= half_width * half_width
    region = canvas[v0 : v1 + 1, u0 : u1 + 1]
    np.maximum(region, np.where(inside, np.float32(value), np.float32(0.0)),
               out=region)


def rasterize_keypoints(pose: HandPose, confidence_weighted: bool = False,
                        radius: float = DEFAULT_RADIUS) -> ConditioningMap:
    """Stamp one disk per keypoint; ``K`` (binary) or ``Khat`` (confidence).

    Off-image keypoints contribute only their in-bounds disk portion.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    canvas = np.zeros((pose.image_height, pose.image_width), dtype=np.float32)
    for kp in pose.keypoints:
        value = kp.c if confidence_weighted else 1.0
        _stamp_disk(canvas, kp.p, kp.q, radius, value)
    variant = "Khat" if confidence_weighted else "K"
    return ConditioningMap(canvas, variant, radius=radius)


def rasterize_skeleton(pose: HandPose, confidence_weighted: bool = False,
                       width: float = DEFAULT_WIDTH) -> ConditioningMap:
    """Draw the 20 skeleton edges as capsules; ``S`` or ``Shat``.

    In the confidence-weighted variant each line carries the confidence of
    the edge's far joint. A degenerate edge (both joints coincident)
    collapses to a disk of radius ``width / 2`` around the shared point.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    canvas = np.zeros((pose.image_height, pose.image_width), dtype=np.float32)
    half = width / 2.0
    for near, far in iter_skeleton_segments(pose):
        value = far.c if confidence_weighted else 1.0
        _stamp_capsule(canvas, near.p, near.q, far.p, far.q, half, value)
    variant = "Shat" if confidence_weighted else "S"
    return ConditioningMap(canvas, variant, width=width)


def rasterize(pose: HandPose, variant: str, radius: float = DEFAULT_RADIUS,
              width: float = DEFAULT_WIDTH) -> ConditioningMap:
    """Render the conditioning map for a named variant."""
    if variant == "K":
        return rasterize_keypoints(pose, confidence_weighted=False, radius=radius)
    if variant == "Khat":
        return rasterize_keypoints(pose, confidence_weighted=True, radius=radius)
    if variant == "S":
        return rasterize_skeleton(pose, confidence_weighted=False, width=width)
    if variant == "Shat":
        return rasterize_skeleton(pose, confidence_weighted=True, width=width)
    raise ValueError(
        f"unknown conditioning variant {variant!r}; expected one of "
        f"{{{', '.join(VARIANTS)}}}"
    )


def map_to_uint8(cond: ConditioningMap) -> np.ndarray:
    """Export a map as 8-bit grayscale: value = round(255 * pixel)."""
    return np.rint(cond.pixels * 255.0).astype(np.uint8)
