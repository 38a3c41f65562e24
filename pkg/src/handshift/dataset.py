"""Paired training data: corpus loading, pair enumeration, splits, flips.

A corpus is a manifest of images (one `<image-path> <subject> <gesture>`
line each) plus an annotation file keyed by image path. Training examples
are ordered pairs of records sharing a subject but not a gesture; the full
ordered-pair universe is enumerated canonically and splits are drawn from
it by seed, so a split is reproducible from (corpus, seed, counts) alone.

Images load as float32 CHW in [-1, 1]; conditioning maps are rasterized
from the scaled (and, when the flip fires, mirrored) poses so image and
map stay geometrically consistent.

Also here: a synthetic corpus generator that draws parametric 21-joint
hands on textured backgrounds, small enough to train against on a CPU.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .annotations import (
    HandPose,
    Keypoint,
    flip_pose,
    iter_skeleton_segments,
    parse_annotations,
    scale_pose,
    serialize_annotations,
)
from .rasterize import DEFAULT_RADIUS, DEFAULT_WIDTH, _stamp_capsule, rasterize


class CorpusError(ValueError):
    """Malformed manifest, missing annotation, or infeasible split."""


@dataclass(frozen=True)
class CorpusRecord:
    """One image of one subject performing one gesture."""

    identifier: str
    subject: str
    gesture: str
    pose: HandPose
    image_path: str

    def __post_init__(self) -> None:
        if not self.subject:
            raise CorpusError(f"record {self.identifier!r}: empty subject id")
        if not self.gesture:
            raise CorpusError(f"record {self.identifier!r}: empty gesture label")


@dataclass(frozen=True)
class GesturePair:
    """Ordered (source, target): same subject, different gesture."""

    source: CorpusRecord
    target: CorpusRecord

    def __post_init__(self) -> None:
        if self.source.subject != self.target.subject:
            raise CorpusError(
                f"pair {self.source.identifier!r} -> {self.target.identifier!r}: "
                "subjects differ"
            )
        if self.source.gesture == self.target.gesture:
            raise CorpusError(
                f"pair {self.source.identifier!r} -> {self.target.identifier!r}: "
                "gestures are equal"
            )


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_pairs: int
    test_pairs: int

    def __post_init__(self) -> None:
        if self.train_pairs < 0 or self.test_pairs < 0:
            raise CorpusError("split counts must be nonnegative")


def load_corpus(manifest_path: str, annotations_path: str) -> list[CorpusRecord]:
    """Read the manifest and attach every record's pose from the
    annotation file; image paths resolve relative to the manifest."""
    with open(annotations_path, encoding="utf-8") as fh:
        poses = dict(parse_annotations(fh.read()))
    root = os.path.dirname(os.path.abspath(manifest_path))
    records = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise CorpusError(
                    f"{manifest_path}:{lineno}: expected "
                    f"'<image-path> <subject-id> <gesture-label>', got {line!r}"
                )
            identifier, subject, gesture = fields
            if identifier not in poses:
                raise CorpusError(
                    f"{manifest_path}:{lineno}: no annotation for {identifier!r} "
                    f"in {annotations_path}"
                )
            records.append(CorpusRecord(
                identifier=identifier, subject=subject, gesture=gesture,
                pose=poses[identifier],
                image_path=os.path.join(root, identifier),
            ))
    return records


def enumerate_pairs(records: list[CorpusRecord]) -> list[GesturePair]:
    """All ordered same-subject, different-gesture pairs, sorted by
    (source identifier, target identifier)."""
    ordered = sorted(records, key=lambda r: r.identifier)
    return [GesturePair(a, b)
            for a in ordered for b in ordered
            if a.subject == b.subject and a.gesture != b.gesture]


def split_indices(num_pairs: int, spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Seeded permutation of range(num_pairs), cut into train/test index
    lists. Disjoint by construction."""
    if spec.train_pairs + spec.test_pairs > num_pairs:
        raise CorpusError(
            f"split wants {spec.train_pairs}+{spec.test_pairs} pairs "
            f"but only {num_pairs} exist"
        )
    perm = np.random.default_rng(spec.seed).permutation(num_pairs)
    train = [int(i) for i in perm[:spec.train_pairs]]
    test = [int(i) for i in perm[spec.train_pairs:spec.train_pairs + spec.test_pairs]]
    return train, test


def split_pairs(pairs: list[GesturePair],
                spec: SplitSpec) -> tuple[list[GesturePair], list[GesturePair]]:
    train_idx, test_idx = split_indices(len(pairs), spec)
    return [pairs[i] for i in train_idx], [pairs[i] for i in test_idx]


def save_split(path: str, spec: SplitSpec, train_idx: list[int],
               test_idx: list[int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"seed": spec.seed, "train": train_idx, "test": test_idx},
                  fh, indent=0)
        fh.write("\n")


def load_split(path: str) -> tuple[int, list[int], list[int]]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return int(data["seed"]), [int(i) for i in data["train"]], [int(i) for i in data["test"]]


def load_image(path: str, image_size: int) -> np.ndarray:
    """Image file -> float32 (3, H, W) in [-1, 1], area-average resized."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (image_size, image_size):
                rgb = rgb.resize((image_size, image_size), Image.Resampling.BOX)
            arr = np.asarray(rgb, dtype=np.float32)
    except OSError as exc:
        raise CorpusError(f"cannot read image {path!r}: {exc}") from exc
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """Float32 (3, H, W) in [-1, 1] -> uint8 (H, W, 3) for export."""
    arr = np.clip((image.transpose(1, 2, 0) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


@dataclass(frozen=True)
class TrainingExample:
    """Both directions of one pair: images plus target-pose maps.

    ``map_y`` conditions x -> y (it encodes y's pose); ``map_x`` the
    reverse. Maps are (1, H, W) float32 in [0, 1].
    """

    x: np.ndarray
    y: np.ndarray
    map_x: np.ndarray
    map_y: np.ndarray
    pair: GesturePair


def _prepare(record: CorpusRecord, image_size: int, flip: bool,
             variant: str, radius: float, width: float,
             ) -> tuple[np.ndarray, np.ndarray]:
    image = load_image(record.image_path, image_size)
    pose = scale_pose(record.pose, image_size, image_size)
    if flip:
        image = image[:, :, ::-1].copy()
        pose = flip_pose(pose)
    cond = rasterize(pose, variant, radius=radius, width=width)
    return image, cond.pixels[None, :, :]


def load_training_example(pair: GesturePair, *, image_size: int,
                          variant: str = "S", flip: bool = False,
                          radius: float = DEFAULT_RADIUS,
                          width: float = DEFAULT_WIDTH) -> TrainingExample:
    """Load both records of a pair at image_size. A flip mirrors both
    images and both poses together, before rasterization, so the maps
    match the mirrored geometry pixel for pixel."""
    x, map_x = _prepare(pair.source, image_size, flip, variant, radius, width)
    y, map_y = _prepare(pair.target, image_size, flip, variant, radius, width)
    return TrainingExample(x=x, y=y, map_x=map_x, map_y=map_y, pair=pair)


def stack_examples(examples: list[TrainingExample],
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batch the arrays of several examples: (x, y, map_x, map_y), each
    with a leading batch dim."""
    if not examples:
        raise CorpusError("cannot stack an empty batch")
    return (np.stack([e.x for e in examples]),
            np.stack([e.y for e in examples]),
            np.stack([e.map_x for e in examples]),
            np.stack([e.map_y for e in examples]))


# --- synthetic corpus -------------------------------------------------------

# Per-finger segment lengths as fractions of the image height, palm first.
_FINGER_LENGTHS = (0.17, 0.11, 0.08, 0.06)
# Resting angles of the five fingers, degrees from straight up.
_FINGER_ANGLES = (-46.0, -22.0, 0.0, 22.0, 46.0)


def _synthetic_pose(gesture_index: int, size: int,
                    rng: np.random.Generator) -> HandPose:
    """A plausible 21-joint hand: wrist low center, five 4-joint chains.

    The gesture index selects which fingers fold down (its bit pattern),
    so distinct gestures are geometrically distinct; per-repeat jitter
    comes from ``rng``.
    """
    jitter = rng.uniform(-0.02, 0.02, size=2) * size
    wrist = np.array([0.5 * size + jitter[0], 0.84 * size + jitter[1]])
    points = [Keypoint(float(wrist[0]), float(wrist[1]), 1.0)]
    for finger in range(5):
        folded = (gesture_index >> finger) & 1
        angle = np.deg2rad(_FINGER_ANGLES[finger] + rng.uniform(-3.0, 3.0))
        # A folded finger bends sharply at each joint and ends up pointing
        # back down; an extended one stays nearly straight.
        bend = np.deg2rad(52.0 if folded else 4.0) * np.sign(_FINGER_ANGLES[finger] or 1.0)
        pos = wrist.copy()
        heading = angle
        for segment, length in enumerate(_FINGER_LENGTHS):
            if segment > 0:
                heading += bend
            pos = pos + length * size * np.array([np.sin(heading), -np.cos(heading)])
            points.append(Keypoint(float(np.clip(pos[0], 1.0, size - 2.0)),
                                   float(np.clip(pos[1], 1.0, size - 2.0)),
                                   float(rng.uniform(0.85, 1.0))))
    return HandPose(tuple(points), size, size)


def _textured_background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Low-frequency color texture, (H, W, 3) float in [0, 255]."""
    coarse = rng.uniform(0.0, 1.0, size=(4, 4, 3))
    reps = -(-size // 4)
    tile = np.repeat(np.repeat(coarse, reps, axis=0), reps, axis=1)[:size, :size]
    base = rng.uniform(40.0, 150.0, size=3)
    span = rng.uniform(30.0, 80.0, size=3)
    noise = rng.normal(0.0, 4.0, size=(size, size, 3))
    return np.clip(base + span * tile + noise, 0.0, 255.0)


def _draw_hand(canvas: np.ndarray, pose: HandPose, skin: np.ndarray,
               size: int) -> None:
    """Paint the skeleton as thick strokes of skin color onto (H, W, 3)."""
    stroke = max(2.0, 3.5 * size / 64.0)
    for edge_index, (near, far) in enumerate(iter_skeleton_segments(pose)):
        mask = np.zeros(canvas.shape[:2], dtype=np.float32)
        _stamp_capsule(mask, near.p, near.q, far.p, far.q, stroke / 2.0, 1.0)
        # Finger tips render a touch darker so repeated gestures aren't
        # uniform blobs of one color.
        shade = 1.0 - 0.06 * (edge_index % 4)
        canvas[mask > 0] = skin * shade


def make_synthetic_corpus(out_dir: str, *, subjects: int = 1,
                          gestures: int = 2, repeats: int = 2,
                          image_size: int = 64, seed: int = 0,
                          ) -> tuple[str, str]:
    """Write a complete corpus (images, annotations, manifest) under
    out_dir and return (manifest_path, annotations_path)."""
    if subjects < 1 or gestures < 2 or repeats < 1:
        raise CorpusError(
            "need subjects >= 1, gestures >= 2 (pairs require two), repeats >= 1"
        )
    rng = np.random.default_rng(seed)
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)

    manifest_lines = []
    annotated: list[tuple[str, HandPose]] = []
    for s in range(subjects):
        background = _textured_background(image_size, rng)
        skin = rng.uniform([170.0, 120.0, 90.0], [230.0, 180.0, 150.0])
        for g in range(gestures):
            for r in range(repeats):
                pose = _synthetic_pose(g, image_size, rng)
                canvas = background.copy()
                _draw_hand(canvas, pose, skin, image_size)
                identifier = f"images/s{s}_g{g}_r{r}.png"
                Image.fromarray(np.rint(canvas).astype(np.uint8)).save(
                    os.path.join(out_dir, identifier))
                manifest_lines.append(f"{identifier} s{s} g{g}")
                annotated.append((identifier, pose))

    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + "\n")
    annotations_path = os.path.join(out_dir, "annotations.txt")
    with open(annotations_path, "w", encoding="utf-8") as fh:
        fh.write(serialize_annotations(annotated))
    return manifest_path, annotations_path


__all__ = [
    "CorpusError", "CorpusRecord", "GesturePair", "SplitSpec",
    "load_corpus", "enumerate_pairs", "split_indices", "split_pairs",
    "save_split", "load_split", "load_image", "image_to_uint8",
    "TrainingExample", "load_training_example", "stack_examples",
    "make_synthetic_corpus",
]
