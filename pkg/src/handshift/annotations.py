"""Hand pose annotations: 21 keypoints, parsing, flipping and scaling.

Keypoints follow the common 21-joint hand layout: index 0 is the wrist,
followed by four joints per finger (thumb 1-4, index 5-8, middle 9-12,
ring 13-16, little 17-20). Coordinates are kept as reals so that scaling
is lossless; rounding to pixels happens only at rasterization time.

Annotation files are line oriented. A header line ``#width=<W> height=<H>``
sets the image dimensions for all following records, and each record line is

    <image-identifier> <p0> <q0> <c0> ... <p20> <q20> <c20>

i.e. 64 whitespace-separated fields: an identifier and 21 (p, q, c) triples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

NUM_KEYPOINTS = 21

#: Fixed hand skeleton tree: 20 edges over the 21 joints, one chain per
#: finger rooted at the wrist. The second index of each edge is always the
#: joint farther from the wrist; confidence-weighted skeleton maps use the
#: confidence of that second joint.
SKELETON_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (1, 2), (2, 3), (3, 4),        # thumb
    (0, 5), (5, 6), (6, 7), (7, 8),        # index
    (0, 9), (9, 10), (10, 11), (11, 12),   # middle
    (0, 13), (13, 14), (14, 15), (15, 16),  # ring
    (0, 17), (17, 18), (18, 19), (19, 20),  # little
)


class AnnotationError(ValueError):
    """Raised for malformed annotation input, with the offending record."""


@dataclass(frozen=True)
class Keypoint:
    """A single detected joint: pixel coordinates plus detector confidence.

    ``p`` is the horizontal coordinate, ``q`` the vertical one. Both may lie
    outside the image bounds (detectors do that); rasterization clips, the
    parser does not. ``c`` must be in [0, 1].
    """

    p: float
    q: float
    c: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.c <= 1.0:
            raise AnnotationError(f"confidence {self.c!r} outside [0, 1]")


@dataclass(frozen=True)
class HandPose:
    """Exactly 21 keypoints plus the dimensions of the annotated image."""

    keypoints: tuple[Keypoint, ...]
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        if len(self.keypoints) != NUM_KEYPOINTS:
            raise AnnotationError(
                f"expected {NUM_KEYPOINTS} keypoints, got {len(self.keypoints)}"
            )
        if self.image_width <= 0 or self.image_height <= 0:
            raise AnnotationError(
                f"image dimensions must be positive, got "
                f"{self.image_width}x{self.image_height}"
            )


def flip_pose(pose: HandPose) -> HandPose:
    """Mirror a pose left-right within its image.

    Uses ``p' = (W - 1) - p`` so that pixel-center symmetry holds on integer
    grids; flipping twice returns the original pose exactly.
    """
    w = pose.image_width
    flipped = tuple(
        Keypoint(p=(w - 1) - kp.p, q=kp.q, c=kp.c) for kp in pose.keypoints
    )
    return replace(pose, keypoints=flipped)


def scale_pose(pose: HandPose, new_width: int, new_height: int) -> HandPose:
    """Rescale keypoint coordinates to a new image size.

    Confidences are unchanged. Raises :class:`AnnotationError` for
    non-positive target dimensions.
    """
    if new_width <= 0 or new_height <= 0:
        raise AnnotationError(
            f"target dimensions must be positive, got {new_width}x{new_height}"
        )
    sx = new_width / pose.image_width
    sy = new_height / pose.image_height
    scaled = tuple(
        Keypoint(p=kp.p * sx, q=kp.q * sy, c=kp.c) for kp in pose.keypoints
    )
    return HandPose(scaled, new_width, new_height)


def _parse_header(line: str, lineno: int) -> tuple[int, int]:
    fields = line[1:].split()
    dims = {}
    for field in fields:
        key, _, value = field.partition("=")
        if key in ("width", "height"):
            try:
                dims[key] = int(value)
            except ValueError:
                raise AnnotationError(
                    f"line {lineno}: bad header value {field!r}"
                ) from None
    if "width" not in dims or "height" not in dims:
        raise AnnotationError(
            f"line {lineno}: header must carry width=<W> height=<H>, got {line!r}"
        )
    return dims["width"], dims["height"]


def parse_annotations(source: str) -> list[tuple[str, HandPose]]:
    """Parse annotation file content into ``(image identifier, pose)`` pairs.

    Records keep file order. Malformed records raise
    :class:`AnnotationError` naming the record index (0-based, headers and
    blank lines not counted) and, for confidence violations, the joint index.
    """
    records: list[tuple[str, HandPose]] = []
    width = height = None
    record_index = 0
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            width, height = _parse_header(line, lineno)
            continue
        if width is None or height is None:
            raise AnnotationError(
                f"record {record_index}: no #width=<W> height=<H> header seen yet"
            )
        fields = line.split()
        if len(fields) != 1 + 3 * NUM_KEYPOINTS:
            raise AnnotationError(
                f"record {record_index}: expected {1 + 3 * NUM_KEYPOINTS} fields, "
                f"got {len(fields)}"
            )
        identifier = fields[0]
        keypoints = []
        for joint in range(NUM_KEYPOINTS):
            chunk = fields[1 + 3 * joint : 4 + 3 * joint]
            try:
                p, q, c = (float(v) for v in chunk)
            except ValueError:
                raise AnnotationError(
                    f"record {record_index}: joint {joint}: "
                    f"non-numeric triple {chunk!r}"
                ) from None
            if not 0.0 <= c <= 1.0:
                raise AnnotationError(
                    f"record {record_index}: joint {joint}: "
                    f"confidence {c!r} outside [0, 1]"
                )
            keypoints.append(Keypoint(p, q, c))
        records.append((identifier, HandPose(tuple(keypoints), width, height)))
        record_index += 1
    return records


def serialize_annotations(records: Iterable[tuple[str, HandPose]]) -> str:
    """Render records back to annotation file text.

    Coordinates are written with ``repr`` so parse -> serialize -> parse
    round-trips to identical poses. A header line is emitted whenever the
    image dimensions change between consecutive records.
    """
    lines: list[str] = []
    current_dims: tuple[int, int] | None = None
    for identifier, pose in records:
        dims = (pose.image_width, pose.image_height)
        if dims != current_dims:
            lines.append(f"#width={dims[0]} height={dims[1]}")
            current_dims = dims
        triples = " ".join(
            f"{kp.p!r} {kp.q!r} {kp.c!r}" for kp in pose.keypoints
        )
        lines.append(f"{identifier} {triples}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_annotation_file(path) -> dict[str, HandPose]:
    """Read an annotation file into an identifier -> pose mapping."""
    with open(path, "r", encoding="utf-8") as fh:
        content = fh.read()
    poses: dict[str, HandPose] = {}
    for identifier, pose in parse_annotations(content):
        poses[identifier] = pose
    return poses


def iter_skeleton_segments(
    pose: HandPose,
) -> Iterator[tuple[Keypoint, Keypoint]]:
    """Yield (near-wrist joint, far joint) keypoint pairs for the 20 edges."""
    for a, b in SKELETON_EDGES:
        yield pose.keypoints[a], pose.keypoints[b]
