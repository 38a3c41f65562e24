import numpy as np
import pytest

from handshift.annotations import HandPose, Keypoint, NUM_KEYPOINTS
from handshift.dataset import enumerate_pairs, load_corpus, make_synthetic_corpus


def sixteenth_coord(rng: np.random.Generator, size: int) -> float:
    """A coordinate on the odd-sixteenths grid inside [0, size-1].

    Odd numerators over 16 are exact in binary floating point and stay
    exact under mirroring (size-1 minus the value), and they can never
    land on a .5 rounding tie. Pixel-exactness tests lean on that.
    """
    k = int(rng.integers(0, 8 * (size - 1))) * 2 + 1
    return k / 16.0


def random_pose(rng: np.random.Generator, size: int = 32,
                confidence: str = "mixed") -> HandPose:
    """An arbitrary (not hand-shaped) pose with grid-exact coordinates."""
    points = []
    for _ in range(NUM_KEYPOINTS):
        if confidence == "ones":
            c = 1.0
        else:
            c = int(rng.integers(0, 17)) / 16.0
        points.append(Keypoint(sixteenth_coord(rng, size),
                               sixteenth_coord(rng, size), c))
    return HandPose(tuple(points), size, size)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """A tiny synthetic corpus: 1 subject x 2 gestures x 2 repeats."""
    root = tmp_path_factory.mktemp("corpus")
    manifest, annotations = make_synthetic_corpus(str(root), subjects=1,
                                                  gestures=2, repeats=2,
                                                  image_size=64, seed=3)
    return manifest, annotations


@pytest.fixture(scope="session")
def corpus_records(corpus):
    return load_corpus(*corpus)


@pytest.fixture(scope="session")
def corpus_pairs(corpus_records):
    return enumerate_pairs(corpus_records)
