import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from conftest import random_pose
from handshift.annotations import flip_pose, scale_pose
from handshift.dataset import (
    CorpusError,
    CorpusRecord,
    GesturePair,
    SplitSpec,
    enumerate_pairs,
    image_to_uint8,
    load_corpus,
    load_image,
    load_split,
    load_training_example,
    make_synthetic_corpus,
    save_split,
    split_indices,
    split_pairs,
    stack_examples,
)
from handshift.rasterize import rasterize


def fake_records(layout):
    """Records from (subject, gesture, repeat) triples, no files behind them."""
    rng = np.random.default_rng(77)
    out = []
    for subject, gesture, repeat in layout:
        name = f"{subject}_{gesture}_{repeat}"
        out.append(CorpusRecord(identifier=name, subject=subject,
                                gesture=gesture, pose=random_pose(rng, 64),
                                image_path=f"{name}.png"))
    return out


# --- pair enumeration -------------------------------------------------------

def test_pair_count_one_record_per_gesture():
    records = fake_records([("a", "fist", 0), ("a", "palm", 0)])
    assert len(enumerate_pairs(records)) == 2


def test_pair_count_matches_closed_form(corpus_pairs):
    # 1 subject, 2 gestures, 2 repeats: 2 ordered gesture pairs x 2 x 2
    assert len(corpus_pairs) == 8


def test_pairs_never_cross_subjects():
    records = fake_records([(s, g, 0) for s in ("a", "b")
                            for g in ("fist", "palm")])
    pairs = enumerate_pairs(records)
    assert len(pairs) == 4
    assert all(p.source.subject == p.target.subject for p in pairs)


def test_single_gesture_subjects_yield_nothing():
    records = fake_records([("a", "fist", 0), ("b", "fist", 0)])
    assert enumerate_pairs(records) == []


def test_pair_order_is_canonical():
    records = fake_records([("a", "palm", 1), ("a", "fist", 0),
                            ("a", "palm", 0), ("a", "fist", 1)])
    pairs = enumerate_pairs(records)
    by_id = sorted(records, key=lambda r: r.identifier)
    want = [(s.identifier, t.identifier)
            for s, t in itertools.product(by_id, by_id)
            if s.subject == t.subject and s.gesture != t.gesture]
    got = [(p.source.identifier, p.target.identifier) for p in pairs]
    assert got == want


def test_pair_validation():
    a, b = fake_records([("a", "fist", 0), ("b", "palm", 0)])
    with pytest.raises(ValueError, match="subject"):
        GesturePair(a, b)
    c, d = fake_records([("a", "fist", 0), ("a", "fist", 1)])
    with pytest.raises(ValueError, match="gesture"):
        GesturePair(c, d)


# --- train/test splitting ---------------------------------------------------

def test_split_is_deterministic_and_disjoint():
    spec = SplitSpec(seed=5, train_pairs=20, test_pairs=10)
    train_a, test_a = split_indices(40, spec)
    train_b, test_b = split_indices(40, spec)
    assert train_a == train_b and test_a == test_b
    assert len(train_a) == 20 and len(test_a) == 10
    assert not set(train_a) & set(test_a)
    assert set(train_a) | set(test_a) <= set(range(40))


def test_split_seed_changes_assignment():
    a = split_indices(30, SplitSpec(seed=1, train_pairs=15, test_pairs=15))
    b = split_indices(30, SplitSpec(seed=2, train_pairs=15, test_pairs=15))
    assert a != b


def test_split_infeasible_counts():
    with pytest.raises(ValueError, match="8"):
        split_indices(8, SplitSpec(seed=0, train_pairs=6, test_pairs=3))


def test_split_pairs_agrees_with_indices(corpus_pairs):
    spec = SplitSpec(seed=9, train_pairs=5, test_pairs=3)
    train, test = split_pairs(corpus_pairs, spec)
    train_idx, test_idx = split_indices(len(corpus_pairs), spec)
    assert [p.source.identifier for p in train] == [
        corpus_pairs[i].source.identifier for i in train_idx]
    assert [p.target.identifier for p in test] == [
        corpus_pairs[i].target.identifier for i in test_idx]


def test_split_file_round_trip(tmp_path):
    spec = SplitSpec(seed=4, train_pairs=3, test_pairs=2)
    train_idx, test_idx = split_indices(6, spec)
    path = tmp_path / "split.json"
    save_split(str(path), spec, train_idx, test_idx)
    seed, train, test = load_split(str(path))
    assert (seed, train, test) == (4, train_idx, test_idx)
    # the file itself is plain json
    payload = json.loads(path.read_text())
    assert set(payload) == {"seed", "train", "test"}


# --- image io ---------------------------------------------------------------

def test_load_image_value_mapping(tmp_path):
    grid = np.zeros((4, 4, 3), dtype=np.uint8)
    grid[..., 0] = np.arange(16).reshape(4, 4) * 17
    path = tmp_path / "grid.png"
    Image.fromarray(grid).save(path)
    loaded = load_image(str(path), 4)
    assert loaded.shape == (3, 4, 4)
    assert loaded.dtype == np.float32
    want = grid.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0
    np.testing.assert_array_equal(loaded, want)


def test_load_image_resize_constant(tmp_path):
    flat = np.full((32, 32, 3), 200, dtype=np.uint8)
    path = tmp_path / "flat.png"
    Image.fromarray(flat).save(path)
    loaded = load_image(str(path), 8)
    assert loaded.shape == (3, 8, 8)
    np.testing.assert_allclose(loaded, 200 / 127.5 - 1.0, atol=1e-6)


def test_image_uint8_round_trip():
    levels = np.arange(256, dtype=np.uint8).reshape(16, 16)
    img = np.stack([levels, levels.T, 255 - levels]).astype(np.float32)
    as_float = img / 127.5 - 1.0
    # output is HWC, ready for the image writer
    np.testing.assert_array_equal(image_to_uint8(as_float),
                                  img.astype(np.uint8).transpose(1, 2, 0))


def test_image_to_uint8_clips_out_of_range():
    wild = np.array([[[-3.0, 3.0], [0.0, 1.0]]], dtype=np.float32)
    out = image_to_uint8(wild)  # (2, 2, 1)
    assert out[0, 0, 0] == 0 and out[0, 1, 0] == 255
    assert out[1, 1, 0] == 255


# --- corpus loading ---------------------------------------------------------

def test_load_corpus_resolves_paths(corpus_records):
    for record in corpus_records:
        assert Path(record.image_path).is_file()
        assert record.pose.image_width == 64


def test_load_corpus_bad_manifest_line(tmp_path, corpus):
    _, annotations = corpus
    bad = tmp_path / "manifest.txt"
    bad.write_text("images/s0_g0_r0.png s0\n")
    with pytest.raises(CorpusError, match=r"manifest\.txt:1"):
        load_corpus(str(bad), annotations)


def test_load_corpus_missing_annotation(tmp_path, corpus):
    manifest, annotations = corpus
    lines = Path(manifest).read_text().splitlines()
    parts = lines[0].split()
    parts[0] = "images/nonexistent.png"
    bad = tmp_path / "manifest.txt"
    bad.write_text(" ".join(parts) + "\n")
    with pytest.raises(CorpusError, match="nonexistent"):
        load_corpus(str(bad), annotations)


def test_record_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(CorpusError, match="subject"):
        CorpusRecord(identifier="a.png", subject="", gesture="g",
                     pose=random_pose(rng, 32), image_path="x.png")
    with pytest.raises(CorpusError, match="gesture"):
        CorpusRecord(identifier="a.png", subject="s", gesture="",
                     pose=random_pose(rng, 32), image_path="x.png")


# --- training examples ------------------------------------------------------

def test_example_shapes_and_ranges(corpus_pairs):
    ex = load_training_example(corpus_pairs[0], image_size=32)
    for img in (ex.x, ex.y):
        assert img.shape == (3, 32, 32)
        assert img.dtype == np.float32
        assert img.min() >= -1.0 and img.max() <= 1.0
    for cond in (ex.map_x, ex.map_y):
        assert cond.shape == (1, 32, 32)
        assert cond.dtype == np.float32
        assert cond.min() >= 0.0 and cond.max() <= 1.0


def test_example_maps_match_rasterizer(corpus_pairs):
    pair = corpus_pairs[1]
    ex = load_training_example(pair, image_size=32, variant="Khat")
    want = rasterize(scale_pose(pair.source.pose, 32, 32), "Khat").pixels
    np.testing.assert_array_equal(ex.map_x[0], want)


def test_flip_mirrors_images_and_maps(corpus_pairs):
    pair = corpus_pairs[2]
    plain = load_training_example(pair, image_size=64)
    flipped = load_training_example(pair, image_size=64, flip=True)
    np.testing.assert_array_equal(flipped.x, plain.x[:, :, ::-1])
    np.testing.assert_array_equal(flipped.y, plain.y[:, :, ::-1])
    want = rasterize(flip_pose(scale_pose(pair.target.pose, 64, 64)), "S").pixels
    np.testing.assert_array_equal(flipped.map_y[0], want)
    # grid-aligned strokes are not generally mirror-symmetric, so the two
    # maps really are different pictures
    assert not np.array_equal(flipped.map_y, plain.map_y)


def test_stack_examples(corpus_pairs):
    examples = [load_training_example(p, image_size=16)
                for p in corpus_pairs[:3]]
    x, y, map_x, map_y = stack_examples(examples)
    assert x.shape == (3, 3, 16, 16)
    assert map_y.shape == (3, 1, 16, 16)
    np.testing.assert_array_equal(x[1], examples[1].x)
    np.testing.assert_array_equal(map_x[2], examples[2].map_x)


# --- the synthetic corpus itself --------------------------------------------

def test_synthetic_corpus_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        make_synthetic_corpus(str(out), subjects=1, gestures=2, repeats=1,
                              image_size=32, seed=11)
    for rel in ("manifest.txt", "annotations.txt", "images/s0_g0_r0.png"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_synthetic_corpus_seed_changes_pixels(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    make_synthetic_corpus(str(a), subjects=1, gestures=2, repeats=1,
                          image_size=32, seed=1)
    make_synthetic_corpus(str(b), subjects=1, gestures=2, repeats=1,
                          image_size=32, seed=2)
    assert ((a / "images/s0_g0_r0.png").read_bytes()
            != (b / "images/s0_g0_r0.png").read_bytes())


def test_synthetic_corpus_scales(tmp_path):
    manifest, annotations = make_synthetic_corpus(
        str(tmp_path), subjects=2, gestures=2, repeats=2, image_size=32, seed=0)
    records = load_corpus(manifest, annotations)
    assert len(records) == 8
    assert len(enumerate_pairs(records)) == 16
    assert len({r.subject for r in records}) == 2
