import dataclasses
import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from handshift.dataset import load_training_example, stack_examples
from handshift.losses import LOSS_CSV_HEADER, LossBreakdown, LossWeights
from handshift.training import (
    CHECKPOINT_FILES,
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    config_from_dict,
    config_to_dict,
    discriminator_step,
    fit,
    generator_forwards,
    init_state,
    lambda3_at,
    load_checkpoint,
    save_checkpoint,
    train_step,
    translate,
)


def tiny_config(**overrides):
    base = dict(batch_size=4, epochs=2, seed=7, image_size=32, base_width=8)
    base.update(overrides)
    return TrainConfig(**base)


def file_hashes(directory):
    return {name: hashlib.sha256((Path(directory) / name).read_bytes()).hexdigest()
            for name in CHECKPOINT_FILES}


def batch_from(pairs, config):
    examples = [load_training_example(p, image_size=config.image_size)
                for p in pairs[:config.batch_size]]
    return tuple(torch.from_numpy(a) for a in stack_examples(examples))


# --- schedule and config ----------------------------------------------------

def test_lambda3_schedule_endpoints():
    config = tiny_config(epochs=5, lambda3_start=0.1, lambda3_end=0.5)
    assert lambda3_at(0, config) == 0.1
    assert lambda3_at(4, config) == 0.5
    assert lambda3_at(2, config) == pytest.approx(0.3)


def test_lambda3_schedule_is_linear():
    config = tiny_config(epochs=11, lambda3_start=0.0, lambda3_end=1.0)
    values = [lambda3_at(e, config) for e in range(11)]
    np.testing.assert_allclose(values, np.linspace(0.0, 1.0, 11), atol=1e-12)


def test_lambda3_single_epoch_uses_start():
    config = tiny_config(epochs=1, lambda3_start=0.25, lambda3_end=0.9)
    assert lambda3_at(0, config) == 0.25


def test_lambda3_epoch_out_of_range():
    config = tiny_config(epochs=3)
    with pytest.raises(TrainingError):
        lambda3_at(3, config)
    with pytest.raises(TrainingError):
        lambda3_at(-1, config)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(batch_size=0)
    with pytest.raises(ValueError):
        tiny_config(epochs=0)
    with pytest.raises(ValueError):
        tiny_config(learning_rate=-1e-4)
    with pytest.raises(ValueError):
        tiny_config(flip_probability=1.5)


def test_config_dict_round_trip():
    config = tiny_config(weights=LossWeights(lambda1=50.0, color_norm="l2"),
                         checkpoint_every=3, extractor_seed=9)
    data = config_to_dict(config)
    assert config_from_dict(data) == config
    # the dict is json-shaped: plain scalars and one nested mapping
    assert isinstance(data["weights"], dict)


# --- single-step mechanics --------------------------------------------------

def test_discriminator_step_leaves_generator_untouched(corpus_pairs):
    config = tiny_config()
    state = init_state(config)
    x, y, map_x, map_y = batch_from(corpus_pairs, config)
    fake_y, fake_x = generator_forwards(state, x, y, map_x, map_y)
    before = [p.detach().clone() for p in state.generator.parameters()]
    adv_d = discriminator_step(state, x, y, map_x, map_y, fake_y, fake_x)
    assert math.isfinite(adv_d)
    for p, prev in zip(state.generator.parameters(), before):
        assert p.grad is None or torch.all(p.grad == 0)
        assert torch.equal(p, prev)


def test_train_step_moves_both_sides(corpus_pairs):
    config = tiny_config()
    state = init_state(config)
    batch = batch_from(corpus_pairs, config)
    g_before = [p.detach().clone() for p in state.generator.parameters()]
    d_before = [p.detach().clone() for p in state.disc_xy.parameters()]
    breakdown = train_step(state, batch)
    assert all(math.isfinite(v) for v in dataclasses.asdict(breakdown).values())
    assert any(not torch.equal(p, prev) for p, prev
               in zip(state.generator.parameters(), g_before))
    assert any(not torch.equal(p, prev) for p, prev
               in zip(state.disc_xy.parameters(), d_before))


def test_breakdown_recombines_exactly(corpus_pairs):
    config = tiny_config()
    state = init_state(config)
    b = train_step(state, batch_from(corpus_pairs, config))
    lam3 = lambda3_at(0, config)
    w = config.weights
    assert b.total == b.adv_g + w.lambda1 * b.color + w.lambda2 * b.cycle + lam3 * b.identity
    assert b.adv_g == b.adv_g_xy + b.adv_g_yx
    assert b.color == b.color_xy + b.color_yx
    assert b.cycle == b.cycle_xy + b.cycle_yx
    assert b.identity == b.identity_xy + b.identity_yx


def test_chaos_adversarial_level_at_init(corpus_pairs):
    # an untrained pair of discriminators should sit near maximal confusion
    config = tiny_config()
    state = init_state(config)
    b = train_step(state, batch_from(corpus_pairs, config))
    assert b.adv_d == pytest.approx(2.0 * math.log(2.0), abs=0.25)


# --- the fit loop -----------------------------------------------------------

def test_fit_step_count_and_csv(tmp_path, corpus_pairs):
    config = tiny_config(epochs=3)
    out = tmp_path / "run"
    state, history = fit(config, list(corpus_pairs), str(out))
    # 8 pairs, batch 4: two steps per epoch
    assert len(history) == 6
    assert state.global_step == 6
    lines = (out / "losses.csv").read_text().splitlines()
    assert lines[0] == LOSS_CSV_HEADER
    assert len(lines) == 7
    steps = [int(row.split(",")[0]) for row in lines[1:]]
    assert steps == list(range(1, 7))


def test_fit_rejects_undersized_corpus(tmp_path, corpus_pairs):
    config = tiny_config(batch_size=16)
    with pytest.raises(TrainingError, match="batch"):
        fit(config, list(corpus_pairs), str(tmp_path / "run"))


def test_fit_is_deterministic(tmp_path, corpus_pairs):
    config = tiny_config()
    runs = []
    for name in ("a", "b"):
        _, history = fit(config, list(corpus_pairs), str(tmp_path / name))
        runs.append(history)
    for left, right in zip(*runs):
        assert dataclasses.asdict(left) == dataclasses.asdict(right)
    assert ((tmp_path / "a" / "losses.csv").read_bytes()
            == (tmp_path / "b" / "losses.csv").read_bytes())


def test_fit_seed_matters(tmp_path, corpus_pairs):
    _, first = fit(tiny_config(epochs=1), list(corpus_pairs),
                   str(tmp_path / "a"))
    _, second = fit(tiny_config(epochs=1, seed=8), list(corpus_pairs),
                    str(tmp_path / "b"))
    assert first[0].total != second[0].total


def test_csv_rows_recombine_exactly(tmp_path, corpus_pairs):
    config = tiny_config(epochs=2)
    out = tmp_path / "run"
    fit(config, list(corpus_pairs), str(out))
    w = config.weights
    for row in (out / "losses.csv").read_text().splitlines()[1:]:
        fields = row.split(",")
        adv_g, _, color, cycle, identity, total, lam3 = map(float, fields[1:])
        assert total == adv_g + w.lambda1 * color + w.lambda2 * cycle + lam3 * identity


# --- checkpoints and resumption ---------------------------------------------

def test_checkpoint_write_is_reproducible(tmp_path, corpus_pairs):
    config = tiny_config(epochs=1)
    state, _ = fit(config, list(corpus_pairs), str(tmp_path / "run"))
    save_checkpoint(state, str(tmp_path / "first"))
    reloaded = load_checkpoint(str(tmp_path / "first"))
    save_checkpoint(reloaded, str(tmp_path / "second"))
    assert file_hashes(tmp_path / "first") == file_hashes(tmp_path / "second")


def test_checkpoint_cadence(tmp_path, corpus_pairs):
    config = tiny_config(epochs=2, checkpoint_every=1)
    out = tmp_path / "run"
    fit(config, list(corpus_pairs), str(out))
    snapshots = sorted(p.name for p in (out / "checkpoints").iterdir())
    assert snapshots == ["final", "step1", "step2", "step3", "step4"]
    for name in CHECKPOINT_FILES:
        assert (out / "checkpoints" / "step3" / name).is_file()


def test_resume_mid_epoch_is_bitwise(tmp_path, corpus_pairs):
    config = tiny_config(epochs=4, checkpoint_every=3)
    full_out = tmp_path / "full"
    fit(config, list(corpus_pairs), str(full_out))

    resumed_out = tmp_path / "resumed"
    state, _ = fit(config, list(corpus_pairs), str(resumed_out),
                   resume_from=str(full_out / "checkpoints" / "step3"))
    assert state.global_step == 8

    def rows_after(path, step):
        rows = (path / "losses.csv").read_text().splitlines()[1:]
        return [r for r in rows if int(r.split(",")[0]) > step]

    assert rows_after(resumed_out, 3) == rows_after(full_out, 3)
    assert (file_hashes(full_out / "checkpoints" / "final")
            == file_hashes(resumed_out / "checkpoints" / "final"))


def test_resume_requires_matching_config(tmp_path, corpus_pairs):
    config = tiny_config(epochs=1, checkpoint_every=1)
    out = tmp_path / "run"
    fit(config, list(corpus_pairs), str(out))
    other = tiny_config(epochs=1, checkpoint_every=1, learning_rate=1e-3)
    with pytest.raises(TrainingError, match="config"):
        fit(other, list(corpus_pairs), str(tmp_path / "retry"),
            resume_from=str(out / "checkpoints" / "step1"))


def test_divergence_snapshot_and_error(tmp_path, corpus_pairs, monkeypatch):
    import handshift.training as tr

    def poisoned(state, batch):
        raise TrainingDiverged("non-finite loss at step 0: total=nan",
                               LossBreakdown(*([float("nan")] * 6)))

    monkeypatch.setattr(tr, "train_step", poisoned)
    out = tmp_path / "run"
    with pytest.raises(TrainingDiverged, match="non-finite"):
        fit(tiny_config(epochs=1), list(corpus_pairs), str(out))
    for name in CHECKPOINT_FILES:
        assert (out / "diverged" / name).is_file()


# --- inference --------------------------------------------------------------

def test_translate_shapes_and_range(tmp_path, corpus_pairs):
    config = tiny_config(epochs=1)
    state, _ = fit(config, list(corpus_pairs), str(tmp_path / "run"))
    example = load_training_example(corpus_pairs[0], image_size=32)
    image = torch.from_numpy(example.x)
    cond = torch.from_numpy(example.map_y)
    out = translate(state, image, cond, dropout_seed=0)
    assert out.shape == (3, 32, 32)
    assert out.min() >= -1.0 and out.max() <= 1.0
    batched = translate(state, image[None], cond[None], dropout_seed=0)
    assert batched.shape == (1, 3, 32, 32)
    assert torch.equal(batched[0], out)


def test_translate_dropout_seeding(tmp_path, corpus_pairs):
    state, _ = fit(tiny_config(epochs=1), list(corpus_pairs),
                   str(tmp_path / "run"))
    example = load_training_example(corpus_pairs[0], image_size=32)
    image = torch.from_numpy(example.x)
    cond = torch.from_numpy(example.map_y)
    a = translate(state, image, cond, dropout_seed=3)
    b = translate(state, image, cond, dropout_seed=3)
    c = translate(state, image, cond, dropout_seed=4)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    # with dropout off the seed is irrelevant
    d = translate(state, image, cond, dropout_seed=3, dropout_active=False)
    e = translate(state, image, cond, dropout_seed=4, dropout_active=False)
    assert torch.equal(d, e)


def test_translate_size_check(tmp_path, corpus_pairs):
    state, _ = fit(tiny_config(epochs=1), list(corpus_pairs),
                   str(tmp_path / "run"))
    with pytest.raises(ValueError):
        translate(state, torch.zeros(3, 16, 16), torch.zeros(1, 16, 16))
