"""Alternating adversarial training with seeded, resumable state.

One step = one Adam update of both discriminators together (on detached
generator outputs), then one Adam update of the generator on the full
objective (adversarial + color + cycle + identity), both translation
directions sharing the minibatch.

Determinism is load-bearing here: a run is a pure function of its config.
All data-order and flip randomness comes from one numpy generator, all
dropout randomness from one torch generator, and checkpoints carry both
states plus the in-flight epoch's shuffled order, so a resumed run
replays the remaining steps bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import GesturePair, load_training_example, stack_examples
from .losses import (
    LOSS_CSV_HEADER,
    LossBreakdown,
    LossWeights,
    adversarial_d_loss,
    adversarial_g_loss,
    color_loss,
    reconstruction_l1,
    total_generator_loss,
)
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    UNetGenerator,
    build_feature_extractor,
)

CHECKPOINT_FILES = ("generator.pt", "disc_xy.pt", "disc_yx.pt",
                    "opt_g.pt", "opt_d.pt", "rng.pt", "manifest.json")


class TrainingError(RuntimeError):
    """Configuration or checkpoint problem surfaced by the engine."""


class TrainingDiverged(TrainingError):
    """A loss went non-finite; carries the offending breakdown."""

    def __init__(self, message: str, breakdown: LossBreakdown):
        super().__init__(message)
        self.breakdown = breakdown


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; two configs equal means two runs equal."""

    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    image_size: int = 64
    base_width: int = 64
    checkpoint_every: int = 0
    lambda3_start: float = 0.1
    lambda3_end: float = 0.5
    flip_probability: float = 0.5
    conditioning_radius: float = 4.0
    conditioning_width: float = 4.0
    extractor_kind: str = "seeded-random"
    extractor_seed: int = 0
    extractor_weights: str | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")


def lambda3_at(epoch: int, config: TrainConfig) -> float:
    """Identity-term weight for an epoch: linear from lambda3_start at
    epoch 0 to lambda3_end at the last epoch. A single-epoch run never
    leaves the start value."""
    if not 0 <= epoch < config.epochs:
        raise TrainingError(
            f"epoch {epoch} outside [0, {config.epochs})"
        )
    if config.epochs == 1:
        return config.lambda3_start
    t = epoch / (config.epochs - 1)
    return config.lambda3_start + (config.lambda3_end - config.lambda3_start) * t


@dataclass
class TrainState:
    config: TrainConfig
    generator: UNetGenerator
    disc_xy: PatchDiscriminator
    disc_yx: PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    extractor: torch.nn.Module
    data_rng: np.random.Generator
    dropout_rng: torch.Generator
    epoch: int = 0
    step_in_epoch: int = 0
    global_step: int = 0
    epoch_order: list[int] = field(default_factory=list)
    epoch_flips: list[bool] = field(default_factory=list)
    epoch_loss_sum: float = 0.0
    epoch_loss_count: int = 0


def _build_networks(config: TrainConfig,
                    ) -> tuple[UNetGenerator, PatchDiscriminator, PatchDiscriminator]:
    gen_cfg = GeneratorConfig(image_size=config.image_size,
                              base_width=config.base_width)
    disc_cfg = DiscriminatorConfig(in_channels=7)
    return (UNetGenerator(gen_cfg),
            PatchDiscriminator(disc_cfg), PatchDiscriminator(disc_cfg))


def init_state(config: TrainConfig) -> TrainState:
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    generator, disc_xy, disc_yx = _build_networks(config)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate,
                             betas=(config.adam_beta1, config.adam_beta2))
    opt_d = torch.optim.Adam(
        list(disc_xy.parameters()) + list(disc_yx.parameters()),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2))
    extractor = build_feature_extractor(config.extractor_kind,
                                        seed=config.extractor_seed,
                                        weights_path=config.extractor_weights)
    dropout_rng = torch.Generator()
    dropout_rng.manual_seed(config.seed)
    return TrainState(
        config=config, generator=generator, disc_xy=disc_xy, disc_yx=disc_yx,
        opt_g=opt_g, opt_d=opt_d, extractor=extractor,
        data_rng=np.random.default_rng(config.seed), dropout_rng=dropout_rng)


def _batch_tensors(pairs: list[GesturePair], indices: list[int],
                   flips_by_pair: list[bool], config: TrainConfig,
                   ) -> tuple[torch.Tensor, ...]:
    examples = [
        load_training_example(
            pairs[i], image_size=config.image_size,
            variant=config.weights.conditioning_variant,
            flip=flips_by_pair[i],
            radius=config.conditioning_radius, width=config.conditioning_width)
        for i in indices
    ]
    return tuple(torch.from_numpy(a) for a in stack_examples(examples))


def generator_forwards(state: TrainState, x: torch.Tensor, y: torch.Tensor,
                       map_x: torch.Tensor, map_y: torch.Tensor,
                       ) -> tuple[torch.Tensor, torch.Tensor]:
    fake_y = state.generator(x, map_y, True, state.dropout_rng)
    fake_x = state.generator(y, map_x, True, state.dropout_rng)
    return fake_y, fake_x


def discriminator_step(state: TrainState, x, y, map_x, map_y,
                       fake_y, fake_x) -> float:
    """One Adam step on both discriminators; fakes enter detached so no
    gradient can reach the generator."""
    cond_xy = torch.cat([x, map_y], dim=1)
    cond_yx = torch.cat([y, map_x], dim=1)
    loss = adversarial_d_loss(
        state.disc_xy(cond_xy, y), state.disc_xy(cond_xy, fake_y.detach()),
        state.disc_yx(cond_yx, x), state.disc_yx(cond_yx, fake_x.detach()))
    state.opt_d.zero_grad()
    loss.backward()
    state.opt_d.step()
    return loss.item()


def generator_step(state: TrainState, x, y, map_x, map_y, fake_y, fake_x,
                   weights: LossWeights, adv_d: float) -> LossBreakdown:
    """One Adam step on the generator over the full objective; the cycle
    term routes gradient through both nested generator calls."""
    cond_xy = torch.cat([x, map_y], dim=1)
    cond_yx = torch.cat([y, map_x], dim=1)
    adv_xy = adversarial_g_loss(state.disc_xy(cond_xy, fake_y))
    adv_yx = adversarial_g_loss(state.disc_yx(cond_yx, fake_x))
    adv_g = adv_xy + adv_yx

    color_xy = color_loss(fake_y, y, weights.color_norm)
    color_yx = color_loss(fake_x, x, weights.color_norm)
    color = color_xy + color_yx

    rec_x = state.generator(fake_y, map_x, True, state.dropout_rng)
    rec_y = state.generator(fake_x, map_y, True, state.dropout_rng)
    cycle_xy = reconstruction_l1(x, rec_x)
    cycle_yx = reconstruction_l1(y, rec_y)
    cycle = cycle_xy + cycle_yx

    ident_xy = reconstruction_l1(state.extractor(y), state.extractor(fake_y))
    ident_yx = reconstruction_l1(state.extractor(x), state.extractor(fake_x))
    identity = ident_xy + ident_yx

    total = total_generator_loss(adv_g, color, cycle, identity, weights)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()

    # Log in float64 so the recombination identity holds exactly on the
    # recorded values: each term is the sum of its directional items and
    # total is recomputed from the logged terms, not read off the graph.
    logged = {
        "adv_g_xy": adv_xy.item(), "adv_g_yx": adv_yx.item(),
        "color_xy": color_xy.item(), "color_yx": color_yx.item(),
        "cycle_xy": cycle_xy.item(), "cycle_yx": cycle_yx.item(),
        "identity_xy": ident_xy.item(), "identity_yx": ident_yx.item(),
    }
    adv_g_val = logged["adv_g_xy"] + logged["adv_g_yx"]
    color_val = logged["color_xy"] + logged["color_yx"]
    cycle_val = logged["cycle_xy"] + logged["cycle_yx"]
    ident_val = logged["identity_xy"] + logged["identity_yx"]
    return LossBreakdown(
        adv_g=adv_g_val, adv_d=adv_d, color=color_val,
        cycle=cycle_val, identity=ident_val,
        total=total_generator_loss(adv_g_val, color_val, cycle_val,
                                   ident_val, weights),
        **logged)


def train_step(state: TrainState,
               batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor],
               ) -> LossBreakdown:
    """Advance one optimization step on one batch: D side, then G side."""
    x, y, map_x, map_y = batch
    weights = dataclasses.replace(state.config.weights,
                                  lambda3=lambda3_at(state.epoch, state.config))
    fake_y, fake_x = generator_forwards(state, x, y, map_x, map_y)
    adv_d = discriminator_step(state, x, y, map_x, map_y, fake_y, fake_x)
    breakdown = generator_step(state, x, y, map_x, map_y, fake_y, fake_x,
                               weights, adv_d)
    values = dataclasses.asdict(breakdown)
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise TrainingDiverged(
            f"non-finite loss at step {state.global_step}: "
            + ", ".join(f"{k}={values[k]}" for k in bad), breakdown)
    return breakdown


# --- checkpointing ----------------------------------------------------------

def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    """Inverse of config_to_dict; omitted fields keep their defaults."""
    data = dict(data)
    if data.get("weights") is not None:
        data["weights"] = LossWeights(**data["weights"])
    else:
        data.pop("weights", None)
    return TrainConfig(**data)


def _atomic_bytes(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _torch_bytes(obj) -> bytes:
    import io

    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue()


def save_checkpoint(state: TrainState, directory: str) -> None:
    """Write the full run state. Files land atomically; saving, loading
    and saving again yields byte-identical files."""
    os.makedirs(directory, exist_ok=True)
    _atomic_bytes(os.path.join(directory, "generator.pt"),
                  _torch_bytes(state.generator.state_dict()))
    _atomic_bytes(os.path.join(directory, "disc_xy.pt"),
                  _torch_bytes(state.disc_xy.state_dict()))
    _atomic_bytes(os.path.join(directory, "disc_yx.pt"),
                  _torch_bytes(state.disc_yx.state_dict()))
    _atomic_bytes(os.path.join(directory, "opt_g.pt"),
                  _torch_bytes(state.opt_g.state_dict()))
    _atomic_bytes(os.path.join(directory, "opt_d.pt"),
                  _torch_bytes(state.opt_d.state_dict()))
    _atomic_bytes(os.path.join(directory, "rng.pt"), _torch_bytes({
        "numpy": state.data_rng.bit_generator.state,
        "torch_dropout": state.dropout_rng.get_state(),
    }))
    manifest = {
        "config": config_to_dict(state.config),
        "epoch": state.epoch,
        "step_in_epoch": state.step_in_epoch,
        "global_step": state.global_step,
        "epoch_order": state.epoch_order,
        "epoch_flips": state.epoch_flips,
        "epoch_loss_sum": state.epoch_loss_sum,
        "epoch_loss_count": state.epoch_loss_count,
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    _atomic_bytes(os.path.join(directory, "manifest.json"),
                  payload.encode("utf-8") + b"\n")


def load_checkpoint(directory: str) -> TrainState:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise TrainingError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = config_from_dict(manifest["config"])
    state = init_state(config)

    def _load(name: str):
        return torch.load(os.path.join(directory, name), weights_only=False)

    state.generator.load_state_dict(_load("generator.pt"))
    state.disc_xy.load_state_dict(_load("disc_xy.pt"))
    state.disc_yx.load_state_dict(_load("disc_yx.pt"))
    state.opt_g.load_state_dict(_load("opt_g.pt"))
    state.opt_d.load_state_dict(_load("opt_d.pt"))
    rng = _load("rng.pt")
    state.data_rng.bit_generator.state = rng["numpy"]
    state.dropout_rng.set_state(rng["torch_dropout"])
    state.epoch = manifest["epoch"]
    state.step_in_epoch = manifest["step_in_epoch"]
    state.global_step = manifest["global_step"]
    state.epoch_order = [int(i) for i in manifest["epoch_order"]]
    state.epoch_flips = [bool(b) for b in manifest["epoch_flips"]]
    state.epoch_loss_sum = manifest["epoch_loss_sum"]
    state.epoch_loss_count = manifest["epoch_loss_count"]
    return state


# --- the loop ---------------------------------------------------------------

def _trim_csv(path: str, upto_step: int) -> None:
    """Drop rows beyond a resume point so the appended run lines up."""
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    kept = [lines[0]] if lines else []
    for line in lines[1:]:
        try:
            step = int(line.split(",", 1)[0])
        except ValueError:
            continue
        if step <= upto_step:
            kept.append(line)
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(kept)


def fit(config: TrainConfig, pairs: list[GesturePair], out_dir: str,
        resume_from: str | None = None,
        ) -> tuple[TrainState, list[LossBreakdown]]:
    """Run the full schedule over the pair list; returns the final state
    and this invocation's step-by-step loss history.

    Writes ``losses.csv`` and, when checkpoint_every > 0, periodic
    checkpoints under ``out_dir/checkpoints/step<k>``; the final state
    always lands in ``out_dir/checkpoints/final``.
    """
    if not pairs:
        raise TrainingError("corpus yields no training pairs")
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if config_to_dict(state.config) != config_to_dict(config):
            raise TrainingError(
                "resume config differs from the checkpoint's; "
                "edit the checkpoint manifest only if you mean it")
    else:
        state = init_state(config)
    steps_per_epoch = len(pairs) // config.batch_size
    if steps_per_epoch < 1:
        raise TrainingError(
            f"batch_size {config.batch_size} exceeds the {len(pairs)} "
            "available pairs; no full batch can form")

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "losses.csv")
    if resume_from is not None:
        _trim_csv(csv_path, state.global_step)
    if not os.path.exists(csv_path):
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(LOSS_CSV_HEADER + "\n")

    history: list[LossBreakdown] = []
    ckpt_root = os.path.join(out_dir, "checkpoints")
    with open(csv_path, "a", encoding="utf-8") as csv:
        for epoch in range(state.epoch, config.epochs):
            state.epoch = epoch
            if state.step_in_epoch == 0:
                order = state.data_rng.permutation(len(pairs))
                flip_draw = state.data_rng.random(len(pairs))
                state.epoch_order = [int(i) for i in order]
                state.epoch_flips = [bool(d < config.flip_probability)
                                     for d in flip_draw]
                state.epoch_loss_sum = 0.0
                state.epoch_loss_count = 0
            lam3 = lambda3_at(epoch, config)
            for step in range(state.step_in_epoch, steps_per_epoch):
                lo = step * config.batch_size
                indices = state.epoch_order[lo:lo + config.batch_size]
                batch = _batch_tensors(pairs, indices, state.epoch_flips,
                                       config)
                try:
                    breakdown = train_step(state, batch)
                except TrainingDiverged:
                    save_checkpoint(state, os.path.join(out_dir, "diverged"))
                    raise
                state.global_step += 1
                state.step_in_epoch = step + 1
                state.epoch_loss_sum += breakdown.total
                state.epoch_loss_count += 1
                history.append(breakdown)
                csv.write(breakdown.csv_row(state.global_step, lam3) + "\n")
                csv.flush()
                if (config.checkpoint_every > 0
                        and state.global_step % config.checkpoint_every == 0):
                    save_checkpoint(
                        state, os.path.join(ckpt_root, f"step{state.global_step}"))
            mean_total = (state.epoch_loss_sum / state.epoch_loss_count
                          if state.epoch_loss_count else float("nan"))
            print(f"progress epoch={epoch} mean_total={mean_total:.6f} "
                  f"lambda3={lam3:.4f}")
            state.step_in_epoch = 0
            state.epoch = epoch + 1
    save_checkpoint(state, os.path.join(ckpt_root, "final"))
    return state, history


def translate(state: TrainState, image: torch.Tensor, target_map: torch.Tensor,
              dropout_seed: int | None = None,
              dropout_active: bool = True) -> torch.Tensor:
    """One conditioned generator forward for inference.

    ``image`` is (3, H, W) or (N, 3, H, W) in [-1, 1]; ``target_map``
    matches with one channel. Dropout stays on by default (it is the
    model's only noise source); the seed pins the mask draw.
    """
    squeeze = image.dim() == 3
    if squeeze:
        image = image[None]
        target_map = target_map[None]
    size = state.config.image_size
    if image.shape[-2:] != (size, size):
        raise ValueError(
            f"image is {tuple(image.shape[-2:])} but the checkpoint was "
            f"trained at {size}x{size}")
    rng = None
    if dropout_active:
        rng = torch.Generator()
        rng.manual_seed(0 if dropout_seed is None else dropout_seed)
    with torch.no_grad():
        out = state.generator(image, target_map, dropout_active, rng)
    return out[0] if squeeze else out
