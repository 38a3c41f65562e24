"""Command line front end: train, translate, evaluate, rasterize, and
synthetic-corpus generation driven by one YAML config.

Every run is reproducible from the config file alone; command-line flags
are overrides that get baked into the resolved config copy written next
to the outputs. Exit codes: 0 success, 1 user error (bad paths, bad
config, infeasible requests), 2 internal error.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field

import click
import numpy as np
import torch
import yaml
from PIL import Image

from .annotations import AnnotationError, load_annotation_file, scale_pose
from .dataset import (
    CorpusError,
    enumerate_pairs,
    load_corpus,
    load_image,
    load_training_example,
    make_synthetic_corpus,
    save_split,
    split_indices,
    split_pairs,
    SplitSpec,
)
from .metrics import (
    EmbedderSpec,
    MetricError,
    build_embedder,
    compute_report,
)
from .rasterize import map_to_uint8, rasterize
from .training import (
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    config_from_dict,
    config_to_dict,
    fit,
    load_checkpoint,
    translate,
)


@dataclass(frozen=True)
class AppConfig:
    """One file's worth of everything a command needs."""

    train: TrainConfig = field(default_factory=TrainConfig)
    manifest: str | None = None
    annotations: str | None = None
    out_dir: str = "run"
    split: SplitSpec | None = None
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    is_splits: int = 1


def app_config_to_dict(config: AppConfig) -> dict:
    data = dataclasses.asdict(config)
    data["train"] = config_to_dict(config.train)
    return data


def app_config_from_dict(data: dict) -> AppConfig:
    data = dict(data)
    if "train" in data and data["train"] is not None:
        data["train"] = config_from_dict(data["train"])
    if data.get("split") is not None:
        data["split"] = SplitSpec(**data["split"])
    if data.get("embedder") is not None:
        data["embedder"] = EmbedderSpec(**data["embedder"])
    return AppConfig(**data)


def load_app_config(path: str | None) -> AppConfig:
    if path is None:
        return AppConfig()
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must hold a mapping at top level")
    return app_config_from_dict(data)


def _resolve(ctx: click.Context) -> AppConfig:
    opts = ctx.obj
    config = load_app_config(opts.get("config_path"))
    if opts.get("seed") is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, seed=opts["seed"]))
    if opts.get("out_dir") is not None:
        config = dataclasses.replace(config, out_dir=opts["out_dir"])
    return config


_USER_ERRORS = (AnnotationError, CorpusError, MetricError, TrainingError,
                FileNotFoundError, ValueError)


def _guarded(fn):
    """Map exceptions to the exit-code contract."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrainingDiverged as exc:
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(2)
        except _USER_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except Exception as exc:  # noqa: BLE001 - the contract wants exit 2
            click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _atomic_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_image(path: str, array: np.ndarray) -> None:
    tmp = path + ".tmp.png"
    Image.fromarray(array).save(tmp, format="PNG")
    os.replace(tmp, path)


def _require_corpus(config: AppConfig):
    if config.manifest is None or config.annotations is None:
        raise ValueError(
            "this command needs corpus paths; set 'manifest' and "
            "'annotations' in the config file")
    for path in (config.manifest, config.annotations):
        if not os.path.exists(path):
            raise FileNotFoundError(f"corpus file not found: {path}")
    return load_corpus(config.manifest, config.annotations)


def _image_to_uint8(image: torch.Tensor) -> np.ndarray:
    arr = image.detach().cpu().numpy()
    arr = np.clip((arr.transpose(1, 2, 0) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


@click.group()
@click.option("--config", "config_path", default=None,
              help="YAML config file; flags override its values.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--out", "out_dir", default=None,
              help="Override the output directory.")
@click.pass_context
def app(ctx, config_path, seed, out_dir):
    """Skeleton-conditioned hand gesture translation toolkit."""
    ctx.obj = {"config_path": config_path, "seed": seed, "out_dir": out_dir}


@app.command("train")
@click.option("--resume", "resume_from", default=None,
              help="Checkpoint directory to continue from.")
@click.pass_context
@_guarded
def cmd_train(ctx, resume_from):
    """Fit the translation model on the configured corpus."""
    config = _resolve(ctx)
    records = _require_corpus(config)
    pairs = enumerate_pairs(records)
    os.makedirs(config.out_dir, exist_ok=True)
    if config.split is not None:
        train_idx, test_idx = split_indices(len(pairs), config.split)
        train_pairs = [pairs[i] for i in train_idx]
        save_split(os.path.join(config.out_dir, "split.json"),
                   config.split, train_idx, test_idx)
    else:
        train_pairs = pairs
    _atomic_text(os.path.join(config.out_dir, "config.yaml"),
                 yaml.safe_dump(app_config_to_dict(config), sort_keys=True))
    state, history = fit(config.train, train_pairs, config.out_dir,
                         resume_from=resume_from)
    click.echo(f"trained {len(history)} steps; final checkpoint in "
               f"{os.path.join(config.out_dir, 'checkpoints', 'final')}")


def _test_pairs(config: AppConfig, pairs):
    if config.split is None:
        return pairs
    _, test = split_pairs(pairs, config.split)
    if not test:
        raise ValueError("the configured split has no test pairs")
    return test


@app.command("translate")
@click.option("--checkpoint", "checkpoint_dir", default=None,
              help="Checkpoint directory (default: <out>/checkpoints/final).")
@click.option("--source", "source_id", default=None,
              help="Corpus identifier of the image to translate.")
@click.option("--target", "target_id", default=None,
              help="Corpus identifier supplying the target pose.")
@click.option("--random-target", is_flag=True,
              help="Draw the target from the test split under the run seed.")
@click.pass_context
@_guarded
def cmd_translate(ctx, checkpoint_dir, source_id, target_id, random_target):
    """Re-render one image under another record's pose."""
    config = _resolve(ctx)
    records = _require_corpus(config)
    by_id = {r.identifier: r for r in records}
    if source_id is None:
        raise ValueError("--source is required")
    if source_id not in by_id:
        raise ValueError(f"no corpus record named {source_id!r}")
    source = by_id[source_id]

    if random_target == (target_id is not None):
        raise ValueError("pass exactly one of --target or --random-target")
    if random_target:
        pairs = enumerate_pairs(records)
        candidates = [p for p in _test_pairs(config, pairs)
                      if p.source.identifier == source_id]
        if not candidates:
            candidates = [p for p in pairs if p.source.identifier == source_id]
        if not candidates:
            raise ValueError(f"no pair has source {source_id!r}")
        pick = int(np.random.default_rng(config.train.seed)
                   .integers(len(candidates)))
        target = candidates[pick].target
    else:
        if target_id not in by_id:
            raise ValueError(f"no corpus record named {target_id!r}")
        target = by_id[target_id]
    click.echo(f"target={target.identifier}")

    state = load_checkpoint(_checkpoint_path(config, checkpoint_dir))
    size = state.config.image_size
    image = torch.from_numpy(load_image(source.image_path, size))
    pose = scale_pose(target.pose, size, size)
    cond = rasterize(pose, config.train.weights.conditioning_variant,
                     radius=config.train.conditioning_radius,
                     width=config.train.conditioning_width)
    cond_t = torch.from_numpy(cond.pixels[None])
    out = translate(state, image, cond_t, dropout_seed=config.train.seed)

    os.makedirs(config.out_dir, exist_ok=True)
    stem = (_safe_name(source.identifier) + "_to_"
            + _safe_name(target.identifier))
    gen8 = _image_to_uint8(out)
    map8 = np.repeat(map_to_uint8(cond)[:, :, None], 3, axis=2)
    _atomic_image(os.path.join(config.out_dir, stem + ".png"), gen8)
    _atomic_image(os.path.join(config.out_dir, stem + "_pair.png"),
                  np.concatenate([gen8, map8], axis=1))
    click.echo(f"wrote {os.path.join(config.out_dir, stem + '.png')}")


def _checkpoint_path(config: AppConfig, override: str | None) -> str:
    if override is not None:
        return override
    return os.path.join(config.out_dir, "checkpoints", "final")


def _safe_name(identifier: str) -> str:
    stem = os.path.splitext(identifier)[0]
    return stem.replace(os.sep, "_").replace("/", "_")


@app.command("evaluate")
@click.option("--checkpoint", "checkpoint_dir", default=None,
              help="Checkpoint directory (default: <out>/checkpoints/final).")
@click.option("--oracle", is_flag=True,
              help="Emit ground-truth targets instead of model output "
                   "(metric harness self-check).")
@click.option("--embedder-kind", default=None,
              type=click.Choice(["seeded-random", "pretrained-classifier"]),
              help="Override the configured embedder kind.")
@click.pass_context
@_guarded
def cmd_evaluate(ctx, checkpoint_dir, oracle, embedder_kind):
    """Translate every test pair and report MSE/PSNR/IS/FID/FRD."""
    config = _resolve(ctx)
    records = _require_corpus(config)
    pairs = _test_pairs(config, enumerate_pairs(records))

    spec = config.embedder
    if embedder_kind is not None:
        spec = dataclasses.replace(spec, kind=embedder_kind)
    try:
        embedder = build_embedder(spec)
    except (MetricError, OSError) as exc:
        raise MetricError(f"{exc} (or pass --embedder-kind seeded-random)")

    state = None
    if not oracle:
        state = load_checkpoint(_checkpoint_path(config, checkpoint_dir))
    size = state.config.image_size if state else config.train.image_size

    identifiers, real, generated = [], [], []
    for pair in pairs:
        example = load_training_example(
            pair, image_size=size,
            variant=config.train.weights.conditioning_variant,
            radius=config.train.conditioning_radius,
            width=config.train.conditioning_width)
        identifiers.append(
            f"{pair.source.identifier}->{pair.target.identifier}")
        real.append(example.y)
        if oracle:
            generated.append(example.y.copy())
        else:
            out = translate(state, torch.from_numpy(example.x),
                            torch.from_numpy(example.map_y),
                            dropout_seed=config.train.seed)
            generated.append(out.numpy())

    report = compute_report(identifiers, np.stack(real), np.stack(generated),
                            embedder, splits=config.is_splits)
    os.makedirs(config.out_dir, exist_ok=True)
    report_path = os.path.join(config.out_dir, "report.csv")
    _atomic_text(report_path, report.to_csv())
    click.echo(f"evaluated {report.n} pairs -> {report_path}")
    click.echo(f"mse={report.mse!r} psnr={report.psnr!r} fid={report.fid!r} "
               f"frd={report.frd!r}")


@app.command("rasterize")
@click.option("--variant", default=None,
              help="Conditioning variant: K, Khat, S, or Shat.")
@click.pass_context
@_guarded
def cmd_rasterize(ctx, variant):
    """Render every annotated pose's conditioning map to a PNG."""
    config = _resolve(ctx)
    if config.annotations is None:
        raise ValueError("set 'annotations' in the config file")
    if not os.path.exists(config.annotations):
        raise FileNotFoundError(f"corpus file not found: {config.annotations}")
    chosen = variant or config.train.weights.conditioning_variant
    poses = load_annotation_file(config.annotations)
    os.makedirs(config.out_dir, exist_ok=True)
    count = 0
    for identifier, pose in poses.items():
        cond = rasterize(pose, chosen,
                         radius=config.train.conditioning_radius,
                         width=config.train.conditioning_width)
        name = f"{_safe_name(identifier)}_{chosen}.png"
        _atomic_image(os.path.join(config.out_dir, name), map_to_uint8(cond))
        count += 1
    click.echo(f"wrote {count} {chosen} maps to {config.out_dir}")


@app.command("make-synthetic-corpus")
@click.option("--subjects", default=1, show_default=True)
@click.option("--gestures", default=2, show_default=True)
@click.option("--repeats", default=2, show_default=True)
@click.option("--image-size", default=64, show_default=True)
@click.pass_context
@_guarded
def cmd_make_synthetic_corpus(ctx, subjects, gestures, repeats, image_size):
    """Generate a small fully annotated corpus for desk-scale runs."""
    config = _resolve(ctx)
    manifest, annotations = make_synthetic_corpus(
        config.out_dir, subjects=subjects, gestures=gestures,
        repeats=repeats, image_size=image_size, seed=config.train.seed)
    click.echo(f"manifest={manifest}")
    click.echo(f"annotations={annotations}")


def main() -> None:
    try:
        app.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)


if __name__ == "__main__":
    main()
