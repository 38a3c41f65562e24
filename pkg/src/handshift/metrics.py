"""Evaluation suite: MSE, PSNR, Inception Score, FID, and a Fréchet
distance over embedding curves (FRD).

The FRD treats each image's feature vector as a 1-D polyline (component
index on one axis, value on the other) and reports the mean exact
discrete Fréchet distance between each generated image's curve and its
ground-truth counterpart's.

Distribution metrics run on pluggable embedders. The default is a frozen
seeded-random projection, which makes every number here reproducible from
seeds alone; drop in pretrained classifier weights to get magnitudes
comparable with published scores. Everything is numpy, float64, and pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0

_POOL_GRID = 16

EMBEDDER_KINDS = ("seeded-random", "pretrained-classifier")


class MetricError(ValueError):
    """Bad shapes, infeasible parameters, or a missing embedder asset."""


def _as_float(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        raise MetricError(f"{name} is empty")
    return arr


def mse(a, b) -> float:
    """Mean squared difference, intended for the 8-bit [0, 255] domain."""
    x = _as_float(a, "a")
    y = _as_float(b, "b")
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr_from_mse(value: float) -> float:
    if value == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(255.0 ** 2 / value), PSNR_CAP_DB))


def psnr(a, b) -> float:
    """10·log10(255² / MSE) in dB, capped at 100 (exact matches would be
    infinite; the cap keeps aggregation finite)."""
    return psnr_from_mse(mse(a, b))


def inception_score(probabilities, splits: int = 1) -> tuple[float, float]:
    """exp(mean KL(p(y|x) ‖ marginal)) per split; returns the mean and
    population stddev across splits."""
    p = _as_float(probabilities, "probabilities")
    if p.ndim != 2:
        raise MetricError(f"probabilities must be (N, C), got shape {p.shape}")
    if splits < 1:
        raise MetricError(f"splits must be >= 1, got {splits}")
    if splits > p.shape[0]:
        raise MetricError(
            f"cannot make {splits} splits from {p.shape[0]} samples")
    if np.any(p < 0):
        raise MetricError("probabilities must be nonnegative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise MetricError(
            f"row {worst} sums to {sums[worst]!r}, not 1 within 1e-6")
    scores = []
    for chunk in np.array_split(p, splits):
        marginal = chunk.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl_terms = np.where(chunk > 0,
                                chunk * (np.log(chunk) - np.log(marginal)),
                                0.0)
        scores.append(float(np.exp(kl_terms.sum(axis=1).mean())))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass(frozen=True)
class GaussianStats:
    """Mean and covariance of an embedded image set."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise MetricError(
                f"need mu (D,) and sigma (D, D); got {mu.shape} and {sigma.shape}")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-9:
            raise MetricError("sigma is not symmetric within 1e-9")
        if np.min(np.linalg.eigvalsh(sigma)) < -1e-9:
            raise MetricError("sigma has an eigenvalue below -1e-9")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and (N-1)-normalized sample covariance, symmetrized."""
    x = _as_float(features, "features")
    if x.ndim != 2:
        raise MetricError(f"features must be (N, D), got shape {x.shape}")
    if x.shape[0] < 2:
        raise MetricError("covariance needs at least 2 vectors")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (x.shape[0] - 1)
    return GaussianStats(mu=mu, sigma=(sigma + sigma.T) / 2.0)


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(stats_x: GaussianStats, stats_y: GaussianStats) -> float:
    """‖μx − μy‖² + Tr(Σx + Σy − 2·(Σx Σy)^½), clamped at 0.

    The product's square root is taken as (A Σy A)^½ with A = Σx^½, which
    is symmetric PSD whenever both inputs are; eigenvalues that dip
    negative from rounding are clipped before the root.
    """
    if stats_x.mu.shape != stats_y.mu.shape:
        raise MetricError(
            f"dimension mismatch: {stats_x.mu.shape} vs {stats_y.mu.shape}")
    delta = stats_x.mu - stats_y.mu
    a = _sqrtm_psd(stats_x.sigma)
    inner = a @ stats_y.sigma @ a
    inner = (inner + inner.T) / 2.0
    trace_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    value = (delta @ delta + np.trace(stats_x.sigma)
             + np.trace(stats_y.sigma) - 2.0 * trace_sqrt)
    return float(max(value, 0.0))


def discrete_frechet(a, b, d=None) -> float:
    """Exact discrete Fréchet distance between two sequences.

    The standard quadratic dynamic program over monotone couplings:
    DP[i][j] = max(d(a_i, b_j), min(DP[i-1][j], DP[i][j-1], DP[i-1][j-1])).
    ``d`` defaults to absolute difference for scalar sequences.
    """
    a_seq = np.asarray(a)
    b_seq = np.asarray(b)
    if a_seq.ndim != 1 or b_seq.ndim != 1:
        raise MetricError("sequences must be 1-D")
    if a_seq.size == 0 or b_seq.size == 0:
        raise MetricError("sequences must be nonempty")
    if d is None:
        dist_rows = np.abs(
            a_seq.astype(np.float64)[:, None]
            - b_seq.astype(np.float64)[None, :]).tolist()
    else:
        dist_rows = [[float(d(x, y)) for y in b_seq] for x in a_seq]
    m = len(dist_rows[0])
    # Row 0 is a pure running max; later rows keep the whole previous row
    # plus a left-to-right scan, so memory stays O(m).
    prev = dist_rows[0]
    for j in range(1, m):
        if prev[j] < prev[j - 1]:
            prev[j] = prev[j - 1]
    for i in range(1, len(dist_rows)):
        row = dist_rows[i]
        cur = [0.0] * m
        cur[0] = row[0] if row[0] > prev[0] else prev[0]
        for j in range(1, m):
            best = prev[j]
            if prev[j - 1] < best:
                best = prev[j - 1]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = row[j] if row[j] > best else best
        prev = cur
    return float(prev[-1])


# --- embedders --------------------------------------------------------------

@dataclass(frozen=True)
class EmbedderSpec:
    """Which embedding network backs IS/FID/FRD and its output sizes."""

    kind: str = "seeded-random"
    feature_dim: int = 1000
    num_classes: int = 1000
    seed: int = 0
    weights_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in EMBEDDER_KINDS:
            raise MetricError(
                f"embedder kind must be one of {EMBEDDER_KINDS}, got {self.kind!r}")
        if self.feature_dim < 1 or self.num_classes < 1:
            raise MetricError("embedder output sizes must be >= 1")


class SeededRandomEmbedder:
    """Frozen random projections of area-pooled pixels.

    Deterministic in the seed, so distribution metrics built on it are
    exactly reproducible without any downloaded weights. Expects float
    images shaped (N, 3, H, W) in [-1, 1] with H, W >= 16.
    """

    def __init__(self, spec: EmbedderSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        flat_dim = 3 * _POOL_GRID * _POOL_GRID
        self._w_feat = rng.standard_normal((spec.feature_dim, flat_dim))
        self._w_feat /= np.sqrt(flat_dim)
        self._w_cls = rng.standard_normal((spec.num_classes, flat_dim))
        self._w_cls /= np.sqrt(flat_dim)

    def _pooled(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 3:
            raise MetricError(
                f"images must be (N, 3, H, W), got shape {x.shape}")
        if x.shape[2] < _POOL_GRID or x.shape[3] < _POOL_GRID:
            raise MetricError(
                f"images must be at least {_POOL_GRID}x{_POOL_GRID}")
        pooled = np.stack([c.mean(axis=3) for c in
                           np.array_split(x, _POOL_GRID, axis=3)], axis=3)
        pooled = np.stack([c.mean(axis=2) for c in
                           np.array_split(pooled, _POOL_GRID, axis=2)], axis=2)
        return pooled.reshape(x.shape[0], -1)

    def features(self, images) -> np.ndarray:
        return np.tanh(self._pooled(images) @ self._w_feat.T)

    def probabilities(self, images) -> np.ndarray:
        logits = self._pooled(images) @ self._w_cls.T
        logits -= logits.max(axis=1, keepdims=True)
        expd = np.exp(logits)
        return expd / expd.sum(axis=1, keepdims=True)


def build_embedder(spec: EmbedderSpec):
    if spec.kind == "seeded-random":
        return SeededRandomEmbedder(spec)
    if spec.weights_path is None:
        raise MetricError(
            "the pretrained-classifier embedder needs weights_path pointing "
            "at a local state dict; no weights ship with this package. Use "
            "kind='seeded-random' for a self-contained evaluation.")
    return _PretrainedClassifierEmbedder(spec)


class _PretrainedClassifierEmbedder:
    """Classifier-backed embedder: logits give class probabilities, the
    penultimate activations give features. Weights are a local file."""

    def __init__(self, spec: EmbedderSpec):
        import torch

        try:
            from torchvision.models import resnet50
        except ImportError as exc:
            raise MetricError(
                "pretrained-classifier embedding needs torchvision; install "
                "it or use kind='seeded-random'") from exc
        self.spec = spec
        self._torch = torch
        model = resnet50(weights=None)
        state = torch.load(spec.weights_path, map_location="cpu",
                           weights_only=True)
        model.load_state_dict(state)
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self._model = model

    def _forward(self, images):
        torch = self._torch
        x = torch.as_tensor(np.asarray(images, dtype=np.float32))
        with torch.no_grad():
            logits = self._model(x)
        return logits

    def features(self, images) -> np.ndarray:
        logits = self._forward(images).numpy().astype(np.float64)
        return logits[:, :self.spec.feature_dim]

    def probabilities(self, images) -> np.ndarray:
        logits = self._forward(images)
        probs = self._torch.softmax(logits, dim=1).numpy().astype(np.float64)
        return probs[:, :self.spec.num_classes]


def frd(real_images, generated_images, embedder) -> float:
    """Mean discrete Fréchet distance between paired feature curves;
    image i of one list corresponds to image i of the other."""
    real = np.asarray(real_images)
    generated = np.asarray(generated_images)
    if len(real) != len(generated):
        raise MetricError(
            f"count mismatch: {len(real)} real vs {len(generated)} generated")
    if len(real) == 0:
        raise MetricError("need at least one image pair")
    feats_real = embedder.features(real)
    feats_gen = embedder.features(generated)
    return float(np.mean([
        discrete_frechet(feats_gen[i], feats_real[i])
        for i in range(len(real))
    ]))


# --- reporting --------------------------------------------------------------

@dataclass(frozen=True)
class PairMetrics:
    identifier: str
    mse: float
    psnr: float
    frd: float


@dataclass(frozen=True)
class MetricReport:
    """Per-pair rows plus set-level aggregates for one evaluation run."""

    rows: tuple[PairMetrics, ...]
    mse: float
    psnr: float
    is_mean: float
    is_std: float
    fid: float
    frd: float
    n: int

    def to_csv(self) -> str:
        lines = ["identifier,mse,psnr,frd"]
        for row in self.rows:
            lines.append(f"{row.identifier},{row.mse!r},{row.psnr!r},{row.frd!r}")
        lines.append(f"aggregate,mse,{self.mse!r}")
        lines.append(f"aggregate,psnr,{self.psnr!r}")
        lines.append(f"aggregate,is_mean,{self.is_mean!r}")
        lines.append(f"aggregate,is_std,{self.is_std!r}")
        lines.append(f"aggregate,fid,{self.fid!r}")
        lines.append(f"aggregate,frd,{self.frd!r}")
        lines.append(f"aggregate,n,{self.n}")
        return "\n".join(lines) + "\n"


def _to_export_domain(images: np.ndarray) -> np.ndarray:
    """[-1, 1] float images -> the [0, 255] values an 8-bit export holds."""
    return np.rint(np.clip((images + 1.0) * 127.5, 0.0, 255.0))


def compute_report(identifiers, real_images, generated_images, embedder,
                   splits: int = 1) -> MetricReport:
    """Full evaluation of paired real/generated image sets in [-1, 1].

    Per-pair MSE/PSNR run in the 8-bit export domain. FID needs at least
    two pairs for covariances and reports NaN below that.
    """
    real = np.asarray(real_images, dtype=np.float64)
    generated = np.asarray(generated_images, dtype=np.float64)
    ids = list(identifiers)
    if not (len(ids) == len(real) == len(generated)):
        raise MetricError(
            f"lengths disagree: {len(ids)} identifiers, {len(real)} real, "
            f"{len(generated)} generated")
    if not ids:
        raise MetricError("nothing to evaluate")

    real8 = _to_export_domain(real)
    gen8 = _to_export_domain(generated)
    feats_real = embedder.features(real)
    feats_gen = embedder.features(generated)

    rows = []
    for i, identifier in enumerate(ids):
        pair_mse = mse(gen8[i], real8[i])
        rows.append(PairMetrics(
            identifier=identifier,
            mse=pair_mse,
            psnr=psnr_from_mse(pair_mse),
            frd=discrete_frechet(feats_gen[i], feats_real[i])))

    is_mean, is_std = inception_score(embedder.probabilities(generated),
                                      splits=splits)
    if len(ids) >= 2:
        fid_value = fid(gaussian_stats(feats_real), gaussian_stats(feats_gen))
    else:
        fid_value = float("nan")
    return MetricReport(
        rows=tuple(rows),
        mse=float(np.mean([r.mse for r in rows])),
        psnr=float(np.mean([r.psnr for r in rows])),
        is_mean=is_mean, is_std=is_std, fid=fid_value,
        frd=float(np.mean([r.frd for r in rows])),
        n=len(ids))
