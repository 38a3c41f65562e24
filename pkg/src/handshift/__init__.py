"""Skeleton-conditioned hand gesture image translation.

The package is organized around a small pipeline:

- :mod:`handshift.annotations` parses and transforms 21-keypoint hand poses.
- :mod:`handshift.rasterize` turns poses into conditioning maps (keypoint
  disks or skeleton lines, optionally confidence-weighted).
- :mod:`handshift.networks` holds the encoder-decoder generator, the patch
  discriminator and frozen feature extractors.
- :mod:`handshift.losses` implements the training objective, including the
  per-channel color loss and its gradient-isolation probes.
- :mod:`handshift.dataset` builds same-subject gesture pairs from a corpus
  and ships a synthetic corpus generator for desk-scale runs.
- :mod:`handshift.training` is the alternating GAN optimization loop with
  seeded determinism and resumable checkpoints.
- :mod:`handshift.metrics` is the evaluation suite (MSE, PSNR, inception
  score, Frechet distances between Gaussians and between feature curves).
- :mod:`handshift.cli` ties everything into a command line tool.
"""

__version__ = "0.1.0"
