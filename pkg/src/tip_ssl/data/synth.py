"""Synthetic paired image/tabular data and minibatch iteration.

Each sample has a latent vector ``z``. The image is a tinted canvas with a
Gaussian blob: the background RGB tint follows ``sigmoid(z0..z2)``, the blob
position follows ``z3, z4`` and its amplitude ``z5``. Continuous columns are
noisy affine images of single latents, categorical columns bin latents into
equal-probability buckets, and the class label reads the signs of the first
latents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.stats import norm

from .schema import TabularSchema, build_schema


class BatchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 2000
    n_columns: int = 12
    n_categorical: int = 4
    cardinalities: tuple[int, ...] = (3, 3, 4, 2)
    image_size: int = 16
    latent_dim: int = 6
    noise: float = 0.1
    n_classes: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.n_samples, self.n_columns, self.image_size, self.latent_dim, self.n_classes) <= 0:
            raise ValueError("synthetic config counts must be positive")
        if len(self.cardinalities) != self.n_categorical:
            raise ValueError("need one cardinality per categorical column")
        if self.n_categorical >= self.n_columns:
            raise ValueError("at least one continuous column is required")
        if self.latent_dim < 6:
            raise ValueError("latent_dim must be >= 6 (image uses six latents)")
        if self.n_classes > 2 ** self.latent_dim:
            raise ValueError("not enough latents to select classes")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


@dataclass
class PairedDataset:
    images: np.ndarray  # [n, H, W, 3] float32 in [0, 1]
    values: np.ndarray  # [n, N] float32: ordinal codes then z-scored floats
    labels: np.ndarray  # [n] int64
    schema: TabularSchema
    latents: np.ndarray | None = None
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.values.shape[0]

    def subset(self, idx) -> "PairedDataset":
        idx = np.asarray(idx)
        return PairedDataset(
            self.images[idx], self.values[idx], self.labels[idx], self.schema,
            None if self.latents is None else self.latents[idx],
        )

    def split(self, name: str) -> "PairedDataset":
        return self.subset(self.splits[name])


def _label_from_latents(z: np.ndarray, n_classes: int) -> np.ndarray:
    bits = int(np.log2(n_classes)) if n_classes > 1 else 0
    if 2**bits == n_classes:
        lab = np.zeros(z.shape[0], dtype=np.int64)
        for b in range(bits):
            lab = lab * 2 + (z[:, b] > 0)
        return lab
    edges = norm.ppf(np.arange(1, n_classes) / n_classes)
    return np.searchsorted(edges, z[:, 0]).astype(np.int64)


def _continuous_latent(j: int, latent_dim: int) -> int:
    return j if j < latent_dim else 2 + (j - latent_dim) % (latent_dim - 2)


def _render_images(z: np.ndarray, size: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    sig = 1.0 / (1.0 + np.exp(-z))
    tint = 0.6 * sig[:, :3]  # [n, 3]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    half = size / 2.0
    cy = half + 0.25 * size * np.tanh(z[:, 3])
    cx = half + 0.25 * size * np.tanh(z[:, 4])
    radius = size / 6.0
    d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
    blob = 0.4 * sig[:, 5, None, None] * np.exp(-d2 / (2 * radius**2))
    img = tint[:, None, None, :] + blob[..., None]
    img = img + 0.05 * noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_raw(cfg: SynthConfig):
    """Raw columns, images, labels and latents before encoding."""
    rng = np.random.default_rng(cfg.seed)
    n, L = cfg.n_samples, cfg.latent_dim
    z = rng.standard_normal((n, L))
    labels = _label_from_latents(z, cfg.n_classes)
    images = _render_images(z, cfg.image_size, cfg.noise, rng)

    raw: dict[str, list | np.ndarray] = {}
    kinds: dict[str, str] = {}
    for k, card in enumerate(cfg.cardinalities):
        src = z[:, k % L] + cfg.noise * rng.standard_normal(n)
        edges = norm.ppf(np.arange(1, card) / card)
        codes = np.searchsorted(edges, src)
        name = f"cat{k}"
        raw[name] = [f"b{c}" for c in codes]
        kinds[name] = "categorical"
    for j in range(cfg.n_columns - cfg.n_categorical):
        src = z[:, _continuous_latent(j, L)]
        slope, offset = 1.0 + 0.5 * j, float(j)
        name = f"con{j}"
        raw[name] = slope * src + offset + cfg.noise * rng.standard_normal(n)
        kinds[name] = "continuous"
    return raw, kinds, images, labels, z, rng


def synth_generate(cfg: SynthConfig = SynthConfig()) -> PairedDataset:
    """Generate a paired dataset with a seeded 60/20/20 train/val/test split.

    Encoders and z-score statistics are fit on the training split only.
    """
    raw, kinds, images, labels, z, rng = synth_raw(cfg)
    n = cfg.n_samples
    perm = rng.permutation(n)
    n_train, n_val = int(round(0.6 * n)), int(round(0.2 * n))
    splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }
    schema, values = build_schema(raw, kinds, train_rows=splits["train"])
    return PairedDataset(images, values, labels, schema, z.astype(np.float32), splits)


def batch_iter(n: int, batch_size: int, *, shuffle: bool, rng: np.random.Generator | None = None,
               pretrain: bool = False) -> Iterator[np.ndarray]:
    """Yield index batches covering ``range(n)`` once.

    Pre-training drops the final short batch (fixed B for negative mining) and
    requires ``batch_size >= 2``; evaluation keeps it.
    """
    if batch_size < 1:
        raise BatchConfigError("batch size must be positive")
    if pretrain and batch_size < 2:
        raise BatchConfigError("pre-training needs batch size >= 2 for in-batch negatives")
    order = np.arange(n)
    if shuffle:
        if rng is None:
            raise BatchConfigError("shuffling needs an rng")
        order = rng.permutation(n)
    stop = (n // batch_size) * batch_size if pretrain else n
    for start in range(0, stop, batch_size):
        yield order[start : start + batch_size]

