"""Compact CNN image encoder, image-to-token projection and image augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Tensor, ops
from .params import ParamStore


class VisionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VisionConfig:
    image_size: int = 16
    widths: tuple[int, ...] = (16, 32, 64, 64)
    strides: tuple[int, ...] = (1, 2, 1, 2)

    def __post_init__(self):
        if len(self.widths) != len(self.strides):
            raise VisionConfigError("one stride per conv stage")
        if self.image_size % self.downsample:
            raise VisionConfigError(
                f"image size {self.image_size} not divisible by downsample factor {self.downsample}")

    @property
    def downsample(self) -> int:
        return int(np.prod(self.strides))

    @property
    def grid(self) -> int:
        return self.image_size // self.downsample

    @property
    def out_channels(self) -> int:
        return self.widths[-1]


def init_vision(store: ParamStore, cfg: VisionConfig, d_model: int) -> None:
    c_in = 3
    for i, c_out in enumerate(cfg.widths):
        p = f"vision.conv{i}"
        store.weight(f"{p}.W", (9 * c_in, c_out))
        store.zeros(f"{p}.b", (c_out,))
        store.ones(f"{p}.ln.g", (c_out,))
        store.zeros(f"{p}.ln.b", (c_out,))
        c_in = c_out
    store.weight("vision.proj.W", (cfg.out_channels, d_model))
    store.zeros("vision.proj.b", (d_model,))
    store.weight("vision.pos", (cfg.grid * cfg.grid, d_model))


def encode_image(params, cfg: VisionConfig, images) -> Tensor:
    """Conv(3x3)-LayerNorm-GELU stages; returns ``[B, H', W', C]``."""
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim != 4 or x.shape[1:] != (cfg.image_size, cfg.image_size, 3):
        raise VisionConfigError(f"expected [B, {cfg.image_size}, {cfg.image_size}, 3] images, got {x.shape}")
    for i, stride in enumerate(cfg.strides):
        p = f"vision.conv{i}"
        cols = ops.im2col(x, k=3, stride=stride, pad=1)
        x = ops.add(ops.matmul(cols, params[f"{p}.W"]), params[f"{p}.b"])
        x = ops.gelu(ops.layer_norm(x, params[f"{p}.ln.g"], params[f"{p}.ln.b"]))
    return x


def project_to_sequence(params, I: Tensor, add_position: bool = True) -> Tensor:
    """Flatten the spatial grid row-major and map each cell C -> D (plus position)."""
    B, h, w, C = I.shape
    seq = ops.reshape(I, (B, h * w, C))
    out = ops.add(ops.matmul(seq, params["vision.proj.W"]), params["vision.proj.b"])
    if add_position:
        out = ops.add(out, params["vision.pos"])
    return out


def pool_image(I: Tensor) -> Tensor:
    """Global average over the spatial grid: ``[B, C]``."""
    return ops.mean(I, axis=(1, 2))


def augment_image(images: np.ndarray, rng: np.random.Generator, p_flip: float = 0.5,
                  noise_std: float = 0.05, brightness: tuple[float, float] = (0.8, 1.2),
                  p_noise: float = 1.0, p_brightness: float = 1.0) -> np.ndarray:
    """Random horizontal flip, brightness scaling and Gaussian noise, clipped to [0, 1]."""
    B = images.shape[0]
    out = images.copy()
    flip = rng.random(B) < p_flip
    out[flip] = out[flip, :, ::-1, :]
    do_bright = rng.random(B) < p_brightness
    factor = rng.uniform(brightness[0], brightness[1], size=B)
    out[do_bright] *= factor[do_bright, None, None, None].astype(out.dtype)
    do_noise = rng.random(B) < p_noise
    noise = rng.standard_normal(out.shape).astype(out.dtype) * np.float32(noise_std)
    out[do_noise] += noise[do_noise]
    return np.clip(out, 0.0, 1.0)
