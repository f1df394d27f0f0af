"""The voxel transform that turns organ tissue into tumor tissue under a mask.

Masked voxels become ``x - tanh(raw) * blur(x)`` clamped to [0, 1]; unmasked
voxels are returned bitwise-unchanged. The torch core is differentiable with
respect to the raw generator field and is the single implementation used both
for training and for the numpy-facing volume API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeMismatch
from .masks import TumorMask
from .volume import Volume, check_same_shape, require_normalized


@dataclass(frozen=True)
class GaussianFilterCfg:
    """Isotropic Gaussian texture filter: per-axis sigma and truncation radius."""

    sigma: float = 1.0
    radius: int = 3
    # blur the activated field instead of the image (non-default variant;
    # the default reads the transform literally and blurs the input image)
    blur_activation: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.radius < math.ceil(2 * self.sigma):
            raise ValueError(
                f"truncation radius {self.radius} too small for sigma {self.sigma}; "
                f"needs >= ceil(2*sigma) = {math.ceil(2 * self.sigma)}"
            )


@dataclass(frozen=True)
class GeneratorOutput:
    """Raw generator field and its tanh activation in (-1, 1)."""

    raw: np.ndarray
    activated: np.ndarray = field(init=False)

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float32)
        if not np.isfinite(raw).all():
            raise ValueError("generator raw field contains non-finite values")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "activated", np.tanh(raw))


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps on [-radius, radius]; sigma=0 is a delta."""
    if sigma == 0:
        k = np.zeros(2 * radius + 1)
        k[radius] = 1.0
        return k
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur_t(x: torch.Tensor, cfg: GaussianFilterCfg) -> torch.Tensor:
    """Separable Gaussian blur of a (..., D, H, W) tensor, reflective boundary."""
    if cfg.sigma == 0:
        return x
    shape = x.shape
    if any(s <= cfg.radius for s in shape[-3:]):
        raise ValueError(
            f"volume dims {tuple(shape[-3:])} must exceed the kernel radius {cfg.radius}"
        )
    kernel = torch.as_tensor(
        gaussian_kernel1d(cfg.sigma, cfg.radius), dtype=x.dtype, device=x.device
    )
    k = kernel.numel()
    out = x.reshape(1, 1, *shape[-3:]) if x.ndim == 3 else x
    squeeze = x.ndim == 3
    r = cfg.radius
    out = F.pad(out, (r, r, r, r, r, r), mode="reflect")
    out = F.conv3d(out, kernel.view(1, 1, k, 1, 1))
    out = F.conv3d(out, kernel.view(1, 1, 1, k, 1))
    out = F.conv3d(out, kernel.view(1, 1, 1, 1, k))
    return out.reshape(*shape[-3:]) if squeeze else out


def gaussian_blur(v: Volume, cfg: GaussianFilterCfg = GaussianFilterCfg()) -> Volume:
    """Blur a normalized volume; a unit-sum kernel keeps values in [0, 1]."""
    require_normalized(v)
    out = gaussian_blur_t(torch.from_numpy(np.ascontiguousarray(v.data)), cfg)
    return Volume(out.numpy(), v.spacing, v.id)


def apply_synthesis_t(
    x: torch.Tensor,
    mask: torch.Tensor,
    raw: torch.Tensor,
    cfg: GaussianFilterCfg = GaussianFilterCfg(),
    texture: torch.Tensor | None = None,
) -> torch.Tensor:
    """Differentiable masked transform on tensors of identical shape.

    `texture` may carry a precomputed blur of x to avoid re-filtering per step.
    Gradients w.r.t. `raw` flow only through mask voxels.
    """
    if x.shape != mask.shape or x.shape != raw.shape:
        raise ShapeMismatch(
            f"shapes differ: x {tuple(x.shape)}, mask {tuple(mask.shape)}, raw {tuple(raw.shape)}"
        )
    if cfg.blur_activation:
        delta = gaussian_blur_t(torch.tanh(raw), cfg)
    else:
        if texture is None:
            texture = gaussian_blur_t(x, cfg)
        delta = torch.tanh(raw) * texture
    synthetic = (x - delta).clamp(0.0, 1.0)
    return torch.where(mask.bool(), synthetic, x)


def apply_synthesis(
    x: Volume,
    m: TumorMask,
    gout: GeneratorOutput,
    cfg: GaussianFilterCfg = GaussianFilterCfg(),
) -> Volume:
    """Volume-level synthesis: unmasked voxels are returned bitwise-unchanged."""
    require_normalized(x)
    check_same_shape(x.data, m.data, "volume and mask")
    check_same_shape(x.data, gout.raw, "volume and generator field")
    out = apply_synthesis_t(
        torch.from_numpy(np.ascontiguousarray(x.data)),
        torch.from_numpy(m.data.astype(np.bool_)),
        torch.from_numpy(gout.raw),
        cfg,
    )
    return Volume(out.numpy(), x.spacing, x.id)
