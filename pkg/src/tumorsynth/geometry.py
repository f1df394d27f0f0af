"""Shared blob-geometry helpers for phantoms and mask sampling."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Smooth random field (blurred white noise rescaled to unit std)."""
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma)
    std = field.std()
    return field / std if std > 0 else field


def ellipsoid_quadratic(shape, center, semi_axes) -> np.ndarray:
    """Normalized squared ellipsoid distance field: <= 1 inside the ellipsoid."""
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    q = np.zeros(shape, dtype=np.float64)
    for g, c, a in zip(grids, center, semi_axes):
        q = q + ((g - c) / a) ** 2
    return q


def deformed_blob(rng, shape, center, semi_axes, deform: float = 0.25, noise_sigma: float = 2.0) -> np.ndarray:
    """Ellipsoid support wobbled by a smooth noise field on its boundary.

    Always returns a single face-connected component (the one holding the
    center, or the largest if deformation cut the center off).
    """
    q = ellipsoid_quadratic(shape, center, semi_axes)
    wobble = smooth_noise(rng, shape, sigma=noise_sigma) * deform
    blob = q <= 1.0 + wobble
    labels, n = ndimage.label(blob)
    if n > 1:
        want = labels[tuple(int(round(c)) for c in center)]
        if want == 0:
            sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
            want = 1 + int(np.argmax(sizes))
        blob = labels == want
    return blob


def largest_component(mask: np.ndarray, prefer_voxel=None) -> np.ndarray:
    """Reduce a binary mask to a single connected component."""
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask.astype(bool)
    if prefer_voxel is not None:
        want = labels[tuple(int(round(c)) for c in prefer_voxel)]
        if want > 0:
            return labels == want
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
    return labels == 1 + int(np.argmax(sizes))
