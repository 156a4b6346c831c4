"""Differentiable fog image formation and Gaussian mask smoothing.

Arrays are ``(..., H, W, C)``; leading batch axes are carried through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FogParams:
    whiteness: float = 0.2
    blend: float = 0.6
    smooth_sigma: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.whiteness <= 1.0:
            raise ValueError(f"whiteness must lie in [0, 1], got {self.whiteness}")
        if not 0.0 <= self.blend <= 1.0:
            raise ValueError(f"blend must lie in [0, 1], got {self.blend}")
        if not self.smooth_sigma > 0.0:
            raise ValueError(f"smooth_sigma must be positive, got {self.smooth_sigma}")


def project01(values):
    return np.clip(values, 0.0, 1.0)


def fog_layer(mask: np.ndarray, whiteness: float) -> np.ndarray:
    """Blend the mask toward white: ``(1 - w) * mask + w``."""
    if not 0.0 <= whiteness <= 1.0:
        raise ValueError(f"whiteness must lie in [0, 1], got {whiteness}")
    return (1.0 - whiteness) * mask + whiteness


def _blend_raw(x, fog, blend):
    return blend * fog + (1.0 - blend) * x


def blend(x: np.ndarray, fog: np.ndarray, blend: float) -> np.ndarray:
    if np.shape(x) != np.shape(fog):
        raise ValueError(f"shape mismatch: image {np.shape(x)} vs fog {np.shape(fog)}")
    return project01(_blend_raw(x, fog, blend))


def render(x: np.ndarray, mask: np.ndarray, params: FogParams) -> np.ndarray:
    """Fogged image for a given mask (fog layer followed by blending)."""
    return blend(x, fog_layer(mask, params.whiteness), params.blend)


def formation_backward(
    grad_adv: np.ndarray, x: np.ndarray, fog: np.ndarray, params: FogParams
) -> np.ndarray:
    """Pull a gradient on the fogged image back to the fog mask.

    Pixels where the output clamp was active receive zero gradient.
    """
    if not (np.shape(grad_adv) == np.shape(x) == np.shape(fog)):
        raise ValueError("grad, image and fog layer must share a shape")
    raw = _blend_raw(x, fog, params.blend)
    active = (raw >= 0.0) & (raw <= 1.0)
    scale = params.blend * (1.0 - params.whiteness)
    return np.where(active, scale * grad_adv, 0.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps at integer offsets up to ``ceil(3 sigma)``."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return w / w.sum()


def _convolve_axis(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = kernel.size // 2
    pad = [(0, 0)] * values.ndim
    pad[axis] = (radius, radius)
    mode = "reflect" if values.shape[axis] > 1 else "edge"
    padded = np.pad(values, pad, mode=mode)
    n = values.shape[axis]
    out = np.zeros_like(values)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the two spatial axes of ``(..., H, W, C)``."""
    kernel = gaussian_kernel(sigma)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim < 3:
        raise ValueError("expected a (..., H, W, C) array")
    out = _convolve_axis(values, kernel, axis=values.ndim - 3)
    return _convolve_axis(out, kernel, axis=values.ndim - 2)
