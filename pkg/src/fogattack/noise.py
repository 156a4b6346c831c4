"""Gradient-lattice Perlin noise and multi-octave FBM fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles keyed by ``(seed, counter)``.

    Every output depends only on its own counter, so any subset of the
    stream can be regenerated without drawing the rest.
    """
    key = _splitmix64(np.asarray([seed], dtype=np.uint64) & _MASK64)
    with np.errstate(over="ignore"):
        bits = _splitmix64(key ^ _splitmix64(np.asarray(counters, dtype=np.uint64)))
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def fade(t):
    """Quintic smoothstep ``6t^5 - 15t^4 + 10t^3`` on [0, 1]."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(~np.isfinite(arr)):
        raise ValueError("fade expects t in [0, 1]")
    out = arr * arr * arr * (arr * (arr * 6.0 - 15.0) + 10.0)
    return float(out) if np.ndim(t) == 0 else out


def lerp(a, b, t):
    return a + t * (b - a)


@dataclass(frozen=True)
class GradientLattice:
    cells_x: int
    cells_y: int
    seed: int
    # shape (cells_y + 1, cells_x + 1, 2), indexed [j, i]
    gradients: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.gradients.setflags(write=False)


def build_lattice(cells_x: int, cells_y: int, seed: int) -> GradientLattice:
    if cells_x < 1 or cells_y < 1:
        raise ValueError(f"lattice needs at least one cell per axis, got {cells_x}x{cells_y}")
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    n_vertices = (cells_x + 1) * (cells_y + 1)
    theta = 2.0 * np.pi * counter_uniform(seed, np.arange(n_vertices, dtype=np.uint64))
    grads = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return GradientLattice(cells_x, cells_y, seed, grads.reshape(cells_y + 1, cells_x + 1, 2))


def perlin_grid(lattice: GradientLattice, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized Perlin noise at arrays of lattice coordinates."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if (
        np.any(xs < 0) or np.any(xs > lattice.cells_x)
        or np.any(ys < 0) or np.any(ys > lattice.cells_y)
    ):
        raise ValueError("coordinates outside the lattice")
    # the far boundary belongs to the last cell
    left = np.minimum(np.floor(xs).astype(np.int64), lattice.cells_x - 1)
    down = np.minimum(np.floor(ys).astype(np.int64), lattice.cells_y - 1)
    dx = xs - left
    dy = ys - down
    g = lattice.gradients

    def ramp(i, j, ox, oy):
        gv = g[j, i]
        return ox * gv[..., 0] + oy * gv[..., 1]

    s_ld = ramp(left, down, dx, dy)
    s_rd = ramp(left + 1, down, dx - 1.0, dy)
    s_lu = ramp(left, down + 1, dx, dy - 1.0)
    s_ru = ramp(left + 1, down + 1, dx - 1.0, dy - 1.0)
    u = fade(dx)
    v = fade(dy)
    lower = lerp(s_ld, s_rd, u)
    upper = lerp(s_lu, s_ru, u)
    return lerp(lower, upper, v)


def perlin_at(lattice: GradientLattice, x: float, y: float) -> float:
    return float(perlin_grid(lattice, np.float64(x), np.float64(y)))


@dataclass(frozen=True)
class FbmSpec:
    """Octave schedule with amplitude ``2**-k`` and frequency ``2**k``."""

    octaves: int = 6
    base_cells: int = 4

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.base_cells < 1:
            raise ValueError("base_cells must be >= 1")

    @property
    def amplitudes(self) -> tuple[float, ...]:
        return tuple(2.0 ** -k for k in range(self.octaves))

    @property
    def frequencies(self) -> tuple[float, ...]:
        return tuple(2.0 ** k for k in range(self.octaves))

    def cells(self, k: int) -> int:
        return self.base_cells * 2 ** k


def octave_field(spec: FbmSpec, k: int, height: int, width: int, seed: int) -> np.ndarray:
    """Unweighted Perlin field of octave ``k`` sampled at pixel centers."""
    if height < 1 or width < 1:
        raise ValueError("field dimensions must be positive")
    n = spec.cells(k)
    lattice = build_lattice(n, n, seed ^ k)
    xs = (np.arange(width) + 0.5) / width * n
    ys = (np.arange(height) + 0.5) / height * n
    gx, gy = np.meshgrid(xs, ys)
    return perlin_grid(lattice, gx, gy)


def fbm_field(spec: FbmSpec, height: int, width: int, seed: int) -> np.ndarray:
    """Weighted octave sum, one independently seeded lattice per octave."""
    out = np.zeros((height, width))
    for k, amp in enumerate(spec.amplitudes):
        out += amp * octave_field(spec, k, height, width, seed)
    return out


def normalize01(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo <= 0.0:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)
