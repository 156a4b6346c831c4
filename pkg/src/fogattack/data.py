"""Procedural texture classes used as a stand-in scene dataset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TEXTURES = ("stripes", "checker", "radial", "blob")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_classes: int = 4
    height: int = 32
    width: int = 32
    channels: int = 3
    samples_per_class: int = 100
    seed: int = 0
    noise_std: float = 0.02

    def __post_init__(self):
        if not 2 <= self.n_classes <= len(TEXTURES):
            raise ValueError(f"n_classes must be between 2 and {len(TEXTURES)}")
        if self.samples_per_class < 5:
            raise ValueError("need at least 5 samples per class for an 80/20 split")
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError("image dimensions must be positive")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1


def _two_colors(rng, channels):
    # one dark and one light color so every texture carries luminance contrast
    dark = rng.uniform(0.0, 0.35, size=channels)
    light = rng.uniform(0.65, 1.0, size=channels)
    return (dark, light) if rng.random() < 0.5 else (light, dark)


def render_texture(kind: str, rng: np.random.Generator, h: int, w: int, c: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    a, b = _two_colors(rng, c)
    if kind == "stripes":
        theta = rng.uniform(0.0, np.pi)
        cycles = rng.uniform(3.0, 6.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        proj = (xx * np.cos(theta) + yy * np.sin(theta)) / max(h, w)
        pattern = 0.5 + 0.5 * np.sin(2 * np.pi * cycles * proj + phase)
    elif kind == "checker":
        cell = rng.uniform(3.0, 6.0)
        ox, oy = rng.uniform(0.0, 2 * cell, size=2)
        pattern = ((np.floor((xx + ox) / cell) + np.floor((yy + oy) / cell)) % 2).astype(float)
    elif kind == "radial":
        cx, cy = rng.uniform(0.25, 0.75, size=2) * (w, h)
        radius = rng.uniform(0.7, 1.2) * max(h, w)
        pattern = np.clip(1.0 - np.hypot(xx - cx, yy - cy) / radius, 0.0, 1.0)
    elif kind == "blob":
        cx, cy = rng.uniform(0.25, 0.75, size=2) * (w, h)
        sigma = rng.uniform(0.06, 0.12) * max(h, w)
        pattern = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma * sigma))
    else:
        raise ValueError(f"unknown texture {kind!r}")
    return a + (b - a) * pattern[..., None]


def synth_dataset(spec: SyntheticDatasetSpec) -> Dataset:
    """Balanced texture set with a stratified 80/20 train/test split."""
    n_train = int(0.8 * spec.samples_per_class)
    xs_train, ys_train, xs_test, ys_test = [], [], [], []
    for label in range(spec.n_classes):
        for i in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, label, i])
            img = render_texture(TEXTURES[label], rng, spec.height, spec.width, spec.channels)
            img = np.clip(img + rng.normal(0.0, spec.noise_std, size=img.shape), 0.0, 1.0)
            if i < n_train:
                xs_train.append(img)
                ys_train.append(label)
            else:
                xs_test.append(img)
                ys_test.append(label)
    return Dataset(
        np.stack(xs_train), np.asarray(ys_train, dtype=np.int64),
        np.stack(xs_test), np.asarray(ys_test, dtype=np.int64),
    )
