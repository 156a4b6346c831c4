"""Attack metrics, preprocessing defenses and linear CKA."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

# standard JPEG luminance quantization table (quality 50)
LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass
class EvalReport:
    n_total: int
    n_mis: int
    n_adv: int
    asr: float
    confusion: np.ndarray
    mode: str = "untargeted"

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_mis": self.n_mis,
            "n_adv": self.n_adv,
            "asr": None if np.isnan(self.asr) else self.asr,
            "confusion": self.confusion.tolist(),
            "mode": self.mode,
        }


def _get(record, key):
    return record[key] if isinstance(record, Mapping) else getattr(record, key)


def asr(records: Iterable) -> float:
    """Success rate over samples the model classified correctly when clean.

    Each record provides ``clean_correct`` and ``attack_flipped``.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    eligible = [r for r in records if _get(r, "clean_correct")]
    if not eligible:
        raise ValueError("ASR undefined: every sample is already misclassified")
    n_adv = sum(bool(_get(r, "attack_flipped")) for r in eligible)
    return n_adv / len(eligible)


def targeted_asr(records: Iterable) -> float:
    """Like ``asr`` but success requires ``adv_pred == target``.

    Records provide ``clean_correct``, ``adv_pred`` and ``target``.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    eligible = [r for r in records if _get(r, "clean_correct")]
    if not eligible:
        raise ValueError("ASR undefined: every sample is already misclassified")
    hits = sum(int(_get(r, "adv_pred")) == int(_get(r, "target")) for r in eligible)
    return hits / len(eligible)


def attack_records(labels, clean_pred, adv_pred, target=None) -> list[dict]:
    labels = np.asarray(labels)
    clean_pred = np.asarray(clean_pred)
    adv_pred = np.asarray(adv_pred)
    records = []
    for i in range(len(labels)):
        rec = {
            "index": i,
            "label": int(labels[i]),
            "clean_pred": int(clean_pred[i]),
            "adv_pred": int(adv_pred[i]),
            "clean_correct": bool(clean_pred[i] == labels[i]),
        }
        if target is None:
            rec["attack_flipped"] = bool(rec["clean_correct"] and adv_pred[i] != labels[i])
        else:
            rec["target"] = int(target)
            rec["attack_flipped"] = bool(rec["clean_correct"] and adv_pred[i] == target)
        records.append(rec)
    return records


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    """Rows are ground truth, columns are predictions."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.shape != preds.shape:
        raise ValueError("labels and predictions differ in length")
    for arr in (labels, preds):
        if np.any(arr < 0) or np.any(arr >= n_classes):
            raise ValueError(f"label out of range for {n_classes} classes")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def evaluate(labels, clean_pred, adv_pred, n_classes: int, target=None) -> EvalReport:
    records = attack_records(labels, clean_pred, adv_pred, target)
    n_total = len(records)
    n_mis = sum(not r["clean_correct"] for r in records)
    n_adv = sum(r["attack_flipped"] for r in records)
    rate = n_adv / (n_total - n_mis) if n_total > n_mis else float("nan")
    return EvalReport(
        n_total, n_mis, n_adv, rate,
        confusion_matrix(labels, adv_pred, n_classes),
        "untargeted" if target is None else "targeted",
    )


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


def quality_scale(quality: int) -> float:
    """IJG quality rule; returns the multiplier applied to the base table."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return s / 100.0


def quantization_table(quality: int) -> np.ndarray:
    s = quality_scale(quality) * 100.0
    return np.clip(np.floor((LUMINANCE_TABLE * s + 50.0) / 100.0), 1.0, 255.0)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    d[0] /= np.sqrt(2.0)
    return d


_DCT8 = _dct_matrix(8)


def jpeg_like_defense(x: np.ndarray, quality: int = 50) -> np.ndarray:
    """Blockwise DCT quantization round trip applied to every channel.

    Accepts ``(H, W, C)`` or a batch ``(N, H, W, C)``.
    """
    q = quantization_table(quality)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        return np.stack([jpeg_like_defense(xi, quality) for xi in x])
    h, w, c = x.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(x * 255.0 - 128.0, ((0, ph), (0, pw), (0, 0)), mode="edge")
    H, W = padded.shape[:2]
    # (bh, 8, bw, 8, C) -> (bh, bw, C, 8, 8)
    blocks = padded.reshape(H // 8, 8, W // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = _DCT8 @ blocks @ _DCT8.T
    coef = np.round(coef / q) * q
    rec = _DCT8.T @ coef @ _DCT8
    out = rec.transpose(0, 3, 1, 4, 2).reshape(H, W, c)[:h, :w]
    return np.clip((out + 128.0) / 255.0, 0.0, 1.0)


@dataclass(frozen=True)
class TvSpec:
    weight: float = 0.03
    drop_rate: float = 0.5
    iterations: int = 50
    step: float = 5e-3
    seed: int = 0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("TV weight must be >= 0")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("drop_rate must lie in [0, 1]")
        if self.iterations < 0 or self.step <= 0:
            raise ValueError("iterations must be >= 0 and step > 0")


def _tv(z: np.ndarray) -> float:
    return float(np.abs(np.diff(z, axis=0)).sum() + np.abs(np.diff(z, axis=1)).sum())


def _tv_subgradient(z: np.ndarray) -> np.ndarray:
    g = np.zeros_like(z)
    sv = np.sign(np.diff(z, axis=0))
    sh = np.sign(np.diff(z, axis=1))
    g[1:] += sv
    g[:-1] -= sv
    g[:, 1:] += sh
    g[:, :-1] -= sh
    return g


def tv_objective(z: np.ndarray, x: np.ndarray, keep: np.ndarray, weight: float) -> float:
    return float(np.sum(keep * (z - x) ** 2)) + weight * _tv(z)


def tv_reconstruct(x: np.ndarray, spec: TvSpec = TvSpec(), trace: list | None = None) -> np.ndarray:
    """Random pixel drop followed by anisotropic-TV subgradient reconstruction.

    ``trace``, when given, receives the objective before each step and after
    the last one.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        return np.stack([
            tv_reconstruct(xi, TvSpec(spec.weight, spec.drop_rate, spec.iterations,
                                      spec.step, spec.seed ^ i))
            for i, xi in enumerate(x)
        ])
    rng = np.random.default_rng(spec.seed)
    # one keep decision per pixel, shared across channels
    keep = (rng.random(x.shape[:2]) >= spec.drop_rate).astype(np.float64)[..., None]
    z = x.copy()
    for _ in range(spec.iterations):
        if trace is not None:
            trace.append(tv_objective(z, x, keep, spec.weight))
        grad = 2.0 * keep * (z - x) + spec.weight * _tv_subgradient(z)
        z = z - spec.step * grad
    if trace is not None:
        trace.append(tv_objective(z, x, keep, spec.weight))
    return np.clip(z, 0.0, 1.0)


def apply_defense(x: np.ndarray, kind: str, quality: int = 50, tv: TvSpec = TvSpec()) -> np.ndarray:
    if kind == "jpeg":
        return jpeg_like_defense(x, quality)
    if kind == "tv":
        return tv_reconstruct(x, tv)
    if kind == "none":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown defense {kind!r}")


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("CKA needs two matrices with the same number of rows")
    if x.shape[0] < 2:
        raise ValueError("CKA needs at least two samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    nx = np.linalg.norm(xc.T @ xc)
    ny = np.linalg.norm(yc.T @ yc)
    if nx < 1e-12 or ny < 1e-12:
        return 0.0
    return float(np.linalg.norm(yc.T @ xc) ** 2 / (nx * ny))


def feature_deviation_cka(surrogate, target, clean: np.ndarray, adversarial: np.ndarray) -> float:
    """CKA between the two models' adversarial-minus-clean feature shifts."""
    clean = np.asarray(clean)
    adversarial = np.asarray(adversarial)
    if clean.shape != adversarial.shape:
        raise ValueError("clean and adversarial batches are not aligned")
    dev_s = surrogate.features(adversarial) - surrogate.features(clean)
    dev_t = target.features(adversarial) - target.features(clean)
    return linear_cka(dev_s, dev_t)
