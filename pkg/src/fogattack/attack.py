"""Fog-mask optimization with momentum sign steps, plus pixel-space baselines.

All attacks operate on batches ``(N, H, W, C)``; every per-sample quantity
(gradient normalization, success) is computed independently per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .fog import FogParams, fog_layer, formation_backward, gaussian_smooth, project01, render
from .model import Model
from .noise import FbmSpec, fbm_field, normalize01

GRAD_EPS = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 20
    step: float = 1.0 / 255.0
    momentum: float = 1.0
    fog: FogParams = field(default_factory=FogParams)
    fbm: FbmSpec = field(default_factory=FbmSpec)
    target: int | None = None
    seed: int = 0

    def __post_init__(self):
        # zero iterations is the unoptimized-fog reference arm
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.momentum < 0:
            raise ValueError("momentum decay must be >= 0")

    @property
    def targeted(self) -> bool:
        return self.target is not None


@dataclass
class AttackState:
    mask: np.ndarray
    momentum: np.ndarray
    iteration: int = 0


@dataclass
class StepRecord:
    iteration: int
    loss: np.ndarray
    mask_before: np.ndarray
    mask_stepped: np.ndarray
    mask_after: np.ndarray


@dataclass
class AttackOutcome:
    adversarial: np.ndarray
    mask: np.ndarray
    losses: np.ndarray
    clean_pred: np.ndarray
    adv_pred: np.ndarray
    success: np.ndarray
    mode: str

    def __getitem__(self, i: int) -> "AttackOutcome":
        return AttackOutcome(
            self.adversarial[i], self.mask[i], self.losses[:, i], self.clean_pred[i],
            self.adv_pred[i], self.success[i], self.mode,
        )


def init_fog_mask(height: int, width: int, channels: int, fbm: FbmSpec, seed: int) -> np.ndarray:
    plane = normalize01(fbm_field(fbm, height, width, seed))
    return np.repeat(plane[:, :, None], channels, axis=2)


def normalize_grad(g: np.ndarray) -> np.ndarray:
    """Divide by the mean absolute value; near-zero gradients pass through."""
    scale = np.mean(np.abs(g))
    if scale < GRAD_EPS:
        return g
    return g / scale


def momentum_step(m_prev: np.ndarray, g_norm: np.ndarray, mu: float) -> np.ndarray:
    if np.shape(m_prev) != np.shape(g_norm):
        raise ValueError("momentum and gradient shapes differ")
    return mu * m_prev + g_norm


def mask_update(mask: np.ndarray, m: np.ndarray, step: float, targeted: bool = False) -> np.ndarray:
    if np.shape(mask) != np.shape(m):
        raise ValueError("mask and momentum shapes differ")
    direction = -np.sign(m) if targeted else np.sign(m)
    return project01(mask + step * direction)


def _as_models(models) -> list[Model]:
    if isinstance(models, Model):
        return [models]
    models = list(models)
    if not models:
        raise ValueError("at least one model is required")
    shape = models[0].input_shape
    if any(m.input_shape != shape for m in models):
        raise ValueError("ensemble members disagree on input shape")
    return models


def ensemble_loss_and_grad(models, x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-model cross-entropy and its gradient w.r.t. the input batch."""
    models = _as_models(models)
    total_loss, total_grad = None, None
    for model in models:
        loss, grad = model.loss_and_input_grad(x, y)
        if total_loss is None:
            total_loss, total_grad = loss, grad
        else:
            total_loss = total_loss + loss
            total_grad = total_grad + grad
    return total_loss / len(models), total_grad / len(models)


def ensemble_gradient(models, x: np.ndarray, y) -> np.ndarray:
    return ensemble_loss_and_grad(models, x, y)[1]


def ensemble_predict(models, x: np.ndarray) -> np.ndarray:
    models = _as_models(models)
    p = sum(m.predict_proba(x) for m in models) / len(models)
    return np.argmax(p, axis=-1)


def _per_sample_normalize(g: np.ndarray) -> np.ndarray:
    return np.stack([normalize_grad(gi) for gi in g])


def _check_labels(labels: np.ndarray, n_classes: int, name: str):
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"{name} out of range for {n_classes} classes")


def _prepare(models, x, y, cfg: AttackConfig, seeds):
    models = _as_models(models)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError("expected a batch of images")
    n, h, w, c = x.shape
    if (h, w, c) != models[0].input_shape:
        raise ValueError(f"image shape {(h, w, c)} does not match model {models[0].input_shape}")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("images must lie in [0, 1]")
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    k = models[0].n_classes
    _check_labels(y, k, "label")
    if cfg.targeted:
        _check_labels(np.asarray([cfg.target]), k, "target")
        if np.any(y == cfg.target):
            raise ValueError("target label must differ from the true label")
    if seeds is None:
        seeds = [cfg.seed ^ i for i in range(n)]
    if len(seeds) != n:
        raise ValueError("one seed per image is required")
    mask = np.stack([init_fog_mask(h, w, c, cfg.fbm, int(s)) for s in seeds])
    return models, x, y, mask


def _iterate(models, x, y, mask, cfg: AttackConfig):
    loss_labels = np.full(len(x), cfg.target) if cfg.targeted else y
    state = AttackState(mask, np.zeros_like(mask), 0)
    params = cfg.fog
    for t in range(cfg.iterations):
        fog = fog_layer(state.mask, params.whiteness)
        adv = render(x, state.mask, params)
        loss, grad_adv = ensemble_loss_and_grad(models, adv, loss_labels)
        g = formation_backward(grad_adv, x, fog, params)
        g_norm = _per_sample_normalize(g)
        momentum = momentum_step(state.momentum, g_norm, cfg.momentum)
        stepped = mask_update(state.mask, momentum, cfg.step, cfg.targeted)
        smoothed = project01(gaussian_smooth(stepped, params.smooth_sigma))
        record = StepRecord(t, loss, state.mask, stepped, smoothed)
        state = AttackState(smoothed, momentum, t + 1)
        yield state, record


def fog_attack_steps(
    models, x: np.ndarray, y, cfg: AttackConfig, seeds: Sequence[int] | None = None
) -> Iterator[tuple[AttackState, StepRecord]]:
    """Yield the attack state after each optimization step.

    ``x`` is a batch; sample ``i`` draws its initial mask from ``seeds[i]``
    (default ``cfg.seed ^ i``).
    """
    return _iterate(*_prepare(models, x, y, cfg, seeds), cfg)


def run_attack(
    models, x: np.ndarray, y, cfg: AttackConfig, seeds: Sequence[int] | None = None
) -> AttackOutcome:
    """Optimize a fog mask for one image ``(H, W, C)`` or a batch.

    Every iteration runs; success is judged on the final image only.
    """
    single = np.ndim(x) == 3
    models, xb, yb, mask = _prepare(models, x[None] if single else x, y, cfg, seeds)
    losses = []
    for state, record in _iterate(models, xb, yb, mask, cfg):
        losses.append(record.loss)
        mask = state.mask
    adv = render(xb, mask, cfg.fog)
    clean_pred = ensemble_predict(models, xb)
    adv_pred = ensemble_predict(models, adv)
    success = adv_pred == cfg.target if cfg.targeted else adv_pred != yb
    outcome = AttackOutcome(
        adv, mask, np.asarray(losses).reshape(len(losses), len(xb)),
        clean_pred, adv_pred, success, "targeted" if cfg.targeted else "untargeted",
    )
    return outcome[0] if single else outcome


BASELINES = ("fgsm", "pgd", "mifgsm")


def baseline_attack(
    kind: str,
    model,
    x: np.ndarray,
    y,
    eps: float,
    steps: int = 10,
    step_size: float | None = None,
    decay: float = 1.0,
    random_start: int | None = None,
) -> np.ndarray:
    """L-infinity pixel attacks: FGSM, PGD and MI-FGSM.

    ``random_start`` seeds a uniform start inside the eps-ball (PGD only);
    ``None`` starts from the clean image.
    """
    kind = kind.lower()
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if kind == "fgsm":
        g = ensemble_gradient(model, x, y)
        return np.clip(x + eps * np.sign(g), x - eps, x + eps).clip(0.0, 1.0)
    if step_size is None:
        step_size = 2.5 * eps / steps if kind == "pgd" else eps / steps
    adv = x.copy()
    if kind == "pgd" and random_start is not None and eps > 0:
        noise = np.random.default_rng(random_start).uniform(-eps, eps, size=x.shape)
        adv = np.clip(x + noise, 0.0, 1.0)
    m = np.zeros_like(x)
    batched = x.ndim == 4
    for _ in range(steps):
        g = ensemble_gradient(model, adv, y)
        if kind == "mifgsm":
            g = _per_sample_normalize(g) if batched else normalize_grad(g)
            m = decay * m + g
            g = m
        adv = adv + step_size * np.sign(g)
        adv = np.clip(adv, x - eps, x + eps).clip(0.0, 1.0)
    return adv
