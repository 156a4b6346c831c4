"""Experiment orchestration shared by the CLI and the test-suite.

Per-sample work is split into fixed-size chunks before it is handed to a
thread pool, so results do not depend on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, baseline_attack, ensemble_predict, run_attack
from .evaluation import (
    TvSpec,
    apply_defense,
    attack_records,
    evaluate,
    feature_deviation_cka,
)
from .model import Model

CHUNK = 16
METHODS = ("fog", "fgsm", "pgd", "mifgsm")


@dataclass(frozen=True)
class CraftSpec:
    method: str = "fog"
    attack: AttackConfig = field(default_factory=AttackConfig)
    eps: float = 8.0 / 255.0
    baseline_steps: int = 10
    baseline_step_size: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}; expected one of {METHODS}")


def _chunks(n: int):
    return [(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]


def _map_chunks(fn, n: int, workers: int):
    spans = _chunks(n)
    if workers <= 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: fn(*s), spans))


def craft(
    models: list[Model],
    x: np.ndarray,
    y: np.ndarray,
    spec: CraftSpec,
    indices: np.ndarray | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Adversarial batch for ``x``; sample ``i`` is seeded by ``seed ^ indices[i]``."""
    indices = np.arange(len(y)) if indices is None else np.asarray(indices)

    def work(a, b):
        if spec.method == "fog":
            seeds = [spec.attack.seed ^ int(i) for i in indices[a:b]]
            return run_attack(models, x[a:b], y[a:b], spec.attack, seeds).adversarial
        return baseline_attack(
            spec.method, models, x[a:b], y[a:b], spec.eps,
            spec.baseline_steps, spec.baseline_step_size,
        )

    if len(y) == 0:
        return np.zeros_like(x)
    return np.concatenate(_map_chunks(work, len(y), workers))


def predict(models, x: np.ndarray) -> np.ndarray:
    if len(x) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([ensemble_predict(models, x[a:b]) for a, b in _chunks(len(x))])


def summarize(labels, clean_pred, adv_pred, n_classes, target=None) -> tuple[dict, list[dict]]:
    report = evaluate(labels, clean_pred, adv_pred, n_classes, target)
    return report.to_dict(), attack_records(labels, clean_pred, adv_pred, target)


def attack_experiment(models, x, y, spec: CraftSpec, indices=None, workers=1):
    adv = craft(models, x, y, spec, indices, workers)
    clean_pred = predict(models, x)
    adv_pred = predict(models, adv)
    metrics, records = summarize(y, clean_pred, adv_pred, models[0].n_classes, spec.attack.target)
    if indices is not None:
        for rec, i in zip(records, indices):
            rec["index"] = int(i)
    return adv, metrics, records


def defense_experiment(
    models, x, y, spec: CraftSpec, defense: str, quality: int = 50,
    tv: TvSpec = TvSpec(), indices=None, workers=1,
):
    """ASR before and after preprocessing the adversarial images.

    Eligibility is decided on the undefended clean images.
    """
    adv, before, records = attack_experiment(models, x, y, spec, indices, workers)
    defended = apply_defense(adv, defense, quality, tv)
    clean_pred = np.array([r["clean_pred"] for r in records])
    def_pred = predict(models, defended)
    after, after_records = summarize(y, clean_pred, def_pred, models[0].n_classes, spec.attack.target)
    for rec, rec_after in zip(records, after_records):
        rec["defended_pred"] = rec_after["adv_pred"]
        rec["defended_flipped"] = rec_after["attack_flipped"]
    return defended, {"before": before, "after": after}, records


def transfer_experiment(surrogates, targets, x, y, spec: CraftSpec, indices=None, workers=1):
    """Craft on the surrogate ensemble, score on each held-out target."""
    adv = craft(surrogates, x, y, spec, indices, workers)
    sur_clean = predict(surrogates, x)
    sur_adv = predict(surrogates, adv)
    white, records = summarize(y, sur_clean, sur_adv, surrogates[0].n_classes, spec.attack.target)
    per_target = []
    for j, target in enumerate(targets):
        t_clean = predict([target], x)
        t_adv = predict([target], adv)
        metrics, t_records = summarize(y, t_clean, t_adv, target.n_classes, spec.attack.target)
        ckas = [feature_deviation_cka(s, target, x, adv) for s in surrogates]
        metrics["cka"] = float(np.mean(ckas))
        per_target.append(metrics)
        for rec, t_rec in zip(records, t_records):
            rec[f"target{j}_adv_pred"] = t_rec["adv_pred"]
            rec[f"target{j}_flipped"] = t_rec["attack_flipped"]
    if indices is not None:
        for rec, i in zip(records, indices):
            rec["index"] = int(i)
    metrics = {
        "whitebox": white,
        "targets": per_target,
        "mean_tasr": float(np.mean([t["asr"] for t in per_target])) if per_target else None,
        "mean_cka": float(np.mean([t["cka"] for t in per_target])) if per_target else None,
    }
    return adv, metrics, records
