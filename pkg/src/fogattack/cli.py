"""Command-line front end: ``fogattack {noise,train,attack,defend,transfer,eval,replay}``.

Every report-producing command writes ``report.json`` (``command``,
``config``, ``metrics``, ``per_sample``) and ``report.csv`` (one row per
sample) into ``--out``. ``--out`` and ``--workers`` are not echoed in the
config since they do not affect results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .attack import AttackConfig
from .data import SyntheticDatasetSpec, synth_dataset
from .evaluation import TvSpec, evaluate
from .experiments import (
    METHODS,
    CraftSpec,
    attack_experiment,
    defense_experiment,
    transfer_experiment,
)
from .fog import FogParams
from .model import build_cnn
from .noise import FbmSpec, fbm_field, normalize01
from .training import TrainConfig, train

log = logging.getLogger("fogattack")

EXECUTION_ONLY = {"out", "workers", "func", "verbose", "save_images"}


class CliError(Exception):
    """Failure reported to the user with a one-line diagnostic."""


def _add_dataset_flags(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--size", type=int, default=32, help="image height and width")
    g.add_argument("--samples-per-class", type=int, default=150)
    g.add_argument("--data-seed", type=int, default=0)


def _add_fog_flags(p):
    g = p.add_argument_group("fog attack")
    g.add_argument("--octaves", type=int, default=6)
    g.add_argument("--base-cells", type=int, default=4)
    g.add_argument("--lambda-w", type=float, default=0.2)
    g.add_argument("--lambda-b", type=float, default=0.6)
    g.add_argument("--steps", type=int, default=20)
    g.add_argument("--alpha", type=float, default=1.0 / 255.0)
    g.add_argument("--mu", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=0.7)
    g.add_argument("--target", type=int, default=None, help="target label (targeted mode)")
    g.add_argument("--seed", type=int, default=0)
    b = p.add_argument_group("pixel baselines")
    b.add_argument("--method", choices=METHODS, default="fog")
    b.add_argument("--eps", type=float, default=8.0 / 255.0)
    b.add_argument("--baseline-steps", type=int, default=10)
    b.add_argument("--baseline-step-size", type=float, default=None)
    p.add_argument("--n-samples", type=int, default=None, help="attack the first N test samples")


def _add_run_flags(p, out_help="output directory"):
    p.add_argument("--out", required=True, help=out_help)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fogattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("noise", help="write a normalized FBM fog field as an 8-bit PGM")
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--octaves", type=int, default=6)
    p.add_argument("--base-cells", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .pgm path")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("train", help="train a toy classifier on the synthetic set")
    _add_dataset_flags(p)
    p.add_argument("--channels", type=int, default=8, help="conv width")
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--clip-norm", type=float, default=1.0)
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack test samples with fog or a pixel baseline")
    p.add_argument("--model", action="append", required=True, help="checkpoint; repeat to ensemble")
    _add_dataset_flags(p)
    _add_fog_flags(p)
    p.add_argument("--save-images", action="store_true", help="also write adversarial PPMs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="attack, preprocess with a defense, re-evaluate")
    p.add_argument("--model", action="append", required=True)
    _add_dataset_flags(p)
    _add_fog_flags(p)
    p.add_argument("--defense", choices=("jpeg", "tv"), default="jpeg")
    p.add_argument("--quality", type=int, default=50)
    p.add_argument("--tv-weight", type=float, default=0.03)
    p.add_argument("--drop-rate", type=float, default=0.5)
    p.add_argument("--tv-iterations", type=int, default=50)
    p.add_argument("--tv-step", type=float, default=5e-3)
    p.add_argument("--tv-seed", type=int, default=0)
    _add_run_flags(p)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("transfer", help="ensemble attack on surrogates, evaluate on targets")
    p.add_argument("--surrogate", action="append", required=True)
    p.add_argument("--target-model", action="append", required=True)
    _add_dataset_flags(p)
    _add_fog_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="ASR and confusion matrix from prediction CSVs")
    p.add_argument("--clean", required=True, help="CSV with columns index,label,pred")
    p.add_argument("--adv", required=True, help="CSV with columns index,label,pred")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--target", type=int, default=None)
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-run a command from a report's config echo")
    p.add_argument("report", help="report.json written by a previous run")
    _add_run_flags(p)
    p.set_defaults(func=cmd_replay)
    return parser


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in EXECUTION_ONLY}


def _write_report(args, metrics: dict, per_sample: list[dict]) -> None:
    out = Path(args.out)
    formats.write_csv(out / "report.csv", per_sample)
    formats.write_json(out / "report.json", {
        "command": args.command,
        "config": _config_echo(args),
        "metrics": metrics,
        "per_sample": per_sample,
    })


def _load_models(paths):
    models = []
    for path in paths:
        if not Path(path).is_file():
            raise CliError(f"checkpoint not found: {path}")
        try:
            models.append(formats.load_checkpoint(path))
        except formats.FormatError as exc:
            raise CliError(f"cannot load checkpoint {path}: {exc}") from None
    return models


def _dataset(args):
    try:
        spec = SyntheticDatasetSpec(
            n_classes=args.classes, height=args.size, width=args.size,
            samples_per_class=args.samples_per_class, seed=args.data_seed,
        )
    except ValueError as exc:
        raise CliError(f"invalid dataset flags: {exc}") from None
    return synth_dataset(spec)


def _test_samples(args, models):
    ds = _dataset(args)
    x, y = ds.x_test, ds.y_test
    if args.n_samples is not None:
        x, y = x[:args.n_samples], y[:args.n_samples]
    for m in models:
        if m.input_shape != x.shape[1:]:
            raise CliError(f"shape mismatch: model expects {m.input_shape}, images are {x.shape[1:]}")
        if m.n_classes != args.classes:
            raise CliError(f"shape mismatch: model has {m.n_classes} classes, dataset {args.classes}")
    return x, y


def _craft_spec(args) -> CraftSpec:
    try:
        cfg = AttackConfig(
            iterations=args.steps, step=args.alpha, momentum=args.mu,
            fog=FogParams(args.lambda_w, args.lambda_b, args.sigma),
            fbm=FbmSpec(args.octaves, args.base_cells),
            target=args.target, seed=args.seed,
        )
        return CraftSpec(args.method, cfg, args.eps, args.baseline_steps, args.baseline_step_size)
    except ValueError as exc:
        raise CliError(f"invalid attack flags: {exc}") from None


def cmd_noise(args):
    if args.height < 1 or args.width < 1:
        raise CliError("invalid flags: --height and --width must be positive")
    try:
        spec = FbmSpec(args.octaves, args.base_cells)
    except ValueError as exc:
        raise CliError(f"invalid flags: {exc}") from None
    field = normalize01(fbm_field(spec, args.height, args.width, args.seed))
    formats.write_image(args.out, field)


def cmd_train(args):
    ds = _dataset(args)
    model = build_cnn((args.size, args.size, 3), args.classes, args.channels, args.model_seed)
    cfg = TrainConfig(args.epochs, args.lr, args.batch, args.model_seed, args.clip_norm)
    report = train(model, ds, cfg)
    out = Path(args.out)
    formats.save_checkpoint(out / "model.fogb", model)
    rows = [{"epoch": i, "loss": f"{loss:.10g}"} for i, loss in enumerate(report.epoch_losses)]
    _write_report(args, {
        "train_accuracy": report.train_accuracy,
        "test_accuracy": report.test_accuracy,
        "final_loss": report.epoch_losses[-1] if report.epoch_losses else None,
    }, rows)


def _indices(y):
    return np.arange(len(y))


def cmd_attack(args):
    models = _load_models(args.model)
    x, y = _test_samples(args, models)
    adv, metrics, records = attack_experiment(
        models, x, y, _craft_spec(args), _indices(y), args.workers
    )
    if args.save_images:
        for i, img in enumerate(adv):
            formats.write_image(Path(args.out) / "images" / f"{i:05d}.ppm", img)
    _write_predictions(args.out, records)
    _write_report(args, metrics, records)


def _write_predictions(out, records):
    cols = ["index", "label", "pred"]
    formats.write_csv(Path(out) / "clean_predictions.csv",
                      [{"index": r["index"], "label": r["label"], "pred": r["clean_pred"]} for r in records], cols)
    formats.write_csv(Path(out) / "adv_predictions.csv",
                      [{"index": r["index"], "label": r["label"], "pred": r["adv_pred"]} for r in records], cols)


def cmd_defend(args):
    models = _load_models(args.model)
    x, y = _test_samples(args, models)
    try:
        tv = TvSpec(args.tv_weight, args.drop_rate, args.tv_iterations, args.tv_step, args.tv_seed)
        if not 1 <= args.quality <= 100:
            raise ValueError("--quality must be in [1, 100]")
    except ValueError as exc:
        raise CliError(f"invalid defense flags: {exc}") from None
    _, metrics, records = defense_experiment(
        models, x, y, _craft_spec(args), args.defense, args.quality, tv, _indices(y), args.workers
    )
    _write_report(args, metrics, records)


def cmd_transfer(args):
    surrogates = _load_models(args.surrogate)
    targets = _load_models(args.target_model)
    x, y = _test_samples(args, surrogates + targets)
    _, metrics, records = transfer_experiment(
        surrogates, targets, x, y, _craft_spec(args), _indices(y), args.workers
    )
    _write_report(args, metrics, records)


def _read_predictions(path):
    if not Path(path).is_file():
        raise CliError(f"prediction file not found: {path}")
    try:
        rows = formats.read_csv(path)
        return {int(r["index"]): (int(r["label"]), int(r["pred"])) for r in rows}
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"malformed prediction file {path}: {exc}") from None


def cmd_eval(args):
    clean = _read_predictions(args.clean)
    adv = _read_predictions(args.adv)
    if sorted(clean) != sorted(adv):
        raise CliError("prediction files cover different sample indices")
    idx = sorted(clean)
    labels = np.array([clean[i][0] for i in idx], dtype=np.int64)
    if any(adv[i][0] != clean[i][0] for i in idx):
        raise CliError("prediction files disagree on labels")
    clean_pred = np.array([clean[i][1] for i in idx], dtype=np.int64)
    adv_pred = np.array([adv[i][1] for i in idx], dtype=np.int64)
    k = args.classes
    if k is None:
        k = int(max(labels.max(initial=0), clean_pred.max(initial=0), adv_pred.max(initial=0))) + 1
    try:
        report = evaluate(labels, clean_pred, adv_pred, k, args.target)
    except ValueError as exc:
        raise CliError(f"invalid predictions: {exc}") from None
    from .evaluation import attack_records

    records = attack_records(labels, clean_pred, adv_pred, args.target)
    for rec, i in zip(records, idx):
        rec["index"] = i
    _write_report(args, report.to_dict(), records)


def cmd_replay(args):
    path = Path(args.report)
    if not path.is_file():
        raise CliError(f"report not found: {path}")
    try:
        saved = json.loads(path.read_text())
        command, config = saved["command"], saved["config"]
    except (ValueError, KeyError) as exc:
        raise CliError(f"malformed report {path}: {exc}") from None
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None or command in ("replay", "noise"):
        raise CliError(f"cannot replay command {command!r}")
    ns = sub.parse_args(["--out", args.out] + _required_placeholders(command))
    for key, value in config.items():
        setattr(ns, key, value)
    ns.out, ns.workers, ns.command = args.out, args.workers, command
    ns.save_images = False
    ns.func(ns)


def _required_placeholders(command):
    # required flags are overwritten by the echoed config right after parsing
    return {
        "attack": ["--model", "_"], "defend": ["--model", "_"],
        "transfer": ["--surrogate", "_", "--target-model", "_"],
        "eval": ["--clean", "_", "--adv", "_"],
    }.get(command, [])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except CliError as exc:
        print(f"fogattack: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fogattack: error: I/O failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
