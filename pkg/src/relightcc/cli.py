"""Command-line entry point: ``relightcc {synth,import,train,eval,correct,gradcheck,params}``.

Exit codes: 0 success, 2 usage or data error, 3 numeric fault.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentationConfig
from .color import Domain, Illuminant, LinearImage, correct, reprocess
from .dataio import (Manifest, SampleRecord, import_ppm_as_uip, load_manifest, read_ccraw, synth_mondrian,
                     write_ccraw, write_ppm)
from .errors import NumericFaultError, RelightError
from .evaluation import (BASELINES, BaselineEstimator, ModelEstimator, OracleEstimator, evaluate,
                         evaluate_folds, write_report)
from .network import CascadeModel
from .training import TrainConfig, config_dict, load_init_state, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
REGIME_ALIASES = {"uip": "uip", "saf": "saf", "single": "single_sie", "single_sie": "single_sie",
                  "finetune": "finetune"}

log = logging.getLogger("relightcc")


class UsageError(Exception):
    """Bad flags or config contents; maps to exit code 2."""


# ------------------------------------------------------------------- config

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_AUG_FIELDS = {f.name for f in dataclasses.fields(AugmentationConfig)}
# backbone.* keys are folded into TrainConfig, which owns the model shape
_BACKBONE_KEYS = {"backbone.scale": "scale", "backbone.stages": "stages", "backbone.head_kind": "head_kind",
                  "backbone.reduction": "reduction"}


def split_config(flat: dict) -> tuple[dict, dict]:
    """Flat dotted keys -> (TrainConfig kwargs, AugmentationConfig kwargs); unknown keys are an error."""
    train_kw, aug_kw = {}, {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if key in _BACKBONE_KEYS:
            train_kw[_BACKBONE_KEYS[key]] = value
        elif section == "train" and name in _TRAIN_FIELDS and name != "regime":
            train_kw[name] = value
        elif section == "aug" and name in _AUG_FIELDS:
            aug_kw[name] = tuple(value) if isinstance(value, list) else value
        else:
            raise UsageError(f"unknown config key {key!r}")
    return train_kw, aug_kw


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_train_config(args) -> tuple[TrainConfig, AugmentationConfig, dict]:
    flat: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object of dotted keys")
        flat.update(doc)
    overrides = {"train.epochs": args.epochs, "train.lr": args.lr, "train.seed": args.seed,
                 "train.batch_size": args.batch_size, "train.val_fold": args.val_fold,
                 "backbone.stages": args.stages, "backbone.scale": args.scale,
                 "aug.output_size": args.output_size}
    flat.update({k: v for k, v in overrides.items() if v is not None})
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        flat[key] = _parse_value(value)
    train_kw, aug_kw = split_config(flat)
    regime = REGIME_ALIASES[args.regime]
    try:
        cfg = TrainConfig(regime=regime, **train_kw)
        aug_kw.setdefault("rng_seed", cfg.seed)
        aug = AugmentationConfig(**aug_kw)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    resolved = {f"train.{k}": v for k, v in config_dict(cfg).items()}
    resolved.update({f"aug.{k}": (list(v) if isinstance(v, tuple) else v)
                     for k, v in dataclasses.asdict(aug).items()})
    return cfg, aug, resolved


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    out = Path(args.out)
    manifest, _ = synth_mondrian(args.scenes, args.grid, args.bias, args.achromatic,
                                 np.random.default_rng(args.seed), out_dir=out, size=args.size,
                                 sensor_id=args.sensor, name=out.name or "mondrian")
    print(f"wrote {len(manifest)} scenes ({args.size}x{args.size}, grid {args.grid}, bias {args.bias}) "
          f"to {out}")
    return EXIT_OK


def cmd_import(args) -> int:
    src = Path(args.ppm_dir)
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".ppm", ".pnm")) if src.is_dir() else []
    if not files:
        raise UsageError(f"no .ppm files in {src}")
    out = Path(args.out)
    (out / "uip").mkdir(parents=True, exist_ok=True)
    records = []
    for p in files:
        image = import_ppm_as_uip(p)
        target = out / "uip" / (p.stem + ".ccraw")
        write_ccraw(target, image)
        records.append(SampleRecord(str(target), Illuminant.white(), "uip"))
    manifest = Manifest(records, name=out.name or "uip", root=out)
    manifest.save(out / "manifest.json")
    print(f"imported {len(records)} images to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, aug, resolved = resolve_train_config(args)
    manifest = load_manifest(args.data)
    init = load_init_state(args.init) if args.init else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    result = train(cfg.regime, manifest, cfg, aug, init_state=init,
                   log_path=out / "train_log.jsonl", checkpoint_path=out / "model.cckp")
    last = result.log[-1]
    extra = f", val {last['val_mean_deg']:.4f} deg" if "val_mean_deg" in last else ""
    print(f"trained {cfg.epochs} epochs ({cfg.regime}): loss {last['loss_deg']:.4f} deg{extra}")
    return EXIT_OK


def _load_model(path) -> CascadeModel:
    if not path:
        raise UsageError("--ckpt is required for this method")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} not found")
    return CascadeModel.from_state(load_init_state(path))


def cmd_eval(args) -> int:
    if args.method == "model":
        estimator = ModelEstimator(_load_model(args.ckpt), resize_half=args.resize_half)
    elif args.method == "oracle":
        estimator = OracleEstimator()
    else:
        kwargs = {"robust": True} if args.robust and args.method == "whitepatch" else {}
        estimator = BaselineEstimator(args.method, **kwargs)
    manifest = load_manifest(args.data)
    if args.fold is None:
        report = evaluate_folds(estimator, manifest, args.folds, args.fold_seed, args.workers)
        fold = "all"
    else:
        report = evaluate(estimator, manifest, args.fold, args.folds, args.fold_seed, args.workers)
        fold = args.fold
    write_report(args.out, report, args.method, manifest.name, fold)
    print(f"{args.method}: n={report.n} mean={report.mean:.4f} median={report.median:.4f} "
          f"trimean={report.trimean:.4f} best25={report.best25:.4f} worst25={report.worst25:.4f}")
    return EXIT_OK


def _parse_triple(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected r,g,b, got {text!r}") from exc
    if len(vals) != 3:
        raise UsageError(f"expected r,g,b, got {text!r}")
    return np.asarray(vals)


def cmd_correct(args) -> int:
    image = read_ccraw(args.input)
    if args.oracle_label:
        ell = _parse_triple(args.oracle_label)
    else:
        ell = ModelEstimator(_load_model(args.ckpt), resize_half=args.resize_half)(image, None)
    balanced = correct(image, ell)
    display = reprocess(np.clip(balanced.pixels, 0.0, 1.0))
    write_ppm(args.out, np.round(display * 255.0).astype(np.uint8))
    print("illuminant " + " ".join(f"{v:.5f}" for v in Illuminant.from_array(ell).normalized()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import END_TO_END_TOL, LAYER_TOL, run_gradcheck_suite

    res = run_gradcheck_suite(args.seed)
    if args.verbose:
        for name, err in sorted(res["layers"].items()):
            print(f"  {name:<22s} {err:.3e}")
    print(f"max layer rel err {res['layer_max']:.3e} (tol {LAYER_TOL:g}); "
          f"cascade rel err {res['cascade']:.3e} (tol {END_TO_END_TOL:g}); {res['seconds']:.1f}s")
    return EXIT_OK if res["passed"] else EXIT_NUMERIC


def cmd_params(args) -> int:
    from .diagnostics import parameter_report

    rep = parameter_report()
    for scale, row in rep.items():
        print(f"{scale}: backbone={row['backbone']} head={row['head']} isam_per_stage={row['isam_per_stage']} "
              f"total_m3={row['total']} total_m1={row['total_m1']} fc4_head={row['fc4_head']}")
        lhs, rhs = row["total"], row["total_m1"] + 2 * row["isam_per_stage"]
        print(f"{scale}: sharing {lhs} = {row['total_m1']} + 2*{row['isam_per_stage']} = {rhs} "
              f"({'ok' if row['sharing_identity'] else 'VIOLATED'})")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relightcc", description="Relighting-based color constancy toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate relit Mondrian scenes")
    s.add_argument("--scenes", type=int, required=True, help="number of scenes")
    s.add_argument("--grid", type=int, default=8, help="patches per side (>= 2)")
    s.add_argument("--bias", type=float, default=0.0, help="chromatic bias of reflectances")
    s.add_argument("--achromatic", type=float, default=0.5, help="probability of a gray patch")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64, help="square image side in pixels")
    s.add_argument("--sensor", default="mondrian", help="sensor id written to the manifest")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("import", help="convert sRGB P6 PPMs to uip-domain CCRAW")
    s.add_argument("--ppm-dir", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("train", help="train a cascade")
    s.add_argument("--regime", required=True, choices=sorted(REGIME_ALIASES))
    s.add_argument("--config", help="JSON object with dotted keys (train.*, aug.*, backbone.*)")
    s.add_argument("--data", required=True, help="dataset directory or manifest.json")
    s.add_argument("--init", help="initial CCKP1 checkpoint (required for finetune)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--stages", type=int)
    s.add_argument("--scale", choices=("toy", "paper"))
    s.add_argument("--val-fold", type=int, help="hold out this fold and log its mean error")
    s.add_argument("--output-size", type=int, help="training crop size in pixels")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any dotted config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="angular-error report for a model or baseline")
    s.add_argument("--method", required=True, choices=["model", "oracle", *BASELINES])
    s.add_argument("--ckpt", help="checkpoint for --method model")
    s.add_argument("--data", required=True)
    s.add_argument("--folds", type=int, default=3)
    s.add_argument("--fold", type=int, help="evaluate a single test fold (default: all folds)")
    s.add_argument("--fold-seed", type=int, default=0)
    s.add_argument("--robust", action="store_true", help="99th-percentile white patch")
    s.add_argument("--resize-half", action="store_true", help="halve test images before the model")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, help="report JSON path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("correct", help="white-balance one CCRAW image into a display PPM")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--ckpt")
    g.add_argument("--oracle-label", metavar="R,G,B")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resize-half", action="store_true")
    s.set_defaults(func=cmd_correct)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("params", help="parameter counts at toy and paper scale")
    s.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, RelightError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
