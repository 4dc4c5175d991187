"""Command-line entry point ``saca``.

Exit codes: 0 on success, 1 on validation failure (bad config, shapes,
labels, malformed JSON, failed gradient check, usage errors), 2 on I/O
failure (missing or unreadable files, malformed STF).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sacanet import stf
from sacanet.errors import ConfigError, InputError
from sacanet.gradcheck import SUITES, run_all
from sacanet.metrics import ConfusionMatrix, metrics
from sacanet.pipeline import SacaConfig, SacaModel, saca_forward
from sacanet.profiler import emit_report, profile
from sacanet.tensor import Tensor
from sacanet.train import toy_splits, train_toy

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage mistakes are validation failures, not I/O errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def load_config(path) -> SacaConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return SacaConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _key(path: Path) -> str:
    return path.name.split(".", 1)[0]


def read_dataset(directory) -> list[tuple[np.ndarray, np.ndarray]]:
    """``NNNN.image.stf`` / ``NNNN.label.stf`` pairs, sorted by their shared prefix."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    images = {_key(p): p for p in directory.glob("*.image.stf")}
    labels = {_key(p): p for p in directory.glob("*.label.stf")}
    if set(images) != set(labels):
        raise InputError(f"unpaired samples in {directory}: {sorted(set(images) ^ set(labels))}")
    out = []
    for key in sorted(images):
        image = stf.load(images[key]).astype(np.float64)
        label = stf.load(labels[key]).astype(np.int64)
        if image.ndim != 3 or label.shape != image.shape[:2]:
            raise InputError(f"sample {key}: image {list(image.shape)} vs label {list(label.shape)}")
        out.append((image, label))
    return out


def write_dataset(directory, samples) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, (image, label) in enumerate(samples):
        stf.save(directory / f"{i:04d}.image.stf", image, "f64")
        stf.save(directory / f"{i:04d}.label.stf", label, "u8")


def cmd_train_toy(args) -> int:
    config = load_config(args.config)
    if args.data:
        train, held_out = read_dataset(args.data), None
    else:
        train, held_out = toy_splits(config)
    if args.eval_data:
        held_out = read_dataset(args.eval_data)
    model, trace = train_toy(config, train, held_out)
    _write_json(args.out, trace.to_dict())
    if args.save_params:
        stf.save_named(args.save_params, model.state(), config=config.to_dict())
    m = trace.train_metrics
    print(f"final loss {trace.losses[-1]:.4f}  OA {m['OA']:.4f}  mIoU {m['mIoU']:.4f}  AF {m['AF']:.4f}")
    return EXIT_OK


def cmd_make_toy(args) -> int:
    config = load_config(args.config)
    train, held_out = toy_splits(config)
    write_dataset(args.out, held_out if args.split == "eval" else train)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"{d}: not a directory")
    gts = {_key(p): p for p in gt_dir.glob("*.stf")}
    preds = {_key(p): p for p in pred_dir.glob("*.stf")}
    if not gts:
        raise InputError(f"no .stf files in {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise InputError(f"no prediction for {missing}")
    pairs = []
    for key in sorted(gts):
        pred, gt = stf.load(preds[key]), stf.load(gts[key]).astype(np.int64)
        if pred.ndim == gt.ndim + 1:
            pred = pred.argmax(axis=-1)
        elif pred.ndim != gt.ndim:
            raise InputError(f"{key}: prediction {list(pred.shape)} does not fit label {list(gt.shape)}")
        pairs.append((pred.astype(np.int64), gt))
    k = args.classes
    if k is None:
        seen = [a[a != 255].max(initial=-1) for pair in pairs for a in pair]
        k = int(max(seen)) + 1
    cm = ConfusionMatrix.empty(k)
    for pred, gt in pairs:
        cm.update(pred, gt)
    report = {**metrics(cm), "classes": k, "images": len(pairs), "confusion": cm.counts.tolist()}
    _write_json(args.report, report)
    print(f"OA {report['OA']:.4f}  mIoU {report['mIoU']:.4f}  AF {report['AF']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    modules = tuple(SUITES) if args.module == "all" else (args.module,)
    results = run_all(modules, range(args.seeds))
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.suite:10s} seed {r.seed}  {r.case:40s} rel_err {r.error:.2e} (tol {r.tol:.0e})")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_INVALID


def cmd_forward(args) -> int:
    state, config_dict = stf.load_named(args.params)
    if config_dict is None:
        raise ConfigError(f"{args.params}: no config in parameter file")
    config = SacaConfig.from_dict(config_dict)
    model = SacaModel.init(config)
    model.load_state(state)
    image = stf.load(args.image).astype(np.float64)
    if image.shape != (config.height, config.width, 3):
        raise InputError(f"image shape {list(image.shape)} != [{config.height}, {config.width}, 3]")
    logits, _ = saca_forward(Tensor(image), model)
    stf.save(args.out, logits.data, args.dtype)
    return EXIT_OK


def cmd_profile(args) -> int:
    text = emit_report(profile(load_config(args.config)), args.format)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saca", description="Scene-aware class attention toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train on the synthetic dataset (or a directory of STF pairs)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="trace JSON")
    p.add_argument("--data", help="directory of NNNN.image.stf / NNNN.label.stf")
    p.add_argument("--eval-data", help="held-out directory in the same layout")
    p.add_argument("--save-params", help="write trained parameters to this STF file")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("make-toy", help="write the synthetic dataset as STF pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "eval"), default="train")
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("eval", help="AF / mIoU / OA of predictions against labels")
    p.add_argument("--pred", required=True, help="directory of label maps [H, W] or logits [H, W, K]")
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--module", choices=("all", *SUITES), default="all")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("forward", help="run the network on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("profile", help="analytic params / FLOPs / memory")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        # STFError is an OSError too
        print(f"saca: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # ConfigError, InputError, DimensionError and JSONDecodeError
        print(f"saca: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
