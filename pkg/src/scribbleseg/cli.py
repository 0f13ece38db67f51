"""Command-line entry point: ``scribbleseg {gen-data,corrupt,train,eval,analyze}``.

Errors print one line ``error <CODE>: <message>`` to stderr and exit
nonzero. Output goes under ``--out``, which defaults to
``$SCRIBBLESEG_OUT/<command>`` (or ``./runs/<command>``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import scribbledata as sd
from .config import ConfigError, apply_overrides, config_from_dict
from .gridtransform import TransformSpec
from .spectral import eigendecompose_transition, eigenvector_images
from .segnet import load_checkpoint
from .trainer import (TrainingDiverged, _to_input, entropy_map, evaluate, load_split, train,
                      variation_report)

OUT_ENV = "SCRIBBLESEG_OUT"

EXIT_CODES = {"E_CONFIG": 2, "E_IO": 3, "E_INVALID": 4, "E_DIVERGED": 5, "E_INTERNAL": 70}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / command


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def corpus_config(path, overrides) -> sd.CorpusConfig:
    known = {f.name for f in fields(sd.CorpusConfig)}
    data = apply_overrides(_read_json(path), overrides or [], known)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown corpus config keys {sorted(unknown)}")
    if "size" in data:
        data["size"] = tuple(data["size"])
    try:
        cfg = sd.CorpusConfig(**data)
        sd.SceneSpec(0, cfg.max_objects, cfg.classes, cfg.size, cfg.color_jitter, cfg.noise, cfg.class_cue)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.n_train < 0 or cfg.n_val < 0 or not 1 <= cfg.min_objects <= cfg.max_objects:
        raise ConfigError("sample counts must be non-negative and 1 <= min_objects <= max_objects")
    return cfg


def corpus_stats(root) -> dict:
    manifest = sd.read_manifest(root)
    c = manifest["num_classes"]
    pixels = np.zeros(c, dtype=np.int64)
    labeled = total = 0
    for ids in manifest["splits"].values():
        for sample_id in ids:
            labels = sd.load_labels(root, sample_id)
            pixels += np.bincount(labels.ravel(), minlength=c)[:c]
            labeled += int((sd.load_scribbles(root, sample_id).labels != sd.IGNORE).sum())
            total += labels.size
    return {
        "splits": {k: len(v) for k, v in manifest["splits"].items()},
        "class_pixel_fraction": (pixels / max(total, 1)).round(4).tolist(),
        "scribble_coverage": round(labeled / max(total, 1), 4),
    }


def cmd_gen_data(args) -> dict:
    cfg = corpus_config(args.config, args.override)
    out = _out_dir(args, "gen-data")
    sd.generate_corpus(cfg, out)
    return {"corpus": str(out), **corpus_stats(out)}


def cmd_corrupt(args) -> dict:
    out = _out_dir(args, "corrupt")
    if not 0.0 <= args.rate <= 1.0:
        raise CliError("E_INVALID", f"rate must lie in [0, 1], got {args.rate}")
    manifest = sd.corrupt_corpus(args.corpus, out, args.mode, args.rate, args.seed, fixed=args.fixed)
    return {"corpus": str(out), "corruption": manifest["corruption"]}


def cmd_train(args) -> dict:
    cfg = config_from_dict(apply_overrides(_read_json(args.config), args.override or []))
    if not cfg.corpus:
        raise ConfigError("config needs a corpus path")
    out = _out_dir(args, "train")
    _, metrics = train(cfg, out, resume=args.resume)
    last = metrics[-1] if metrics else {}
    return {"out": str(out), "epochs": len(metrics), "val_miou": last.get("val_miou"),
            "alpha": last.get("alpha")}


def cmd_eval(args) -> dict:
    out = _out_dir(args, "eval")
    report = evaluate(args.checkpoint, args.corpus, args.split)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    (out / "eval.csv").write_text(report.to_csv())
    return {"out": str(out), "miou": report.miou}


def _save_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _parse_transform(text: str) -> TransformSpec:
    if text == "flip":
        return TransformSpec.flip()
    try:
        dx, dy = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise CliError("E_INVALID", f"transform must be 'flip' or 'dx,dy', got {text!r}") from exc
    return TransformSpec.translation(dx, dy)


def cmd_analyze(args) -> dict:
    out = _out_dir(args, "analyze")
    model, _ = load_checkpoint(args.checkpoint)
    manifest = sd.read_manifest(args.corpus)
    if manifest["num_classes"] != model.num_classes:
        raise ConfigError(f"checkpoint has {model.num_classes} classes, corpus has {manifest['num_classes']}")
    data = load_split(args.corpus, args.split)
    model.eval()
    chosen = range(min(args.images, len(data)))
    for i in chosen:
        sample_id = data.ids[i]
        raw, img = entropy_map(model, data.images[i])
        _save_png(out / "entropy" / f"{sample_id}.png", img)
        np.save(out / "entropy" / f"{sample_id}.npy", raw)
        with torch.no_grad():
            trace = model(_to_input(data.images[i:i + 1]))
        es = eigendecompose_transition(trace.p[0], trace.f_pre[0].double(), model.smm_scale)
        if args.k > es.eigenvalues.size:
            raise CliError("E_INVALID", f"k={args.k} exceeds the {es.eigenvalues.size} available eigenvectors")
        for j, vec in enumerate(eigenvector_images(es, args.k)):
            _save_png(out / "eigenvectors" / f"{sample_id}_k{j}.png", vec)
    phi = _parse_transform(args.transform)
    table = variation_report(model, data, phi)
    (out / "variation.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity", "relative_variation_percent"])
    for key in ("f_pre", "f_post", "p"):
        writer.writerow([key, f"{table[key]:.4f}"])
    (out / "variation.csv").write_text(buf.getvalue())
    return {"out": str(out), "images": len(chosen), "variation": table}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scribbleseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/{name})")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate the synthetic corpus")
    p.add_argument("--config", help="corpus config JSON")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")

    p = add("corrupt", cmd_corrupt, "write a scribble-dropped or scribble-shrunk copy of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("drop", "shrink"), required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixed", action="store_true", help="shrink every stroke by exactly the rate")

    p = add("train", cmd_train, "train a model")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--resume", action="store_true")

    p = add("eval", cmd_eval, "evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="val")

    p = add("analyze", cmd_analyze, "entropy maps, eigenvector images and the variation table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--images", type=int, default=4)
    p.add_argument("--transform", default="flip", help="'flip' or 'dx,dy' at image resolution")
    return parser


def _fail(code: str, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"error {code}: {text}", file=sys.stderr)
    return EXIT_CODES[code]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc)
    except ConfigError as exc:
        return _fail("E_CONFIG", exc)
    except TrainingDiverged as exc:
        return _fail("E_DIVERGED", exc)
    except OSError as exc:
        return _fail("E_IO", f"{exc.strerror or exc}: {exc.filename}" if exc.filename else exc)
    except ValueError as exc:
        return _fail("E_INVALID", exc)
    except Exception as exc:  # noqa: BLE001
        return _fail("E_INTERNAL", f"{type(exc).__name__}: {exc}")
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
