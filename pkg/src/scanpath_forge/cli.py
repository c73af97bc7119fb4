"""Command line entry point: ``scanpath-forge {synth|train|eval|compare|render}``.

Exit codes: 0 success, 1 usage or validation error, 2 I/O error, 3 numeric failure.

Training config (JSON)::

    {"train": {...TrainConfig fields...},
     "generator": {...GeneratorConfig fields...},
     "discriminator": {...DiscriminatorConfig fields...},
     "checkpoint_every": 100,
     "steps": 2000,               # optional, overrides train.max_steps
     "features": "feats.bin"}     # optional external feature file

Scanpath files (``compare``/``render``) are JSON objects::

    {"image_id": "img_0000", "observer_id": "obs_00",
     "screen_w": 64, "screen_h": 64, "fixations": [[x, y], [x, y, t_ms], ...]}
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from .core import Scanpath, validate_scanpath
from .data import (
    DatasetRecord,
    SyntheticSpec,
    generate_synthetic,
    import_features,
    load_dataset,
    load_image,
    load_saliency,
    uniform_random_scanpath,
    write_synthetic,
)
from .errors import (
    CorruptCheckpoint,
    MissingImage,
    NonFiniteLoss,
    ParseError,
    RecordError,
    ScanpathForgeError,
    ValidationError,
)
from .evaluation import evaluate_dataset
from .metrics import multimatch
from .models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, predict_scanpath
from .render import scanpath_svg
from .training import Trainer, TrainConfig, TrainItem, load_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- file helpers --------------------------------------------------------------


def scanpath_to_json(sp: Scanpath) -> dict:
    return {
        "image_id": sp.image_id,
        "observer_id": sp.observer_id,
        "screen_w": sp.screen_w,
        "screen_h": sp.screen_h,
        "fixations": [[f.x, f.y] if f.t_ms is None else [f.x, f.y, f.t_ms] for f in sp.fixations],
    }


def scanpath_from_json(d: dict) -> Scanpath:
    try:
        fix = d["fixations"]
        if any(len(f) not in (2, 3) for f in fix):
            raise ValidationError("fixations must be [x, y] or [x, y, t_ms]")
        sp = Scanpath.from_xy(
            [f[:2] for f in fix],
            int(d["screen_w"]),
            int(d["screen_h"]),
            str(d.get("image_id", "")),
            str(d.get("observer_id", "")),
            t_ms=[f[2] if len(f) == 3 else None for f in fix],
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed scanpath file: {e}") from None
    validate_scanpath(sp)
    return sp


def read_scanpath(path: str | Path) -> Scanpath:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: {e}") from None
    return scanpath_from_json(d)


def _dataset_path(data: str | Path) -> Path:
    p = Path(data)
    return p / "dataset.jsonl" if p.is_dir() else p


def _load_records(data: str | Path) -> tuple[list[DatasetRecord], Path]:
    path = _dataset_path(data)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return load_dataset(path), path.parent


# -- commands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.images < 1 or args.observers < 1:
        raise UsageError("--images and --observers must be >= 1")
    spec = SyntheticSpec(
        n_blobs=args.blobs,
        image_size=(args.size, args.size),
        n_observers=args.observers,
        obs_noise=args.obs_noise,
        center_spread=args.center_spread,
    )
    items = generate_synthetic(spec, args.images, seed=args.seed)
    path = write_synthetic(items, args.out)
    n_sp = sum(len(it.record.observers) for it in items)
    print(f"{len(items)} records, {n_sp} scanpaths -> {path}")
    return EXIT_OK


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - {"train", "generator", "discriminator", "checkpoint_every", "steps", "features"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _train_items(records, base, gcfg: GeneratorConfig, features=None) -> list[TrainItem]:
    items = []
    for rec in records:
        if features is not None:
            items.append(TrainItem(None, rec.pool(), features[rec.image_id]))
            continue
        img = load_image(rec, base)
        if img.shape[:2] != tuple(gcfg.image_size):
            raise UsageError(f"image {rec.image_id} is {img.shape[:2]}, generator expects {tuple(gcfg.image_size)}")
        items.append(TrainItem(img, rec.pool()))
    return items


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    records, base = _load_records(args.data)
    if not records:
        raise FileNotFoundError(f"dataset {args.data} is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    telemetry = out / "telemetry.jsonl"
    ckpt_dir = out / "checkpoints"
    try:
        if args.resume:
            ck = load_checkpoint(args.resume)
            gcfg = ck.gen.config
            features = None
            if cfg.get("features"):
                features = import_features(cfg["features"], (gcfg.feature_channels, *gcfg.feature_size))
            trainer = Trainer.resume(args.resume, _train_items(records, base, gcfg, features), dump_dir=out)
        else:
            tcfg = TrainConfig.from_dict(cfg.get("train", {}))
            gcfg = GeneratorConfig.from_dict(cfg.get("generator", {}))
            dcfg = DiscriminatorConfig.from_dict(cfg.get("discriminator", {}))
            features = None
            if cfg.get("features"):
                features = import_features(cfg["features"], (gcfg.feature_channels, *gcfg.feature_size))
            gen = Generator(gcfg, seed=tcfg.seed)
            disc = Discriminator(dcfg, seed=tcfg.seed)
            trainer = Trainer(gen, disc, _train_items(records, base, gcfg, features), tcfg, dump_dir=out)
            if telemetry.exists():
                telemetry.unlink()
    except (TypeError, ValueError) as e:
        if isinstance(e, ScanpathForgeError):
            raise
        raise UsageError(f"bad config: {e}") from None
    steps = args.steps if args.steps is not None else cfg.get("steps")
    n_steps = None if steps is None else max(0, int(steps) - trainer.step)
    try:
        reports = trainer.run(n_steps, telemetry, ckpt_dir, int(cfg.get("checkpoint_every", 0)))
    except NonFiniteLoss as e:
        print(f"non-finite loss at step {e.step}; diagnostics: {e.dump_path}", file=sys.stderr)
        return EXIT_NUMERIC
    last = reports[-1] if reports else None
    msg = f"trained to step {trainer.step}"
    if last is not None:
        msg += f" (d_loss={last.d_loss:.4f}, g_loss={last.g_loss:.4f})"
    print(f"{msg}; checkpoint {ckpt_dir / 'last.json'}")
    return EXIT_OK


def _predictor(args, base):
    kind = args.predictor
    if kind == "model":
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required for the model predictor")
        ck = load_checkpoint(args.checkpoint)
        gen = ck.gen if args.weights == "live" else ck.predictor
        seq_len = args.seq_len or (ck.train_config.seq_len if ck.train_config else gen.config.seq_len)
        features = None
        if args.features:
            g = gen.config
            features = import_features(args.features, (g.feature_channels, *g.feature_size))

        def predict(rec: DatasetRecord) -> Scanpath:
            if features is not None:
                return predict_scanpath(
                    gen, None, rec.screen_w, rec.screen_h, seq_len, rec.image_id, features[rec.image_id][None]
                )
            return predict_scanpath(gen, load_image(rec, base), rec.screen_w, rec.screen_h, seq_len, rec.image_id)

        return predict
    if kind == "observer":
        return lambda rec: rec.observers[0]
    if kind == "random":

        def predict(rec: DatasetRecord) -> Scanpath:
            rng = np.random.default_rng([args.seed, zlib.crc32(rec.image_id.encode())])
            n = args.seq_len or len(rec.observers[0])
            return uniform_random_scanpath(rng, n, rec.screen_w, rec.screen_h, rec.image_id)

        return predict
    raise UsageError(f"unknown predictor {kind!r}")


def cmd_eval(args) -> int:
    records, base = _load_records(args.data)
    if not records:
        raise FileNotFoundError(f"dataset {args.data} is empty")
    predict = _predictor(args, base)
    by_id = {rec.image_id: rec for rec in records}
    saliency = None
    if args.saliency == "stored":
        saliency = [load_saliency(rec, base) for rec in records]
    preds = {}

    def predict_pool(pool):
        sp = predict(by_id[pool.image_id])
        preds[pool.image_id] = sp
        return sp

    report = evaluate_dataset(
        [rec.pool() for rec in records],
        predict_pool,
        saliency,
        q=args.q,
        mm_reduce=args.mm_reduce,
        exclude_predicted_observer=args.predictor == "observer",
    )
    report["settings"] = {"predictor": args.predictor, "weights": args.weights, "mm_reduce": args.mm_reduce, "q": args.q, "saliency": args.saliency}
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1) + "\n")
    if args.predictions:
        pdir = Path(args.predictions)
        pdir.mkdir(parents=True, exist_ok=True)
        for image_id, sp in preds.items():
            (pdir / f"{image_id}.json").write_text(json.dumps(scanpath_to_json(sp)) + "\n")
    agg = report["aggregate"]
    print(" ".join(f"{k}={v:.4f}" for k, v in agg.items()))
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = read_scanpath(args.a), read_scanpath(args.b)
    names = ("mm_shape", "mm_direction", "mm_length", "mm_position", "mm_mean")
    scores = multimatch(a, b, args.amplitude_threshold, args.direction_threshold)
    print(json.dumps(dict(zip(names, scores))))
    return EXIT_OK


def cmd_render(args) -> int:
    sp = read_scanpath(args.scanpath)
    svg = scanpath_svg(sp, image_href=args.image, radius=args.radius)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out} ({len(sp)} fixations)")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scanpath-forge", description="Adversarial scanpath prediction toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic blob dataset")
    s.add_argument("--images", type=int, default=20)
    s.add_argument("--observers", type=int, default=15)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="synthetic")
    s.add_argument("--blobs", type=int, default=2)
    s.add_argument("--size", type=int, default=64, help="square image side in pixels")
    s.add_argument("--obs-noise", type=float, default=0.04)
    s.add_argument("--center-spread", type=float, default=0.15)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train generator and discriminator")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--data", required=True, help="dataset directory or JSONL file")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--steps", type=int, help="stop at this global step")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="write a per-image metric report")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--predictor", choices=("model", "observer", "random"), default="model")
    e.add_argument("--weights", choices=("ema", "live"), default="ema", help="generator weights to evaluate")
    e.add_argument("--mm-reduce", choices=("mean", "max"), default="mean")
    e.add_argument("--saliency", choices=("pooled", "stored"), default="pooled")
    e.add_argument("--q", type=float, default=0.9)
    e.add_argument("--seq-len", type=int)
    e.add_argument("--seed", type=int, default=0, help="seed for the random predictor")
    e.add_argument("--features", help="external feature file for feature-trained checkpoints")
    e.add_argument("--predictions", help="directory for per-image predicted scanpath files")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="MultiMatch between two scanpath files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--amplitude-threshold", type=float)
    c.add_argument("--direction-threshold", type=float)
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("render", help="SVG overlay of a scanpath")
    r.add_argument("scanpath")
    r.add_argument("--image", help="background image reference embedded in the SVG")
    r.add_argument("--out", required=True)
    r.add_argument("--radius", type=float)
    r.set_defaults(func=cmd_render)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, RecordError, CorruptCheckpoint, MissingImage, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScanpathForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
