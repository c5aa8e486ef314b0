"""Command-line entry points: train, predict, evaluate, gradcheck, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Every failure prints a single ``error: <category>: <message>``
line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from PIL import Image

from . import config as config_mod
from . import data, gradcheck, infer, metrics, models, trainer
from .errors import ConfigError, DataError, NumericError
from .scheduler import ScoreTable

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default, which collides with the
    # data-error code; route usage problems to exit 1 instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_scenes(pairs, require_labels: bool, normalizer=None):
    scenes = []
    for image, label in pairs:
        if require_labels and label is None:
            raise DataError(f"scene {image} has no label file")
        scene = data.load_scene(image, label)
        if normalizer is not None:
            scene = data.apply_normalizer(scene, normalizer)
        scenes.append(scene)
    return scenes


def _load_normalizer(path):
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return data.Normalizer.from_dict(json.load(f))
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot read normalizer {path}: {e}")


def _load_table(path) -> ScoreTable:
    try:
        return ScoreTable.load(path)
    except OSError as e:
        raise DataError(f"cannot read score table {path}: {e}")
    except ValueError as e:
        raise DataError(str(e))


def _pick_size(args) -> int | None:
    if getattr(args, "size", None) is not None:
        if args.size < 1:
            raise ConfigError(f"--size must be >= 1, got {args.size}")
        return args.size
    if getattr(args, "score_table", None):
        table = _load_table(args.score_table)
        if table.total_updates() == 0:
            raise DataError(f"score table {args.score_table} holds no scores yet")
        return table.best_size()
    return None


def cmd_train(args) -> int:
    setup = config_mod.load_config(args.config)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)

    train_scenes = _load_scenes(setup.train_pairs, require_labels=True)
    val_scenes = _load_scenes(setup.val_pairs, require_labels=True)
    normalizer = None
    if setup.normalize:
        normalizer = data.fit_normalizer(train_scenes)
        train_scenes = [data.apply_normalizer(s, normalizer) for s in train_scenes]
        val_scenes = [data.apply_normalizer(s, normalizer) for s in val_scenes]
        with open(run_dir / "normalizer.json", "w", encoding="utf-8") as f:
            json.dump(normalizer.to_dict(), f, sort_keys=True)
            f.write("\n")

    try:
        spec = models.build(setup.model, setup.bands, setup.classes, setup.widths)
    except ValueError as e:
        raise ConfigError(str(e))
    params = models.init_params(spec, setup.train_config.seed)
    (run_dir / "config.txt").write_text(
        config_mod.render_config(setup), encoding="utf-8"
    )

    result = trainer.train(
        setup.train_config,
        train_scenes,
        spec,
        params,
        run_dir=run_dir,
        val_scenes=val_scenes,
    )
    print(f"run directory: {run_dir}")
    if result.table.total_updates():
        print(f"best_size {result.table.best_size()}")
    else:
        print("best_size none")
    return EXIT_OK


def cmd_predict(args) -> int:
    spec, params = models.load_params(args.weights)
    size = _pick_size(args)
    if size is None:
        raise ConfigError("provide --size or --score-table to choose the patch size")
    normalizer = _load_normalizer(args.normalizer)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    palette = infer.palette_for(spec.num_classes)
    for image in args.images:
        scene = data.load_scene(image)
        if normalizer is not None:
            scene = data.apply_normalizer(scene, normalizer)
        result = infer.predict_scene(
            spec, params, scene.bands, size, args.overlap, keep_probabilities=args.probs
        )
        stem = out_dir / scene.scene_id
        data.save_rslb(f"{stem}_classes.rslb", result.classes)
        Image.fromarray(infer.render_map(result.classes, palette)).save(
            f"{stem}_classes.png"
        )
        if args.probs:
            data.save_rsrf(f"{stem}_probs.rsrf", result.probabilities)
        print(f"{image} -> {stem}_classes.rslb (size {size})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec, params = models.load_params(args.weights)
    pairs = []
    for entry in args.scenes:
        if ":" not in entry:
            raise ConfigError(f"scene {entry!r} must be image:labels")
        image, label = entry.split(":", 1)
        pairs.append((image, label))
    normalizer = _load_normalizer(args.normalizer)
    scenes = _load_scenes(pairs, require_labels=True, normalizer=normalizer)

    if args.sweep:
        if not args.score_table:
            raise ConfigError("--sweep needs --score-table for the candidate sizes")
        sizes = list(_load_table(args.score_table).sizes)
    else:
        size = _pick_size(args)
        if size is None:
            raise ConfigError("provide --size or --score-table to choose the patch size")
        sizes = [size]

    bundles = {}
    for size in sizes:
        bundle = trainer.evaluate(spec, params, scenes, size, args.overlap)
        bundles[size] = bundle
        print(metrics.format_report(bundle, size), end="")
    if args.csv:
        Path(args.csv).write_text(metrics.metrics_csv(bundles), encoding="utf-8")
        print(f"metrics csv: {args.csv}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.arch == "all":
        archs = None
    else:
        archs = [args.arch]
    results = gradcheck.run_all(args.seed, archs, corrupt=args.corrupt)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}: max relative error {r.error:.3e} (tol {r.tolerance:g}) {status}")
    if all(r.passed for r in results):
        print("gradient check passed")
        return EXIT_OK
    raise NumericError("gradient check failed")


def cmd_synth(args) -> int:
    from .synth import SynthConfig, write_dataset

    try:
        cfg = SynthConfig(
            num_scenes=args.scenes,
            size=args.size,
            cell=args.cell,
            period=args.period,
            noise=args.noise,
            bands=args.bands,
            void_frac=args.void_frac,
        )
    except ValueError as e:
        raise ConfigError(str(e))
    manifest = write_dataset(args.out, cfg, args.seed)
    print(f"wrote {len(manifest['scenes'])} scenes to {args.out}")
    print(f"min separable patch size: {manifest['min_separable_patch']}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="dilseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run the dynamic training loop from a config file")
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", required=True, help="run directory for checkpoints/history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="dense prediction of whole scenes")
    p.add_argument("--weights", required=True)
    p.add_argument("--score-table", help="pick the patch size with the best score")
    p.add_argument("--size", type=int, help="override the patch size")
    p.add_argument("--normalizer", help="normalizer.json saved by training")
    p.add_argument("--overlap", type=float, default=0.0, help="tile overlap fraction")
    p.add_argument("--probs", action="store_true", help="also write probability rasters")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("images", nargs="+", help="scene images (RSRF or PNG)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against labeled scenes")
    p.add_argument("--weights", required=True)
    p.add_argument("--score-table")
    p.add_argument("--size", type=int)
    p.add_argument("--sweep", action="store_true", help="one metrics row per candidate size")
    p.add_argument("--normalizer")
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--csv", help="also write the metrics as CSV")
    p.add_argument("scenes", nargs="+", help="image:labels pairs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--arch", default="all", help="architecture name or 'all'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--corrupt",
        choices=gradcheck.CORRUPTIBLE,
        help="self-test hook: skew one backward pass so the check must fail",
    )
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic two-texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--size", type=int, default=192)
    p.add_argument("--cell", type=int, default=64)
    p.add_argument("--period", type=int, default=36)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--bands", type=int, default=3)
    p.add_argument("--void-frac", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
