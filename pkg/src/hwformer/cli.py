"""Command-line entry point: ``hwformer {train,denoise,eval,bench,selftest}``.

Settings merge as preset defaults <- ``--config`` file <- flags. Exit codes:
0 success, 1 usage/configuration error, 2 data error, 3 numeric failure;
failures print one ``hwformer: error=<kind> reason=<text>`` line to stderr.
"""

from __future__ import annotations

import argparse
import ast
import contextlib
import logging
import os
import sys
from dataclasses import fields, replace

from .errors import ConfigError, DataError, NumericError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SECTIONS = ("model", "train", "eval")
EVAL_DEFAULTS = {"sigma": 25.0, "seed": 0, "tile": None, "overlap": 0}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_ints(text: str):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return values


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def read_config_file(path) -> dict:
    """Flat ``section.key=value`` lines; ``#`` starts a comment."""
    out: dict = {s: {} for s in SECTIONS}
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise ConfigError(f"{path}:{lineno}: expected model.|train.|eval.<key>=<value>")
        if name in out[section]:
            raise ConfigError(f"{path}:{lineno}: {key.strip()} set twice")
        out[section][name] = _parse_value(raw)
    return out


def _parse_sets(items) -> dict:
    out: dict = {s: {} for s in SECTIONS}
    for item in items or []:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if name in out[section] and out[section][name] != _parse_value(raw):
            raise ConfigError(f"--set {key} given twice with different values")
        out[section][name] = _parse_value(raw)
    return out


def resolve(args):
    """Merge preset, config file and flags into (ModelConfig, TrainConfig, eval dict)."""
    from .model import ModelConfig, preset
    from .training import TRAIN_PRESETS, TrainConfig

    layers = {s: {} for s in SECTIONS}
    if getattr(args, "config", None):
        layers = read_config_file(args.config)
    flag_values = {
        ("train", "sigma"): getattr(args, "sigma", None),
        ("eval", "sigma"): getattr(args, "sigma", None),
        ("train", "seed"): getattr(args, "seed", None),
        ("eval", "seed"): getattr(args, "seed", None),
        ("train", "epochs"): getattr(args, "epochs", None),
        ("train", "batch_size"): getattr(args, "batch", None),
        ("train", "base_lr"): getattr(args, "lr", None),
        ("train", "max_steps"): getattr(args, "max_steps", None),
        ("eval", "tile"): getattr(args, "tile", None),
        ("eval", "overlap"): getattr(args, "overlap", None),
    }
    sets = _parse_sets(getattr(args, "set", None))
    for (section, name), value in flag_values.items():
        if value is None:
            continue
        if name in sets[section] and sets[section][name] != value:
            raise ConfigError(f"--set {section}.{name} conflicts with its dedicated flag")
        sets[section][name] = value
    for section in SECTIONS:
        layers[section].update(sets[section])

    name = args.preset
    model_fields = {f.name for f in fields(ModelConfig)}
    train_fields = {f.name for f in fields(TrainConfig)}
    for section, known in (("model", model_fields), ("train", train_fields), ("eval", set(EVAL_DEFAULTS))):
        unknown = set(layers[section]) - known
        if unknown:
            raise ConfigError(f"unknown {section} settings: {sorted(unknown)}")
    try:
        model = preset(name, **layers["model"])
        train = replace(TRAIN_PRESETS[name], **layers["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    ev = dict(EVAL_DEFAULTS, **layers["eval"])
    return model, train, ev


def _echo(model=None, train=None, ev=None, extra=None):
    lines = []
    for prefix, cfg in (("model", model), ("train", train)):
        if cfg is not None:
            lines += [f"{prefix}.{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg)]
    for k, v in (ev or {}).items():
        lines.append(f"eval.{k}={v!r}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v!r}")
    for line in lines:
        print(f"# {line}", file=sys.stderr)


@contextlib.contextmanager
def _thread_limit(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import train

    model, tcfg, _ = resolve(args)
    _echo(model, tcfg, extra={"dataset": args.dataset, "out": args.out})
    log_path = args.log or os.fspath(args.out) + ".log"
    result = train(model, tcfg, args.dataset, out_path=args.out, log_path=log_path)
    last = result.history[-1] if result.history else {}
    print(f"trained {len(result.step_losses)} steps; final loss {last.get('loss', float('nan')):.6g}; "
          f"val PSNR {last.get('val_psnr', float('nan')):.3f} dB; checkpoint {args.out}")
    return EXIT_OK


def _load_model(path):
    from .checkpoint import load_checkpoint
    from .model import HWformer

    weights, _, _ = load_checkpoint(path)
    return HWformer(weights.config, weights)


def cmd_denoise(args) -> int:
    from .data import list_images
    from .evaluation import tile_denoise
    from .imageio import read_image, write_image

    model = _load_model(args.checkpoint)
    _, _, ev = resolve(args)
    _echo(model.config, ev={"tile": ev["tile"], "overlap": ev["overlap"]})
    if os.path.isdir(args.input):
        os.makedirs(args.out, exist_ok=True)
        jobs = [(os.path.join(args.input, n), os.path.join(args.out, n)) for n in list_images(args.input)]
    else:
        jobs = [(args.input, args.out)]
    for src, dst in jobs:
        image = read_image(src)
        tile = ev["tile"] or max(image.height, image.width)
        write_image(tile_denoise(model, image, tile, ev["overlap"]), dst)
        print(f"{src} -> {dst}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    model = _load_model(args.checkpoint)
    _, _, ev = resolve(args)
    _echo(model.config, ev=ev)
    report = evaluate(model, args.dataset, ev["sigma"], ev["seed"], ev["tile"], ev["overlap"],
                      model_id=os.path.basename(args.checkpoint))
    text = report.to_csv() if args.format == "csv" else report.to_table()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_rows, format_rows

    model, _, _ = resolve(args)
    _echo(model, extra={"windows": args.windows, "image": args.image})
    text = format_rows(bench_rows(model, args.windows, args.image), args.format)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = 0
    for name, ok, detail in run_selftest(args.seed or 0):
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
    print(f"{'ok' if not failures else 'failed'}: {failures} failing check(s)")
    return EXIT_OK if not failures else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hwformer", description="Heterogeneous window transformer denoiser.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, preset_default="toy"):
        p.add_argument("--preset", choices=("toy", "paper"), default=preset_default,
                       help=f"baked-in model/training defaults (default: {preset_default})")
        p.add_argument("--config", help="key=value settings file with model./train./eval. prefixes")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override any single setting; repeatable")
        p.add_argument("--threads", type=int, help="BLAS thread count; 1 is the reproducible mode "
                       "(fallback: HWF_THREADS)")
        p.add_argument("--seed", type=int, help="RNG seed for noise, crops and initialisation")

    p = sub.add_parser("train", help="train a model on a folder of PGM/PPM images")
    common(p)
    p.add_argument("dataset", help="directory of clean training images")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--log", help="metric log path (default: <out>.log)")
    p.add_argument("--sigma", type=float, help="noise std on the 0-255 scale")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--max-steps", type=int, dest="max_steps", help="stop after this many optimizer steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise an image or a folder of images")
    common(p)
    p.add_argument("input", help="noisy PGM/PPM file or directory")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--out", required=True, help="output file or directory")
    p.add_argument("--tile", type=int, help="tile size (default: whole image)")
    p.add_argument("--overlap", type=int, help="tile overlap in pixels")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="corrupt, denoise and score a folder of clean images")
    common(p)
    p.add_argument("dataset", help="directory of clean reference images")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--sigma", type=float, help="noise std on the 0-255 scale")
    p.add_argument("--tile", type=int, help="tile size (default: whole image)")
    p.add_argument("--overlap", type=int, help="tile overlap in pixels")
    p.add_argument("--format", choices=("table", "csv"), default="table", help="report format")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="parameter/FLOPs table across window sizes")
    common(p, preset_default="paper")
    p.add_argument("--windows", type=_csv_ints, default=[4, 6, 8, 48, 96], help="comma-separated window sizes")
    p.add_argument("--image", type=_csv_ints, default=[96], help="comma-separated square image sizes")
    p.add_argument("--format", choices=("table", "csv"), default="table", help="output format")
    p.add_argument("--out", help="also write the table here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def _fail(kind: str, exc: BaseException, code: int) -> int:
    reason = " ".join(str(exc).split()) or type(exc).__name__
    print(f"hwformer: error={kind} reason={reason}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        threads = args.threads
        if threads is None and os.environ.get("HWF_THREADS"):
            try:
                threads = int(os.environ["HWF_THREADS"])
            except ValueError:
                raise ConfigError("HWF_THREADS must be an integer") from None
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be positive")
        with _thread_limit(threads):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except DataError as exc:
        return _fail("data", exc, EXIT_DATA)
    except NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
