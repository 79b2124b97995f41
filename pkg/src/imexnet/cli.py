"""``imexnet`` command-line driver.

Subcommands: generate, propagate, train, eval, stability, rerun.
Exit codes: 0 success, 2 usage, 3 data/format error, 4 numeric failure.
Every command that writes files also writes ``manifest.txt`` next to them;
``imexnet rerun --manifest PATH`` replays the recorded invocation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import ConfigError, format_network, format_sections, parse_network, parse_sections
from .layers import (DEMO_IMPLICIT_H, DEMO_SEED, MODES, demo_network, demo_params, parameter_count,
                     receptive_field_probe)
from .qtips import QTDS_VERSION, FormatError, generate_split, read_qtds, write_qtds
from .stability import UNBOUNDED, stability_grid
from .tensor import NumericFailure
from .train import class_weights, evaluate, train

log = logging.getLogger("imexnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.txt"


class UsageError(Exception):
    """Invalid argument values (exit code 2)."""


class DataError(Exception):
    """Unusable input data (exit code 3)."""


def _power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)


def _write_manifest(out_dir: Path, args, outputs: dict, extra=()) -> Path:
    run = {"command": args.command}
    for key, value in vars(args).items():
        if key in ("command", "func", "verbose") or value is None:
            continue
        run[key] = str(Path(value).resolve()) if isinstance(value, Path) else _fmt(value)
    sections = [("run", run),
                ("formats", {"qtds": QTDS_VERSION, "tnsr": formats.TNSR_VERSION,
                             "ckpt": formats.CKPT_VERSION}),
                ("outputs", {k: str(Path(v).resolve()) for k, v in outputs.items()}),
                *extra]
    path = out_dir / MANIFEST
    path.write_text(format_sections(sections))
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    if args.n < 1 or args.val < 1:
        raise UsageError("--n and --val must be positive")
    if not _power_of_two(args.size) or args.size < 8:
        raise UsageError(f"--size must be a power of two >= 8, got {args.size}")
    args.out.mkdir(parents=True, exist_ok=True)
    ds_train, ds_val = generate_split(args.n, args.val, args.seed, args.size)
    paths = {"train": args.out / "train.qtds", "val": args.out / "val.qtds"}
    write_qtds(ds_train, paths["train"])
    write_qtds(ds_val, paths["val"])
    _write_manifest(args.out, args, paths)
    print(f"wrote {args.n} training and {args.val} validation samples ({args.size}x{args.size}) "
          f"to {args.out}")
    return EXIT_OK


def cmd_propagate(args) -> int:
    if not _power_of_two(args.size) or args.size < 4:
        raise UsageError(f"--size must be a power of two >= 4, got {args.size}")
    if args.layers < 0:
        raise UsageError("--layers must be non-negative")
    if not args.eps > 0:
        raise UsageError("--eps must be positive")
    h = args.h if args.h is not None else (1.0 if args.mode == "explicit" else DEMO_IMPLICIT_H)
    if not h > 0:
        raise UsageError("--h must be positive")
    args.h = h
    net = demo_network(args.mode, args.layers, h, args.size)
    rep = receptive_field_probe(net, demo_params(net), args.eps)
    args.out.mkdir(parents=True, exist_ok=True)
    outputs, norm = {}, {}
    rows = [("layer", "coverage_fraction", "max_radius")]
    for j, (resp, (cov, rad)) in enumerate(zip(rep.responses, rep.per_layer)):
        name = f"layer_{j:03d}"
        lo, hi = formats.write_pgm(resp, args.out / f"{name}.pgm")
        outputs[name] = args.out / f"{name}.pgm"
        norm[name] = f"{lo!r} {hi!r}"
        rows.append((j, repr(cov), rad))
    outputs["coverage"] = args.out / "coverage.csv"
    _write_csv(outputs["coverage"], rows)
    _write_manifest(args.out, args, outputs,
                    [("demo", {"seed": DEMO_SEED, "width": net.stages[0].width}),
                     ("normalization", norm)])
    print(f"mode={args.mode} layers={args.layers} h={h!r}: coverage_fraction={rep.coverage_fraction!r} "
          f"max_radius={rep.max_radius}")
    return EXIT_OK


def _load_network(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text ({exc})") from None
    return parse_network(text, str(path))


def _weights(ds, what):
    try:
        return class_weights(ds)
    except ValueError as exc:
        raise DataError(f"{what}: {exc}") from None


def cmd_train(args) -> int:
    if args.epochs < 0 or args.batch < 1 or not args.lr >= 0:
        raise UsageError("--epochs must be >= 0, --batch >= 1 and --lr >= 0")
    net = _load_network(args.config)
    ds_train = read_qtds(args.data / "train.qtds")
    val_path = args.data / "val.qtds"
    ds_val = read_qtds(val_path) if val_path.exists() else None
    if not _power_of_two(ds_train.size):
        raise DataError(f"image size {ds_train.size} is not a power of two")
    if args.batch > len(ds_train):
        raise UsageError(f"--batch {args.batch} exceeds the {len(ds_train)} training samples")
    weights = _weights(ds_train, args.data / "train.qtds")
    args.out.mkdir(parents=True, exist_ok=True)
    params, history = train(net, ds_train, ds_val, args.epochs, args.lr, args.batch, args.seed,
                            weights=weights, callback=lambda r: log.info("%s", r))
    outputs = {"checkpoint": args.out / "model.ckpt", "metrics": args.out / "metrics.csv",
               "network": args.out / "network.cfg"}
    formats.write_checkpoint(net, params, outputs["checkpoint"])
    _write_csv(outputs["metrics"], [("epoch", "split", "loss", "miou", "accuracy")] +
               [(r.epoch, r.split, repr(r.loss), repr(r.miou), repr(r.accuracy)) for r in history])
    outputs["network"].write_text(format_network(net))
    source = args.config.resolve()
    args.config = outputs["network"]  # replay from the resolved copy, not the editable source
    _write_manifest(args.out, args, outputs,
                    [("source", {"config": str(source)}),
                     ("class_weights", {str(i): repr(float(w)) for i, w in enumerate(weights)})])
    last = history[-1] if history else None
    if last is not None:
        print(f"epoch {last.epoch} {last.split}: loss={last.loss:.4f} miou={last.miou:.4f} "
              f"accuracy={last.accuracy:.2f}")
    print(f"wrote {outputs['checkpoint']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, params = formats.read_checkpoint(args.checkpoint)
    if args.data.is_dir():
        ds = read_qtds(args.data / f"{args.split}.qtds")
        wsrc = args.data / "train.qtds"
        weights = _weights(read_qtds(wsrc) if wsrc.exists() else ds, wsrc if wsrc.exists() else args.data)
    else:
        ds = read_qtds(args.data)
        weights = _weights(ds, args.data)
    m = evaluate(net, params, ds, weights, args.batch)
    n = parameter_count(net)
    print(f"{'parameters':>10}  {'mean IOU':>8}  {'loss':>8}  {'accuracy':>8}")
    print(f"{n:>10}  {m.miou:>8.4f}  {m.loss:>8.4f}  {m.accuracy:>8.2f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "eval.csv"
        _write_csv(path, [("parameters", "miou", "loss", "accuracy"),
                          (n, repr(m.miou), repr(m.loss), repr(m.accuracy))])
        _write_manifest(args.out, args, {"eval": path})
    return EXIT_OK


def cmd_stability(args) -> int:
    if args.re1 > 0:
        raise UsageError(f"--re1 {args.re1} > 0: positive real parts are outside the stability hypothesis")
    if args.re0 > args.re1 or args.im0 > args.im1:
        raise UsageError("empty range: need re0 <= re1 and im0 <= im1")
    if args.n < 1 or not args.h > 0:
        raise UsageError("--n must be >= 1 and --h > 0")
    if args.alpha == "auto":
        alpha = "auto"
    else:
        try:
            alpha = float(args.alpha)
        except ValueError:
            raise UsageError(f"--alpha must be a number or 'auto', got {args.alpha!r}") from None
        if alpha < 0:
            raise UsageError("--alpha must be non-negative")
    rep = stability_grid((args.re0, args.re1), (args.im0, args.im1), args.n, args.h, alpha)
    summary = [f"alpha = {'unbounded' if rep.unbounded else repr(rep.alpha)}"]
    if rep.unbounded:
        summary.append("no finite alpha bounds the IMEX factor: some lambda lies on the imaginary axis "
                       "(IMEX column reported in the alpha -> infinity limit)")
    summary.append(f"max factor_imex = {rep.max_imex!r}")
    summary.append(f"max factor_fe = {float(rep.factor_fe.max())!r}")
    if args.out is None:
        csv.writer(sys.stdout, lineterminator="\n").writerows(rep.csv_rows())
        for line in summary:
            print(line, file=sys.stderr)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(args.out, rep.csv_rows())
        _write_manifest(args.out.parent, args, {"report": args.out},
                        [("result", {"alpha": "unbounded" if rep.alpha == UNBOUNDED else repr(rep.alpha)})])
        for line in summary:
            print(line)
    return EXIT_OK


def cmd_rerun(args) -> int:
    sections = {s.name: s.values for s in parse_sections(args.manifest.read_text(), str(args.manifest))}
    run = dict(sections.get("run", {}))
    command = run.pop("command", None)
    if command not in COMMANDS or command == "rerun":
        raise ConfigError(f"{args.manifest}: no replayable command recorded")
    if args.out is not None:
        run["out"] = str(args.out)
    argv = [command]
    for key, value in run.items():
        argv += [f"--{key}", value]
    log.info("replaying: %s", " ".join(argv))
    return main(argv)


COMMANDS = {"generate": cmd_generate, "propagate": cmd_propagate, "train": cmd_train,
            "eval": cmd_eval, "stability": cmd_stability, "rerun": cmd_rerun}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="imexnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write Q-tips training and validation sets")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--val", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("propagate", help="delta-response field-of-view demo")
    p.add_argument("--mode", choices=MODES, default="explicit")
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--h", type=float, default=None,
                   help=f"step size (default 1 explicit, {DEMO_IMPLICIT_H:g} implicit)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--eps", type=float, default=1e-12)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train a network on a generated dataset")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="directory with train.qtds (and val.qtds)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="shuffling seed")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset directory or .qtds file")
    p.add_argument("--split", default="val", help="split name when --data is a directory")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("stability", help="magnification factors on a grid of complex rates")
    p.add_argument("--re0", type=float, default=-10.0)
    p.add_argument("--re1", type=float, default=0.0)
    p.add_argument("--im0", type=float, default=-10.0)
    p.add_argument("--im1", type=float, default=10.0)
    p.add_argument("--n", type=int, default=21)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--alpha", default="5", help="implicit shift, or 'auto' for the smallest stable one")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="override the output location")

    for name, fn in COMMANDS.items():
        sub.choices[name].set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        # overflow surfaces as a NumericFailure from the finiteness checks, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except UsageError as exc:
        print(f"imexnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError, DataError, OSError) as exc:
        print(f"imexnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"imexnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
