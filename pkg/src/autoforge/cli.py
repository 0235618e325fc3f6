"""Command-line entry point.

Subcommands: train, generate, evaluate, gradcheck. Exit codes are fixed
so wrapper scripts can branch on failure class:

    1 configuration error (also: unreadable checkpoint)
    2 data / I-O error
    3 numerical abort during training
    4 classifier adapter protocol violation
    5 gradient check failure

Set AF_THREADS=1 to pin the BLAS pool to one thread, which is the
configuration under which runs are guaranteed bit-reproducible.
"""

import argparse
import os
import sys
from pathlib import Path

from . import evaluate as ev
from .checkpoint import load_checkpoint
from .errors import (
    AdapterError,
    AutoforgeError,
    CheckpointFormatError,
    ConfigError,
    DataError,
    NumericalError,
)
from .runconfig import RunConfig
from .tensor import set_thread_cap

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_ADAPTER = 4
EXIT_GRADCHECK = 5


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    from .data import scan_directory
    from .training import train

    try:
        run = RunConfig.resolve(args.config, args.set)
        scale = run.model_scale()
        config = run.train_config()
        aug = run.augment_config()
        resume = load_checkpoint(args.resume) if args.resume else None
    except (ConfigError, CheckpointFormatError) as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        records = scan_directory(Path(args.data))
        if not records:
            return _fail(EXIT_DATA, f"no images found under {args.data}")
    except DataError as e:
        return _fail(EXIT_DATA, str(e))
    out_dir = Path(args.out)
    run.write_echo(out_dir)
    try:
        train(records, scale, config, aug, out_dir, resume=resume)
    except NumericalError as e:
        return _fail(EXIT_NUMERICAL, str(e))
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except (DataError, CheckpointFormatError, OSError) as e:
        return _fail(EXIT_DATA, str(e))
    return 0


def cmd_generate(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointFormatError as e:
        return _fail(EXIT_CONFIG, str(e))
    cfg = ev.EvalConfig(num_sets=args.sets, set_size=args.count, seed=args.seed,
                        output_dir=Path(args.out))
    try:
        cfg.validate()
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        RunConfig.resolve(None, [f"num_sets={args.sets}", f"set_size={args.count}",
                                 f"seed={args.seed}"]).write_echo(Path(args.out))
        ev.generate_sets(ckpt, cfg)
    except (OSError, DataError) as e:
        return _fail(EXIT_DATA, str(e))
    except AutoforgeError as e:
        return _fail(EXIT_CONFIG, str(e))
    return 0


def cmd_evaluate(args) -> int:
    adapter = ev.ClassifierAdapter(command=args.classifier_cmd, timeout=args.timeout,
                                   positive_threshold=args.threshold)
    try:
        report = ev.evaluate_directory(Path(args.images), adapter)
    except AdapterError as e:
        return _fail(EXIT_ADAPTER, str(e))
    except (OSError, AutoforgeError) as e:
        return _fail(EXIT_DATA, str(e))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())
    print(f"mean acceptance rate: {report.mean_accuracy:.3f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import standard_suite

    results = standard_suite(tol=args.tol)
    failures = [r for r in results if not r.passed]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status}  {r.name:<24} max_rel_err={r.max_rel_err:.3e}")
    if failures:
        print(f"{len(failures)} gradient check(s) failed at tol {args.tol:g}", file=sys.stderr)
        return EXIT_GRADCHECK
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autoforge",
                                description="Adversarial image synthesis engine")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train generator/discriminator on an image directory")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--data", required=True, help="directory of training images")
    t.add_argument("--out", required=True, help="output directory (checkpoints, metrics, samples)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("generate", help="sample image sets from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--count", type=int, default=100, help="images per set")
    g.add_argument("--sets", type=int, default=10, help="number of sets")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("evaluate", help="score generated sets with an external classifier")
    e.add_argument("--images", required=True, help="directory containing set_* subdirectories")
    e.add_argument("--classifier-cmd", required=True,
                   help="command template; {dir} is replaced per set (or the dir is appended)")
    e.add_argument("--out", default="report.csv", help="report CSV path")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--timeout", type=float, default=300.0)
    e.set_defaults(fn=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    if "AF_THREADS" in os.environ:
        try:
            set_thread_cap(int(os.environ["AF_THREADS"]))
        except ValueError:
            return _fail(EXIT_CONFIG, f"AF_THREADS must be an integer, got {os.environ['AF_THREADS']!r}")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
