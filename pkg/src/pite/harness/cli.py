"""Command line entry point: ``pite {generate,train,benchmark,sweep,report}``.

Exit codes: 0 success, 1 configuration error, 2 runtime or training error,
3 benchmark finished with failed cells.
"""
import argparse
import json
import logging
import sys

from ..exceptions import ConfigError, PITEError
from . import runner
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

logger = logging.getLogger("pite")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override seed_base")
    common.add_argument("--jobs", type=int, default=1, help="parallel replications (default 1)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="pite", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write synthetic replications and a manifest")
    tr = sub.add_parser("train", parents=[common], help="fit PITE on one replication")
    tr.add_argument("--replication", type=int, default=0)
    sub.add_parser("benchmark", parents=[common], help="fit and evaluate every estimator on every replication")
    sw = sub.add_parser("sweep", parents=[common], help="PITE hyperparameter grid")
    sw.add_argument("--grid", help='JSON object, e.g. \'{"K": [3, 5, 8]}\'; defaults to the config\'s "sweep"')
    rp = sub.add_parser("report", parents=[common], help="re-render tables and collect representation dumps")
    rp.add_argument("results_dir", nargs="?", help="directory written by benchmark or sweep")
    return ap


def _run(args):
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if args.command == "report" and args.results_dir and not args.config:
        absent = runner.report(args.results_dir)
        return _report_status(absent)
    cfg = load_config(args.config, seed_base=args.seed)
    out = args.out or cfg.out

    if args.command == "generate":
        manifest = runner.generate(cfg, out)
        print(f"wrote {len(manifest['files'])} datasets to {out}")
        return EXIT_OK
    if args.command == "train":
        meta = runner.train(cfg, out, args.replication)
        print(f"trained {meta['epochs']} epochs (best {meta['best_epoch']}, "
              f"valid loss {meta['best_valid_loss']:.6g}); checkpoint in {out}")
        return EXIT_OK
    if args.command == "benchmark":
        agg, n_failed = runner.benchmark(cfg, out, jobs=args.jobs)
        sys.stdout.write(runner.render_table(agg))
        return _partial(n_failed)
    if args.command == "sweep":
        try:
            grid = json.loads(args.grid) if args.grid else None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--grid is not valid JSON: {exc}") from exc
        if grid is not None:
            cfg = cfg.with_overrides(sweep=grid)
        result, n_failed = runner.sweep(cfg, out, jobs=args.jobs)
        sys.stdout.write(runner.render_sweep(result))
        return _partial(n_failed)
    absent = runner.report(args.results_dir or out)
    return _report_status(absent)


def _partial(n_failed):
    if n_failed:
        print(f"{n_failed} cell(s) failed; see raw results", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _report_status(absent):
    for a in absent:
        print(f"absent: {a['source']} {a['estimator']} {a['setting']} rep {a['replication']}: {a['reason']}",
              file=sys.stderr)
    return EXIT_PARTIAL if absent else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PITEError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
