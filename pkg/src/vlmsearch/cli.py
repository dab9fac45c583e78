"""Command-line entry point.

Subcommands::

    run       --config PATH [--trace DIR] [--out PATH] [--seed N]
    gen-trace --spec PATH --out DIR --seed N
    cka       --in DIR --out PATH
    report    --in PATH [--format text|csv]

Errors print ``vlmsearch: error[<category>]: <message>`` on stderr and exit
with the code for that category (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .clustering import pairwise_distance_matrix
from .config import JobConfig, load_config
from .errors import ConfigError, InputError, OracleError, SearchError, SpecError, TraceError, UnsupportedRatioError
from .oracle import ExternalOracle
from .report import render_csv, render_text, validate_report
from .search import compare_to_grid, default_workers, run, run_grid
from .trace import SyntheticSpec, generate_synthetic, load_trace, read_activation_dir

EXIT_CODES = {
    "incomplete": 1,
    "config": 3,
    "trace": 4,
    "oracle": 5,
    "input": 6,
    "io": 7,
}


def _fail(category: str, message: str) -> int:
    print(f"vlmsearch: error[{category}]: {message}", file=sys.stderr)
    return EXIT_CODES[category]


def _category(exc: Exception) -> str:
    if isinstance(exc, (ConfigError, SpecError)):
        return "config"
    if isinstance(exc, (TraceError, UnsupportedRatioError)):
        return "trace"
    if isinstance(exc, OracleError):
        return "oracle"
    if isinstance(exc, OSError):
        return "io"
    return "input"


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None:
        return None
    return str(p if Path(p).is_absolute() else base / p)


def cmd_run(args) -> int:
    job, base = load_config(args.config)
    if args.seed is not None:
        job = JobConfig.from_json({**job.to_json(), "seed": args.seed})
    trace = args.trace or _resolve(base, job.trace)
    out = args.out or _resolve(base, job.output)
    cfg = job.search

    if trace is not None:
        replay = load_trace(trace, cfg.required_ratios())
        zoo = replay.bundle
    elif job.synthetic is not None:
        zoo = generate_synthetic(SyntheticSpec.from_json(job.synthetic), cfg.seed)
        replay = zoo.oracle()
    else:
        raise ConfigError("config names neither a trace nor a synthetic spec")

    oracle = replay
    if job.oracle is not None:
        oracle = ExternalOracle(job.oracle["command"], workers=int(job.oracle.get("workers", 1)),
                                timeout=float(job.oracle.get("timeout", 600)))
    try:
        report = run(zoo, oracle, cfg, workers=default_workers())
    finally:
        oracle.close()
    if not report.incomplete and zoo.full_data_errors() is not None:
        report.evaluation = compare_to_grid(report, run_grid(zoo.candidates, replay))
    _write(report.dumps(), out)
    if report.incomplete:
        return _fail("oracle", f"search incomplete: {report.error}")
    return 0


def cmd_gen_trace(args) -> int:
    try:
        with open(args.spec) as fh:
            spec = SyntheticSpec.from_json(json.load(fh))
    except FileNotFoundError:
        raise ConfigError(f"spec file {args.spec} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON ({exc})") from None
    bundle = generate_synthetic(spec, args.seed)
    bundle.save(args.out)
    print(f"planted top-1: {bundle.metadata['generator']['planted_best']}")
    print(f"digest: {bundle.digest()}")
    return 0


def cmd_cka(args) -> int:
    acts = read_activation_dir(args.inp)
    if len(acts) < 2:
        raise InputError(f"{args.inp}: need at least 2 activation files, found {len(acts)}")
    dist = pairwise_distance_matrix(acts, workers=default_workers())
    _write(json.dumps(dist.to_json(), indent=2) + "\n", args.out)
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.inp) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.inp}: invalid JSON ({exc})") from None
    validate_report(data)
    text = render_csv(data) if args.format == "csv" else render_text(data)
    sys.stdout.write(text)
    if data.get("incomplete"):
        return EXIT_CODES["incomplete"]
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlmsearch", description="Pretrained model selection for vision language models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a search and write a JSON report")
    p.add_argument("--config", required=True)
    p.add_argument("--trace")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("cka", help="pairwise 1 - CKA distances for a directory of activation CSVs")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cka)

    p = sub.add_parser("report", help="render a report")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SearchError, OSError) as exc:
        return _fail(_category(exc), str(exc))


if __name__ == "__main__":
    sys.exit(main())
