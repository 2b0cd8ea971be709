"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 invalid input, 3 I/O error.
JSON output keeps full float precision so kernels round-trip exactly; the
one-line summaries written to stderr use 12 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from ldpsampler._io import atomic_write_text
from ldpsampler.core import FDivergence, check_epsilon, validate_distribution
from ldpsampler.exceptions import InternalError, ValidationError
from ldpsampler.harness import (
    MOLLIFIER_KL,
    MOLLIFIER_TV,
    OPTIMAL,
    canonical_method,
    dataset_benchmark,
    default_grid,
    ingest_counts,
    report_rows,
    synthetic_sweep,
    write_report,
    write_sweep,
    REPORT_COLUMNS,
)
from ldpsampler.mechanism import (
    MechanismBundle,
    build_optimal,
    kernel_from_dict,
    optimal_utility,
    verify_invariance,
    verify_ldp,
)
from ldpsampler.mollifier import project
from ldpsampler.sampler import RandomStream, sample_indices

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INVALID = 2
EXIT_IO = 3

log = logging.getLogger("ldpsampler")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _g(x) -> str:
    return f"{x:.12g}"


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _emit(args, text: str) -> None:
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)


def _emit_json(args, obj) -> None:
    _emit(args, json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n")


def _emit_csv(args, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _emit(args, buf.getvalue())


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _epsilon(text):
    try:
        return check_epsilon(float(text))
    except (ValueError, ValidationError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def read_vector(source: str) -> np.ndarray:
    """Parse an inline comma-separated vector or a file.

    Files hold one value per line, or are ingestion CSVs (``user_id,...``
    header) holding exactly one group, whose prior is returned.
    """
    if os.path.isfile(source):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
        first = text.lstrip("﻿").split("\n", 1)[0]
        if first.strip().startswith("user_id"):
            groups = ingest_counts(io.StringIO(text), min_events=1, top_k=2**31, min_group_size=1)
            if len(groups) != 1:
                raise ValidationError(f"{source} holds {len(groups)} groups; expected exactly one")
            return groups[0].prior.probs
        values = [line.strip() for line in text.splitlines() if line.strip()]
    else:
        values = [v.strip() for v in source.split(",") if v.strip()]
    try:
        return np.array([float(v) for v in values])
    except ValueError as exc:
        raise ValidationError(f"cannot parse vector {source!r}: {exc}") from None


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def cmd_build(args) -> int:
    bundle = build_optimal(read_vector(args.prior), args.epsilon)
    qmin = bundle.prior.min
    tv = optimal_utility(qmin, bundle.epsilon, FDivergence.tv())
    kl = optimal_utility(qmin, bundle.epsilon, FDivergence.kl())
    if args.format == "csv":
        _emit_csv(args, [f"j{j}" for j in range(bundle.n)], [[_g(x) for x in row] for row in bundle.kernel.entries])
    else:
        _emit_json(args, {**bundle.to_dict(), "optimalUtilityTV": tv, "optimalUtilityKL": kl})
    print(f"n={bundle.n} epsilon={_g(bundle.epsilon)} optimalUtilityTV={_g(tv)} optimalUtilityKL={_g(kl)}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    kernel, prior, epsilon = kernel_from_dict(_load_json(args.kernel))
    if args.prior is not None:
        prior = validate_distribution(read_vector(args.prior))
    if args.epsilon is not None:
        epsilon = args.epsilon
    if epsilon is None:
        raise ValidationError("no epsilon given and none stored in the kernel file")
    ldp = verify_ldp(kernel, epsilon, args.tolerance)
    report = {
        "ldp": {"maxLogRatio": ldp.max_log_ratio, "epsilon": ldp.epsilon, "pass": ldp.passed},
        "invariance": None,
    }
    passed = ldp.passed
    if prior is not None:
        inv = verify_invariance(kernel, prior, args.tolerance)
        report["invariance"] = {"maxAbsDeviation": inv.max_abs_deviation, "pass": inv.passed}
        passed = passed and inv.passed
    report["pass"] = passed
    if args.format == "csv":
        rows = [["ldp", _g(ldp.max_log_ratio), ldp.passed]]
        if report["invariance"] is not None:
            rows.append(["invariance", _g(inv.max_abs_deviation), inv.passed])
        _emit_csv(args, ["check", "value", "pass"], rows)
    else:
        _emit_json(args, report)
    print("PASS" if passed else "FAIL", file=sys.stderr)
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cmd_project(args) -> int:
    result = project(read_vector(args.p), read_vector(args.prior), args.epsilon, args.divergence)
    if args.format == "csv":
        _emit_csv(args, ["index", "projected"], [[i, _g(v)] for i, v in enumerate(result.projected.probs)])
    else:
        _emit_json(args, result.to_dict())
    return EXIT_OK


def cmd_sample(args) -> int:
    p = validate_distribution(read_vector(args.p))
    if args.bundle is not None:
        bundle = MechanismBundle.from_dict(_load_json(args.bundle))
        method, epsilon = OPTIMAL, bundle.epsilon
    else:
        if args.prior is None or args.epsilon is None:
            raise ValidationError("sample needs --bundle, or --prior with --epsilon")
        method, epsilon = canonical_method(args.method), args.epsilon
        bundle = build_optimal(read_vector(args.prior), epsilon) if method == OPTIMAL else None
    if method == OPTIMAL:
        if bundle.n != p.n:
            raise ValidationError(f"p has {p.n} entries, mechanism has {bundle.n}")
        dist = p.probs @ bundle.kernel.entries
        dist = dist / dist.sum()
    else:
        divergence = "kl" if method == MOLLIFIER_KL else "tv"
        dist = project(p, read_vector(args.prior), epsilon, divergence).projected.probs
    indices = sample_indices(dist, RandomStream(args.seed), args.count)
    if args.format == "csv":
        _emit_csv(args, ["index"], [[int(i)] for i in indices])
    else:
        _emit_json(args, {"method": method, "epsilon": epsilon, "seed": args.seed, "indices": indices.tolist()})
    return EXIT_OK


def cmd_bench_synthetic(args) -> int:
    grid = default_grid(args.n, args.grid)
    sweep = synthetic_sweep(args.n, args.epsilon, args.runs, grid, RandomStream(args.seed))
    fmt = args.format or "csv"
    if args.output:
        write_sweep(sweep, args.output, fmt)
    elif fmt == "json":
        _emit_json(args, sweep.to_dict())
    else:
        cols = ("p1", "method", "mean_tv", "stderr_tv", "mean_kl", "stderr_kl")
        _emit_csv(args, cols, [[_g(r[c]) if isinstance(r[c], float) else r[c] for c in cols] for r in sweep.rows()])
    return EXIT_OK


def cmd_bench_dataset(args) -> int:
    groups = ingest_counts(args.input, args.min_events, args.top_k, args.min_group_size)
    methods = [m for m in args.methods.split(",") if m.strip()]
    reports = dataset_benchmark(groups, args.epsilon, methods)
    fmt = args.format or "json"
    if args.output:
        write_report(reports, args.output, fmt)
    elif fmt == "csv":
        _emit_csv(args, REPORT_COLUMNS, [[_g(r[c]) if isinstance(r[c], float) else r[c] for c in REPORT_COLUMNS] for r in report_rows(reports)])
    else:
        _emit_json(args, {"reports": [r.to_dict() for r in reports]})
    for r in reports:
        print(f"{r.group_id} {r.method} maxTV={_g(r.max_tv)} meanTV={_g(r.mean_tv)}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--output", help="write here (atomically) instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--tolerance", type=float, default=1e-9)

    parser = _Parser(prog="ldpsampler", description="Locally private sampling with a public prior.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", parents=[common], help="construct the optimal mechanism")
    p.add_argument("--prior", required=True)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", parents=[common], help="check a kernel for eps-LDP and prior invariance")
    p.add_argument("--kernel", required=True)
    p.add_argument("--prior")
    p.add_argument("--epsilon", type=_epsilon)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("project", parents=[common], help="project onto the relative mollifier")
    p.add_argument("--p", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--divergence", choices=("kl", "tv"), default="kl")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("sample", parents=[common], help="draw private samples")
    p.add_argument("--p", required=True)
    p.add_argument("--bundle")
    p.add_argument("--prior")
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--method", choices=("optimal", "mollifier-kl", "mollifier-tv"), default="optimal")
    p.add_argument("--count", type=_positive_int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench-synthetic", parents=[common], help="single-user synthetic sweep")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--epsilon", type=_epsilon, default=8.0)
    p.add_argument("--runs", type=_positive_int, default=10)
    p.add_argument("--grid", type=int, default=20, help="number of p1 grid points in [1/n, 1]")
    p.set_defaults(func=cmd_bench_synthetic)

    p = sub.add_parser("bench-dataset", parents=[common], help="benchmark grouped user histograms")
    p.add_argument("--input", required=True)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--min-events", type=_nonneg_int, default=20)
    p.add_argument("--top-k", type=_positive_int, default=100)
    p.add_argument("--min-group-size", type=_positive_int, default=1000)
    p.add_argument("--methods", default="optimal,mollifier-kl,mollifier-tv")
    p.set_defaults(func=cmd_bench_dataset)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InternalError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERIFY_FAILED


if __name__ == "__main__":
    sys.exit(main())
