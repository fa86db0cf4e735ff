"""Command line entry point: ``imitatio analyze|sample|validate|walks``.

Exit codes: 0 success, 2 invalid kernel file, 3 precondition or usage
error, 4 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from pathlib import Path

import numpy as np

from .coupling import PreconditionError, doeblin_certificate
from .invariant import InvariantError, invariant_distribution, p_hat, residual
from .kernel import KernelSpecError, coalescence_verdict, parse_kernel_spec
from .rng import RandomSource
from .samplers import sample_batch
from .stats import cross_algorithm_report
from .structure import Verdict, reduce_kernel, uniqueness_verdict
from .walks import StepCapExceeded, s_hat_tail_estimate, von_schelling_simulate

EXIT_OK = 0
EXIT_KERNEL = 2
EXIT_PRECONDITION = 3
EXIT_VALIDATION = 4

_WINDOW = re.compile(r"^\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*$")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PRECONDITION, f"{self.prog}: error: {message}\n")


def parse_window(text: str) -> tuple[int, ...]:
    m = _WINDOW.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"window must look like a..b, got {text!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if a > b:
        raise argparse.ArgumentTypeError(f"empty window {text!r}")
    return tuple(range(a, b + 1))


def _weights(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be comma-separated numbers, got {text!r}")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imitatio", description="Stationary laws of imitation processes with long memory.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("kernel", help="kernel JSON file")
        sp.add_argument("--out", help="output path (default: stdout)")

    a = sub.add_parser("analyze", help="structure, invariant law, coalescence and certificate")
    common(a)
    a.add_argument("--invariant-weights", type=_weights, help="mixture weights, one per closed class")

    s = sub.add_parser("sample", help="draw window samples")
    common(s)
    s.add_argument("--window", type=parse_window, required=True, help="inclusive range a..b (use --window=-3..2 for negatives)")
    s.add_argument("--algorithm", choices=("cftp", "eps", "doeblin"), default="cftp")
    s.add_argument("--threshold", type=int, help="threshold u < min(window) for eps")
    s.add_argument("--replicas", type=_positive, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--invariant-weights", type=_weights)
    s.add_argument("--diagnostics", help="diagnostics JSON path (default: <out>.diagnostics.json)")

    v = sub.add_parser("validate", help="cross-check all samplers against each other")
    common(v)
    v.add_argument("--window", type=parse_window, default=(0, 1))
    v.add_argument("--replicas", type=_positive, default=100_000)
    v.add_argument("--seed", type=int, default=0)

    w = sub.add_parser("walks", help="hitting times of the walk distance and coalescence tails")
    common(w)
    w.add_argument("--distance", type=_positive, default=1, help="initial distance between the two walks")
    w.add_argument("--horizon", type=_positive, default=100_000)
    w.add_argument("--replicas", type=_positive, default=10_000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--window", type=parse_window, help="also estimate P(coalescence below --threshold)")
    w.add_argument("--threshold", type=int)
    w.add_argument("--summary", help="summary JSON path (default: stderr)")
    return p


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise KernelSpecError(f"cannot read kernel file: {exc}", [str(exc)]) from exc
    return parse_kernel_spec(text)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _invariant(kernel, weights):
    if weights is None:
        return None
    try:
        return invariant_distribution(p_hat(kernel), weights)
    except InvariantError as exc:
        raise PreconditionError(str(exc)) from exc


def run_analyze(args) -> int:
    kernel = _load(args.kernel)
    report = uniqueness_verdict(kernel)
    ph = p_hat(kernel)
    doc = {"structure": report.to_dict(), "p_hat": ph.tolist()}
    try:
        lam = invariant_distribution(ph, args.invariant_weights)
        doc["invariant"] = lam.tolist()
        doc["invariant_residual"] = residual(lam, ph)
    except InvariantError as exc:
        doc["invariant"] = None
        doc["invariant_note"] = str(exc)
    coal = coalescence_verdict(kernel)
    doc["coalescence"] = {"verdict": coal.verdict.value, "tail_square_sum": _finite(coal.tail_square_sum), "reason": coal.reason}
    if report.d_A > 1:
        red = coalescence_verdict(reduce_kernel(kernel))
        doc["coalescence_reduced"] = {"verdict": red.verdict.value, "tail_square_sum": _finite(red.tail_square_sum), "reason": red.reason}
    doc["certificate"] = doeblin_certificate(kernel).to_dict() if report.verdict is Verdict.UNIQUE else None
    _emit(_dump(doc), args.out)
    return EXIT_OK


def _finite(x: float):
    return x if np.isfinite(x) else "inf"


def run_sample(args) -> int:
    kernel = _load(args.kernel)
    if args.algorithm == "eps":
        if args.threshold is None:
            raise UsageError("--algorithm eps requires --threshold")
        if args.threshold >= min(args.window):
            raise UsageError("--threshold must lie below the window")
    invariant = _invariant(kernel, args.invariant_weights)
    try:
        batch = sample_batch(
            kernel, args.window, args.algorithm, args.replicas, args.seed,
            threshold=args.threshold, invariant=invariant,
        )
    except PreconditionError as exc:
        if args.algorithm == "cftp":
            raise PreconditionError(f"{exc}; fallback: --algorithm eps --threshold U") from exc
        raise
    _emit(batch.to_csv(), args.out)
    diag_path = args.diagnostics or (f"{args.out}.diagnostics.json" if args.out else None)
    if diag_path:
        Path(diag_path).write_text(batch.diagnostics_json() + "\n")
    return EXIT_OK


def run_validate(args) -> int:
    kernel = _load(args.kernel)
    report = cross_algorithm_report(kernel, args.window, args.replicas, args.seed)
    _emit(report.to_json() + "\n", args.out)
    for t in report.tests:
        if not t.passed:
            print(f"FAIL {t.name}: statistic={t.statistic} threshold={t.threshold} {t.note}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_VALIDATION


def run_walks(args) -> int:
    kernel = _load(args.kernel)
    if (args.window is None) != (args.threshold is None):
        raise UsageError("--window and --threshold go together")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replica", "start_distance", "hit_step_or_-1"])
    hits = []
    for r in range(args.replicas):
        rng = RandomSource(kernel.decrements, args.seed, r)
        step = von_schelling_simulate(kernel, args.distance, args.horizon, rng)
        hits.append(step)
        writer.writerow([r, args.distance, -1 if step is None else step])
    _emit(buf.getvalue(), args.out)
    found = [h for h in hits if h is not None]
    summary = {
        "replicas": args.replicas,
        "start_distance": args.distance,
        "horizon": args.horizon,
        "hit_fraction": len(found) / args.replicas,
        "median_hit_step": float(np.median(found)) if found else None,
        "max_hit_step": max(found) if found else None,
    }
    if args.window is not None:
        if args.threshold >= min(args.window):
            raise UsageError("--threshold must lie below the window")
        est = s_hat_tail_estimate(
            kernel, args.window, args.threshold, args.horizon, args.replicas,
            RandomSource(kernel.decrements, args.seed, 0, substream=2),
        )
        summary["s_hat_below_threshold"] = {
            "probability": est.probability, "ci_low": est.ci_low, "ci_high": est.ci_high, "heuristic": True,
        }
    text = _dump(summary)
    if args.summary:
        Path(args.summary).write_text(text)
    else:
        sys.stderr.write(text)
    return EXIT_OK


COMMANDS = {"analyze": run_analyze, "sample": run_sample, "validate": run_validate, "walks": run_walks}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except KernelSpecError as exc:
        violations = getattr(exc, "violations", None) or [str(exc)]
        print("invalid kernel:", file=sys.stderr)
        for v in violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_KERNEL
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except StepCapExceeded as exc:
        print(f"step cap exceeded (suspected non-coalescence): {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
