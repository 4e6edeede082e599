"""Command-line interface.

Exit codes: 0 success, 1 usage or hypothesis violation, 2 I/O or parse
failure, 3 element budget exceeded, 4 extraction or verification failure,
5 mismatched number of components.  Results go to stdout as JSON (CSV for
``bench``); diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

from threadpoolctl import threadpool_limits

from . import bench
from .errors import (
    BudgetExceededError,
    DegenerateUpdateError,
    ExtractionError,
    HypothesisError,
    RankMismatchError,
)
from .io import (
    FormatError,
    read_spectrum,
    read_tensor,
    write_spectrum,
    write_tensor,
    write_vectors,
)
from .report import build_report, dumps, load_report, report_pairs
from .sketch import BackendConfig, band_violation_test, make_backend
from .tensor import NoiseSpec, gaussian_noise_tensor
from .tpm import PowerMethodConfig, decompose, verify_epsilon_close

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_BUDGET = 3
EXIT_FAILURE = 4
EXIT_MISMATCH = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def cmd_gen(args) -> int:
    if args.noise_norm is not None and args.sigma:
        raise UsageError("--sigma and --noise-norm are mutually exclusive")
    profile = bench.DecayProfile(args.profile, args.k)
    A, truth = bench.gen_synthetic(profile, args.n, args.p, args.sigma, args.seed)
    if args.noise_norm:
        A = A + gaussian_noise_tensor(args.n, args.p, NoiseSpec(args.noise_norm, 10, args.seed))
    truth_path = args.truth_out or args.out + ".spectrum"
    write_tensor(args.out, A, text=args.text)
    write_spectrum(truth_path, truth)
    _emit({"tensor": args.out, "truth": truth_path, "order": A.order, "dim": A.dim, "k": truth.k})
    return EXIT_OK


def cmd_decompose(args) -> int:
    A = read_tensor(args.input)
    if args.guarantee and A.order < 3:
        raise HypothesisError(f"order p={A.order}: guarantee mode needs p >= 3")
    bcfg = None
    if args.backend == "sketch":
        bcfg = BackendConfig(
            epsilon=args.sketch_epsilon, delta=args.delta,
            sketch_len=args.b, repetitions=args.B, seed=args.seed,
        )
    cfg = PowerMethodConfig(
        k=args.k, T=args.T, L=args.L, epsilon=args.epsilon, c0=args.c0, c=args.c,
        seed=args.seed, backend=args.backend, backend_config=bcfg,
        guarantee_mode=args.guarantee, lambda_min=args.lambda_min,
    )
    if args.guarantee:
        cfg.check_hypotheses(A.order, A.dim)
    start = time.perf_counter()
    backend = make_backend(A, args.backend, bcfg)
    init_s = time.perf_counter() - start
    start = time.perf_counter()
    result = decompose(backend, cfg)
    run_s = time.perf_counter() - start
    offsets = write_vectors(args.vectors_out, result.vectors) if args.vectors_out else None
    timings = None
    if args.with_timings:
        timings = {"init_ms": 1e3 * init_s, "decompose_ms": 1e3 * run_s}
    report = build_report(result, backend, vector_offsets=offsets, timings=timings)
    text = dumps(report)
    if args.out_report:
        with open(args.out_report, "w") as fh:
            fh.write(text)
    _emit({
        "k": result.k,
        "eigenvalues": [float(x) for x in result.eigenvalues],
        "T": result.T,
        "L": result.L,
        "report": args.out_report,
    })
    print(f"init {1e3 * init_s:.1f} ms, decompose {1e3 * run_s:.1f} ms", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    truth = read_spectrum(args.truth)
    try:
        report = load_report(args.report)
    except (ValueError, KeyError) as exc:
        raise FormatError(str(exc)) from exc
    lam, vec = report_pairs(report)
    p = int(report["tensor"]["order"])
    rec = verify_epsilon_close(truth, lam, vec, args.epsilon, p)
    _emit(rec.to_dict())
    return EXIT_OK if rec.guarantee else EXIT_FAILURE


def cmd_bench(args) -> int:
    try:
        cfg = bench.BenchConfig.load(args.config)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{args.config}: {exc}") from exc
    if args.no_timings:
        cfg = bench.BenchConfig.from_dict({**cfg.to_dict(), "record_timings": False})
    result = bench.run_benchmark(cfg)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            result.to_csv(fh)
    else:
        result.to_csv(sys.stdout)
    failed = sum(r["status"] != "ok" for r in result.rows)
    print(f"{len(result.rows)} rows, {failed} failed", file=sys.stderr)
    return EXIT_OK


def cmd_sketch_test(args) -> int:
    A = read_tensor(args.input)
    res = band_violation_test(
        A, args.epsilon, args.delta, args.trials,
        sketch_len=args.b, repetitions=args.B, seed=args.seed,
    )
    _emit(res.to_dict())
    return EXIT_OK if res.passed else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otpower", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (default: $OTP_THREADS or library default)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic orthogonal tensor plus truth sidecar")
    g.add_argument("--profile", choices=bench.PROFILES, default="inverse")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--sigma", type=float, default=0.0, help="per-entry noise std")
    g.add_argument("--noise-norm", type=float, default=None,
                   help="add symmetric noise scaled to this estimated spectral norm")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--truth-out", default=None, help="default: OUT.spectrum")
    g.add_argument("--text", action="store_true", help="write the text tensor format")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("decompose", help="run the robust tensor power method")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--T", type=int, default=None)
    d.add_argument("--L", type=int, default=None)
    d.add_argument("--epsilon", type=float, default=1e-3)
    d.add_argument("--c0", type=float, default=100.0)
    d.add_argument("--c", type=float, default=1.0)
    d.add_argument("--lambda-min", type=float, default=None,
                   help="known smallest eigenvalue, for the up-front epsilon check")
    d.add_argument("--guarantee", action="store_true",
                   help="enforce the recovery-guarantee hypotheses and derive T, L")
    d.add_argument("--backend", choices=("exact", "sketch"), default="exact")
    d.add_argument("--b", type=int, default=None, help="sketch length")
    d.add_argument("--B", type=int, default=None, help="sketch repetitions")
    d.add_argument("--sketch-epsilon", type=float, default=0.1)
    d.add_argument("--delta", type=float, default=0.1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out-report", default=None)
    d.add_argument("--vectors-out", default=None, help="also write vectors as OTP1 records")
    d.add_argument("--with-timings", action="store_true",
                   help="include wall times in the report (makes it non-reproducible)")
    d.set_defaults(func=cmd_decompose)

    v = sub.add_parser("verify", help="check a report against the true spectrum")
    v.add_argument("--truth", required=True)
    v.add_argument("--report", required=True)
    v.add_argument("--epsilon", type=float, required=True)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="run a benchmark sweep and write CSV")
    b.add_argument("--config", required=True, help="JSON file with BenchConfig fields")
    b.add_argument("--out", default=None, help="CSV path (default: stdout)")
    b.add_argument("--no-timings", action="store_true",
                   help="leave timing columns empty so the table is reproducible")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sketch-test", help="measure the sketch accuracy band empirically")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--epsilon", type=float, default=0.2)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--b", type=int, default=None)
    s.add_argument("--B", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sketch_test)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("OTP_THREADS"):
        try:
            threads = int(os.environ["OTP_THREADS"])
        except ValueError:
            parser.error("OTP_THREADS must be an integer")
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except (UsageError, HypothesisError) as exc:
        print(f"otpower: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceededError as exc:
        print(f"otpower: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (OSError, FormatError) as exc:
        print(f"otpower: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RankMismatchError as exc:
        print(f"otpower: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ExtractionError, DegenerateUpdateError) as exc:
        print(f"otpower: extraction failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"otpower: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
