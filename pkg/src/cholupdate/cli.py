"""Command line front end.

Exit codes: 0 success, 1 verification bound exceeded, 2 usage or input error,
3 numerical precondition failed, 4 indefinite downdate.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import harness
from .harness import ERROR_BOUND, ExperimentConfig, Impl, TrialError
from .kernel import (
    AsymmetricInput,
    IndefiniteDowndate,
    ModifyError,
    NotPositiveDefinite,
    Sigma,
    chol_factor,
    modify_rank_k,
)
from .matrix import DenseMat, MatrixError, Precision, TriFactor, UpdateMat, mat_read, mat_write
from .panel import (
    DEFAULT_BLOCKS_PER_KERNEL,
    DEFAULT_ELEMENTS_PER_THREAD,
    DEFAULT_THREADS_PER_BLOCK,
    PanelParams,
    TrafficStats,
    build_plan,
    default_workers,
    run_panelled,
)

EXIT_OK, EXIT_BOUND, EXIT_USAGE, EXIT_NUMERIC, EXIT_INDEFINITE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [_positive(t) for t in text.split(",") if t.strip()]
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad list {text!r}: {exc}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _impl_list(text: str) -> list[Impl]:
    try:
        vals = [Impl.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_panel_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("panelling")
    g.add_argument("--bpk", type=_positive, default=DEFAULT_BLOCKS_PER_KERNEL,
                   help="blocks per kernel (default %(default)s)")
    g.add_argument("--tpb", type=_positive, default=DEFAULT_THREADS_PER_BLOCK,
                   help="threads per block (default %(default)s)")
    g.add_argument("--ept", type=_positive, default=DEFAULT_ELEMENTS_PER_THREAD,
                   help="update columns per batch (default %(default)s)")
    g.add_argument("--workers", type=_positive, default=default_workers(),
                   help="worker threads (default: available CPUs, %(default)s here)")


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=_positive, default=16, help="update rank (default %(default)s)")
    p.add_argument("--precision", choices=["f32", "f64"], default="f64", help="default %(default)s")
    p.add_argument("--direction", choices=["update", "downdate"], default="update", help="default %(default)s")
    p.add_argument("--seed", type=int, default=0, help="PRNG seed (default %(default)s)")
    p.add_argument("--repetitions", type=_positive, default=1, help="timed repetitions (default %(default)s)")


def _params(args) -> PanelParams:
    return PanelParams(args.bpk, args.tpb, args.ept, args.workers)


def _config(args, n: int, impl: Impl) -> ExperimentConfig:
    return ExperimentConfig(
        n=n, k=args.k, precision=Precision.parse(args.precision), direction=Sigma.parse(args.direction),
        seed=args.seed, impl=impl, params=_params(args), repetitions=args.repetitions,
    )


def _read(path, kind):
    m = mat_read(path)
    if not isinstance(m, kind):
        raise UsageError(f"{path}: expected {kind.__name__}, found {type(m).__name__}")
    return m


def cmd_factor(args) -> int:
    A = _read(args.input, DenseMat)
    L = chol_factor(A)
    mat_write(L, args.output)
    return EXIT_OK


def cmd_modify(args) -> int:
    L = _read(args.factor, TriFactor)
    V = _read(args.vectors, UpdateMat)
    if V.n != L.n:
        raise UsageError(f"factor has order {L.n} but update matrix has {V.n} rows")
    if V.precision is not L.precision:
        raise UsageError("factor and update matrix differ in precision")
    sigma = Sigma.parse(args.command)
    # work on copies; inputs stay untouched even on failure
    L, V = L.copy(), V.copy()
    if args.impl == "panel":
        run_panelled(L, V, sigma, _params(args), TrafficStats())
    else:
        modify_rank_k(L, V, sigma)
    if args.check:
        ref = _read(args.check, TriFactor)
        if ref.n != L.n:
            raise UsageError(f"--check factor has order {ref.n}, expected {L.n}")
        diff = np.max(np.abs(ref.data.astype(np.float64) - L.data.astype(np.float64)))
        print(f"max_abs_diff,{diff:.17g}")
    mat_write(L, args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args, args.n, Impl.parse(args.impl))
    res = harness.run_trial(cfg)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(harness.SWEEP_COLUMNS[:-1] + ["bound"])
    w.writerow([
        cfg.n, cfg.k, cfg.precision.value, cfg.direction.name.lower(), cfg.impl.value,
        f"{res.median_time:.6e}", harness._float(res.error_maxabs, cfg.precision),
        res.op_counts.applies, res.traffic.bytes_L_written, ERROR_BOUND[cfg.precision],
    ])
    return EXIT_OK if res.error_maxabs <= ERROR_BOUND[cfg.precision] else EXIT_BOUND


def cmd_bench(args) -> int:
    base = _config(args, args.n_list[0], args.impl_list[0])
    text = harness.run_sweep(base, args.n_list, args.impl_list)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_plan(args) -> int:
    plan = build_plan(args.n, args.k, _params(args))
    print(plan.describe())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cholupdate", description="Rank-k Cholesky factor up/down-dating.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factor", help="Cholesky-factor a dense SPD matrix")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_factor)

    for name in ("update", "downdate"):
        p = sub.add_parser(name, help=f"{name} a packed factor by the columns of V")
        p.add_argument("factor")
        p.add_argument("vectors")
        p.add_argument("-o", "--output", required=True)
        p.add_argument("--impl", choices=["serial", "panel"], default="serial", help="default %(default)s")
        p.add_argument("--check", metavar="FACTOR", help="print max elementwise difference from this factor")
        _add_panel_flags(p)
        p.set_defaults(func=cmd_modify)

    p = sub.add_parser("verify", help="run one seeded trial and check the error bound")
    p.add_argument("--n", type=_positive, default=64, help="default %(default)s")
    p.add_argument("--impl", default="rank-k", help="serial-a, serial-b, rank-k or panelled (default %(default)s)")
    _add_experiment_flags(p)
    _add_panel_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="sweep sizes and implementations, CSV out")
    p.add_argument("--n-list", type=_int_list, default=[256, 512, 1024], help="comma separated (default 256,512,1024)")
    p.add_argument("--impl-list", type=_impl_list, default=[Impl.RANK_K, Impl.PANELLED],
                   help="comma separated (default rank-k,panelled)")
    p.add_argument("--out", help="CSV path (default stdout)")
    _add_experiment_flags(p)
    _add_panel_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plan", help="print the panel plan without running it")
    p.add_argument("--n", type=_positive, default=5000, help="default %(default)s")
    p.add_argument("--k", type=_positive, default=16, help="default %(default)s")
    _add_panel_flags(p)
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify":
        try:
            Impl.parse(args.impl)
        except ValueError as exc:
            parser.error(str(exc))
    try:
        return args.func(args)
    except (NotPositiveDefinite, AsymmetricInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, MatrixError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IndefiniteDowndate, TrialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, TrialError) and not isinstance(exc.cause, IndefiniteDowndate):
            return EXIT_NUMERIC
        return EXIT_INDEFINITE
    except ModifyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
