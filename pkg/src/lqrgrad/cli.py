"""Command-line interface.

Subcommands: ``solve`` (one problem, one method, emits a trace),
``bench`` (random-instance method comparison), ``scan`` (landscape CSV),
``riccati`` (optimal state-feedback gain), ``check`` (quick self-test on
the fixtures).

Exit codes: 0 success, 2 validation error, 3 convergence failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateDirection,
    LqrGradError,
    StabilityError,
    UnsupportedForOutputFeedback,
    ValidationError,
)
from .linalg import frobenius, is_stabilizing, solve_lyapunov, solve_lyapunov_kron
from .model import evaluate, hessian_form, coercivity_bounds, riccati_optimum
from .harness import (
    BenchmarkConfig,
    ScanAxis,
    Uniform64,
    fixture,
    generate_random_problem,
    landscape_scan,
    load_problem,
    run_benchmark,
    save_flow_trace,
    save_problem,
    save_trace,
    write_scan_csv,
)
from .optim import (
    ConstantStep,
    TERM_FAILURE,
    TERM_GRAD_TOL,
    TERM_T_END,
    algorithm1,
    conjugate_gradient,
    gradient_descent,
    gradient_flow,
    multi_start,
)
from .harness import tune_constant_step

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


def _parse_matrix(text):
    """Parse 'a,b;c,d' (rows split on ';', entries on ',')."""
    try:
        rows = [
            [float(x) for x in row.split(",")]
            for row in text.strip().split(";")
        ]
    except ValueError as exc:
        raise ValidationError(f"cannot parse matrix {text!r}: {exc}") from None
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValidationError(f"ragged matrix literal {text!r}")
    return np.array(rows)


def _parse_axis(text):
    """Parse an axis spec 'i,j[+i,j...]:start:stop:num'."""
    parts = text.rsplit(":", 3)
    if len(parts) != 4:
        raise ValidationError(
            f"axis {text!r} must look like 'i,j:start:stop:num'"
        )
    entry_part, start, stop, num = parts
    entries = []
    for chunk in entry_part.split("+"):
        ij = chunk.split(",")
        if len(ij) != 2:
            raise ValidationError(f"bad axis entry {chunk!r} (want 'i,j')")
        entries.append((int(ij[0]), int(ij[1])))
    return ScanAxis(
        entries=tuple(entries),
        start=float(start),
        stop=float(stop),
        num=int(num),
    )


def _problem_from_args(args):
    if getattr(args, "problem", None) and getattr(args, "fixture", None):
        raise ValidationError("pass either --problem or --fixture, not both")
    if getattr(args, "problem", None):
        return load_problem(args.problem)
    if getattr(args, "fixture", None):
        return fixture(args.fixture, alpha=args.alpha).problem
    raise ValidationError("one of --problem or --fixture is required")


def _initial_gain(args, problem):
    if getattr(args, "k0", None) is not None:
        return problem.gain(_parse_matrix(args.k0))
    if problem.k0 is not None:
        return problem.k0
    zero = np.zeros((problem.m, problem.r))
    if is_stabilizing(problem.closed_loop(zero)):
        return zero
    raise ValidationError(
        "no initial gain: pass --k0 (K = 0 is not stabilizing here)"
    )


def _print_summary(payload):
    print(json.dumps(payload, sort_keys=True))


def cmd_solve(args):
    problem = _problem_from_args(args)
    K0 = _initial_gain(args, problem)

    if args.method == "flow":
        trace = gradient_flow(
            problem,
            K0,
            t_end=args.t_end,
            grad_tol=args.grad_tol,
            rtol=args.rtol,
        )
        if args.out:
            save_flow_trace(trace, args.out)
        last = trace.samples[-1]
        _print_summary(
            {
                "method": "flow",
                "t": last.t,
                "f": last.f,
                "grad_norm": last.grad_norm,
                "samples": len(trace.samples),
                "termination": trace.termination,
                "gain": last.K.tolist(),
            }
        )
        return EXIT_OK if trace.termination in (TERM_GRAD_TOL, TERM_T_END) else EXIT_CONVERGENCE

    if args.restarts:
        rng = Uniform64(args.seed)
        box = args.restart_box
        starts = [K0] + [
            np.array(
                [
                    [(2.0 * rng.uniform() - 1.0) * box for _ in range(problem.r)]
                    for _ in range(problem.m)
                ]
            )
            for _ in range(args.restarts)
        ]
        traces = multi_start(
            problem,
            starts,
            eps=args.grad_tol,
            armijo_c=args.armijo,
            shrink=args.shrink,
            t1=args.t1,
            max_iter=args.max_iter,
        )
        if not traces:
            raise ConvergenceError("no stabilizing start among the restarts")
        scored = sorted(
            traces, key=lambda tr: evaluate(problem, tr.terminal_gain).f
        )
        trace = scored[0]
        minima = [
            {
                "f": evaluate(problem, tr.terminal_gain).f,
                "gain": tr.terminal_gain.tolist(),
                "termination": tr.termination,
            }
            for tr in scored
        ]
    else:
        minima = None
        if args.method == "gd":
            gamma = args.gamma
            if gamma is None:
                gamma = tune_constant_step(problem, K0)
            trace = gradient_descent(
                problem,
                K0,
                ConstantStep(gamma),
                grad_tol=args.grad_tol,
                max_iter=args.max_iter,
            )
        elif args.method == "gdn":
            trace = algorithm1(
                problem,
                K0,
                eps=args.grad_tol,
                armijo_c=args.armijo,
                shrink=args.shrink,
                t1=args.t1,
                max_iter=args.max_iter,
            )
        elif args.method == "cgn":
            trace = conjugate_gradient(
                problem,
                K0,
                eps=args.grad_tol,
                t1=args.t1,
                max_iter=args.max_iter,
                armijo_c=args.armijo,
                shrink=args.shrink,
            )
        else:
            raise ValidationError(f"unknown method {args.method!r}")

    if args.out:
        save_trace(trace, args.out)
    ev = evaluate(problem, trace.terminal_gain)
    payload = {
        "method": args.method,
        "f": ev.f,
        "grad_norm": frobenius(ev.grad),
        "iterations": len(trace.iterations),
        "termination": trace.termination,
        "gain": trace.terminal_gain.tolist(),
    }
    if trace.failure_reason:
        payload["failure_reason"] = trace.failure_reason
    if minima is not None:
        payload["minima"] = minima
    _print_summary(payload)
    return EXIT_OK if trace.termination == TERM_GRAD_TOL else EXIT_CONVERGENCE


def cmd_bench(args):
    methods = tuple(args.methods.split(",")) if args.methods else ("gd", "gdn", "cgn")
    config = BenchmarkConfig(
        n=args.n,
        m=args.m,
        seed=args.seed,
        methods=methods,
        max_iter=args.max_iter,
        grad_tol=args.grad_tol,
    )
    report = run_benchmark(config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, outcome in report.outcomes.items():
        if outcome.trace is not None:
            save_trace(outcome.trace, outdir / f"trace_{name}.csv")
    with open(outdir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    for name, outcome in report.outcomes.items():
        if outcome.failure and outcome.trace is None:
            print(f"{name}: FAILED ({outcome.failure})")
        else:
            print(
                f"{name}: iters={len(outcome.trace.iterations)} "
                f"final_f={outcome.final_f:.9e} gap={outcome.final_gap:.3e} "
                f"rel_err_K={outcome.final_rel_err:.3e}"
            )
    return EXIT_OK


def cmd_scan(args):
    problem = _problem_from_args(args)
    axes = [_parse_axis(a) for a in args.axis]
    base = _parse_matrix(args.k0) if args.k0 else None
    scan = landscape_scan(problem, axes, base_gain=base)
    write_scan_csv(scan, args.out)
    total = int(scan.stabilizing.size)
    inside = int(scan.stabilizing.sum())
    print(f"scan: {inside}/{total} stabilizing grid points -> {args.out}")
    return EXIT_OK


def cmd_riccati(args):
    problem = _problem_from_args(args)
    K0 = None
    if args.k0:
        K0 = problem.gain(_parse_matrix(args.k0))
    xstar, kstar = riccati_optimum(problem, K0)
    fstar = evaluate(problem, kstar).f
    payload = {
        "Kstar": kstar.tolist(),
        "Xstar": xstar.tolist(),
        "fstar": fstar,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
    _print_summary(payload)
    return EXIT_OK


def cmd_check(args):
    failures = []

    def check(name, fn):
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures.append(name)
            print(f"check {name}: FAIL ({exc})")
        else:
            print(f"check {name}: PASS")

    def fixtures_load():
        for name in ("ex31", "ex32", "ex33", "toy_scalar"):
            fixture(name)
        for alpha in (-1.0, -1.4):
            fixture("ex34", alpha=alpha)
        for alpha in (1.2, 0.9):
            fixture("ex35", alpha=alpha)

    def scalar_closed_forms():
        prob = fixture("ex31").problem
        ev = evaluate(prob, 2.0)
        assert abs(ev.f - 2.5) < 1e-12, ev.f
        assert abs(ev.grad[0, 0] - 0.75) < 1e-12
        xstar, kstar = riccati_optimum(prob, K0=np.array([[2.0]]))
        assert abs(xstar[0, 0] - 2.0) < 1e-9
        assert abs(kstar[0, 0] - 1.0) < 1e-9

    def lyapunov_cross_check():
        problem = generate_random_problem(5, 2, seed=args.seed)
        W = problem.Q
        a = problem.A
        direct = solve_lyapunov(a, W, adjoint=True).X
        kron = solve_lyapunov_kron(a, W, adjoint=True).X
        assert np.linalg.norm(direct - kron) <= 1e-10 * np.linalg.norm(direct)

    def gradient_fd():
        problem = generate_random_problem(4, 2, seed=args.seed)
        K = np.zeros((problem.m, problem.r))
        ev = evaluate(problem, K)
        fd = np.zeros_like(ev.grad)
        h = 1e-6
        for i in range(problem.m):
            for j in range(problem.r):
                Kp, Km = K.copy(), K.copy()
                Kp[i, j] += h
                Km[i, j] -= h
                fd[i, j] = (
                    evaluate(problem, Kp).f - evaluate(problem, Km).f
                ) / (2 * h)
        rel = np.linalg.norm(fd - ev.grad) / max(np.linalg.norm(ev.grad), 1e-12)
        assert rel <= 1e-5, rel

    def bounds_hold():
        prob = fixture("ex31").problem
        for k in (0.5, 1.0, 2.0, 4.0):
            ev = evaluate(prob, k)
            b1, b2 = coercivity_bounds(prob, k)
            assert b1 <= ev.f + 1e-12 and b2 <= ev.f + 1e-12

    def scan_soundness():
        fx = fixture("ex34", alpha=-1.0)
        axis = ScanAxis(entries=((0, 0),), start=-2.0, stop=10.0, num=61)
        scan = landscape_scan(fx.problem, [axis])
        grid = axis.grid()
        for idx, k in enumerate(grid):
            member = is_stabilizing(fx.problem.closed_loop([[k]]))
            assert member == bool(scan.stabilizing[idx])

    def hessian_scalar():
        prob = fixture("ex31").problem
        val = hessian_form(prob, 1.0, 1.0)
        assert abs(val - 2.0) < 1e-10, val

    check("fixtures-load", fixtures_load)
    check("scalar-closed-forms", scalar_closed_forms)
    check("lyapunov-cross-check", lyapunov_cross_check)
    check("gradient-finite-difference", gradient_fd)
    check("coercivity-bounds", bounds_hold)
    check("scan-soundness", scan_soundness)
    check("hessian-scalar", hessian_scalar)

    if failures:
        print(f"{len(failures)} check(s) failed: {', '.join(failures)}")
        return EXIT_CONVERGENCE
    print("all checks passed")
    return EXIT_OK


def cmd_make_problem(args):
    problem = generate_random_problem(args.n, args.m, args.seed)
    save_problem(problem, args.out)
    print(f"wrote {problem.label} -> {args.out}")
    return EXIT_OK


def _add_problem_source(p, k0=True):
    p.add_argument("--problem", help="path to a problem JSON file")
    p.add_argument(
        "--fixture",
        choices=("ex31", "ex32", "ex33", "ex34", "ex35", "toy_scalar"),
        help="named built-in problem",
    )
    p.add_argument("--alpha", type=float, help="parameter for ex34/ex35")
    if k0:
        p.add_argument("--k0", help="initial gain, e.g. '3' or '1,0;0,1'")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lqrgrad",
        description="Policy-gradient optimization of continuous-time LQR gains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one method on one problem")
    _add_problem_source(p)
    p.add_argument("--method", choices=("gd", "gdn", "cgn", "flow"), default="gdn")
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--gamma", type=float, help="constant step for --method gd")
    p.add_argument("--t1", type=float, help="step cap (default 10x first Newton quotient)")
    p.add_argument("--armijo", type=float, default=0.01)
    p.add_argument("--shrink", type=float, default=0.5)
    p.add_argument("--t-end", type=float, default=10.0, help="flow horizon")
    p.add_argument("--rtol", type=float, default=1e-8, help="flow integrator tolerance")
    p.add_argument("--restarts", type=int, default=0, help="extra random starts")
    p.add_argument("--restart-box", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="trace CSV path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="three-method comparison on a random instance")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--methods", help="comma list from gd,gdn,cgn")
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scan", help="grid the cost over gain entries")
    _add_problem_source(p)
    p.add_argument(
        "--axis",
        action="append",
        required=True,
        help="axis spec 'i,j[+i,j...]:start:stop:num' (repeat for 2D)",
    )
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("riccati", help="optimal state-feedback gain")
    _add_problem_source(p)
    p.add_argument("--out", help="JSON path")
    p.set_defaults(func=cmd_riccati)

    p = sub.add_parser("check", help="quick self-test on the fixtures")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("make-problem", help="write a random instance to a file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_problem)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, StabilityError, UnsupportedForOutputFeedback) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, DegenerateDirection) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except json.JSONDecodeError as exc:
        print(
            f"error: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            file=sys.stderr,
        )
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LqrGradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
