"""Fixtures, random instances, the benchmark harness, landscape scans,
and flat-file I/O for problems and traces."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConvergenceError, StabilityError, ValidationError
from .linalg import frobenius, is_stabilizing
from .model import LqrProblem, evaluate, riccati_optimum
from .optim import (
    ConstantStep,
    FlowTrace,
    RunTrace,
    TERM_FAILURE,
    algorithm1,
    conjugate_gradient,
    gradient_descent,
)

_MASK64 = (1 << 64) - 1


class Uniform64:
    """Deterministic uniform(0,1) stream: xoshiro256** seeded via splitmix64.

    The 64-bit seed is expanded to the 256-bit state with splitmix64; each
    draw maps the top 53 bits of a xoshiro256** output to [0, 1).  The
    stream depends only on the seed, never on the platform or on any
    library's RNG internals.
    """

    def __init__(self, seed):
        s = int(seed) & _MASK64
        state = []
        for _ in range(4):
            s = (s + 0x9E3779B97F4A7C15) & _MASK64
            z = s
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
            state.append(z ^ (z >> 31))
        self._s = state

    @staticmethod
    def _rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & _MASK64

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (self._rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self):
        return (self.next_u64() >> 11) * 2.0**-53

    def matrix(self, rows, cols):
        # row-major fill order is part of the documented recipe
        return np.array(
            [[self.uniform() for _ in range(cols)] for _ in range(rows)]
        )


@dataclass(frozen=True)
class Fixture:
    """A named problem together with its documented analytic facts."""

    problem: LqrProblem
    facts: Dict[str, object]


def fixture(name, alpha=None):
    """Benchmark fixtures used throughout the tests and the CLI.

    ``ex34`` and ``ex35`` are parameterized by ``alpha``; the others
    ignore it.
    """
    if name in ("ex34", "ex35") and alpha is None:
        raise ValidationError(f"fixture {name} requires alpha")

    if name == "ex31":
        problem = LqrProblem(
            A=[[0.0]], B=[[0.5]], C=[[1.0]], Q=[[1.0]], R=[[1.0]],
            Sigma=[[1.0]], label="ex31",
        )
        facts = {
            "cost": "f(k) = k + 1/k",
            "minimizer": 1.0,
            "minimum": 2.0,
            "stabilizing_set": "k > 0",
        }
    elif name == "ex32":
        eye2 = np.eye(2)
        problem = LqrProblem(
            A=eye2, B=eye2, C=eye2, Q=eye2, R=eye2, Sigma=eye2, label="ex32"
        )
        facts = {
            "stabilizing_set": "k11 + k22 > 2 and (1 - k11)(1 - k22) > k12 k21",
            "cut": "x = k11 = k12, y = k22 = k21 (empty along this cut)",
        }
    elif name == "ex33":
        problem = LqrProblem(
            A=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
            B=[[0.0], [0.0], [1.0]],
            C=np.eye(3),
            Q=np.eye(3),
            R=[[1.0]],
            Sigma=np.eye(3),
            label="ex33",
        )
        facts = {"stabilizing_set": "k1 > 0, k3 > 0, k2 k3 > k1"}
    elif name == "ex34":
        problem = LqrProblem(
            A=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -1.0, float(alpha)]],
            B=[[0.0], [0.0], [1.0]],
            C=[[5.0, 2.0, 1.0]],
            Q=np.eye(3),
            R=[[1.0]],
            Sigma=np.eye(3),
            label=f"ex34(alpha={alpha:g})",
        )
        facts = {
            "stabilizing_set": "k - alpha > 0 and (k - alpha)(2k + 1) > 5k + 1 > 0",
            "alpha": float(alpha),
        }
        if alpha == -1.0:
            facts["components"] = ((-0.2, 0.0), (1.0, None))
        elif alpha == -1.4:
            facts["components"] = ((-0.2, None),)
            facts["local_minima"] = 2
    elif name == "ex35":
        problem = LqrProblem(
            A=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -1.0, -float(alpha)]],
            B=[[0.0], [0.0], [1.0]],
            C=[[1.0, 1.0, 0.0], [1.0, -1.0, 1.0]],
            Q=np.eye(3),
            R=[[1.0]],
            Sigma=np.eye(3),
            label=f"ex35(alpha={alpha:g})",
        )
        facts = {
            "stabilizing_set": (
                "alpha + k2 > 0, 1 + k1 + k2 > 0, "
                "(alpha + k2)(1 + k1 - k2) > 1 + k1 + k2"
            ),
            "alpha": float(alpha),
        }
        if alpha == 1.2:
            facts["saddle"] = (1.95, 0.38)
    elif name == "toy_scalar":
        problem = LqrProblem(
            A=[[-1.0]], B=[[1.0]], C=[[1.0]], Q=[[1.0]], R=[[1.0]],
            Sigma=[[1.0]], label="toy_scalar",
        )
        facts = {
            "cost_at_zero": 0.5,
            "optimal_gain": 2.0**0.5 - 1.0,
        }
    else:
        raise ValidationError(f"unknown fixture {name!r}")
    return Fixture(problem=problem, facts=facts)


FIXTURE_NAMES = ("ex31", "ex32", "ex33", "ex34", "ex35", "toy_scalar")


def generate_random_problem(n, m, seed, max_attempts=10):
    """Random state-feedback instance from the documented recipe.

    With u ~ uniform(0,1) drawn row-major from :class:`Uniform64`:
    A = rand(n,n)/n - I, B = ones(n,m) + rand(n,m)/2, Q = Q1 Q1',
    R = R1 R1' with Q1 = rand(n,n), R1 = rand(m,m); C = I, Sigma = I,
    and K0 = 0 (stabilizing since A is Hurwitz).  If A fails the
    stability check (possible at tiny n) the sub-seed is incremented,
    up to ``max_attempts`` times.  A numerically singular Q or R is
    nudged by 1e-9 I, with a warning recording the fact.
    """
    if n < 1 or m < 1:
        raise ValidationError("n and m must be at least 1")
    for attempt in range(max_attempts):
        rng = Uniform64(seed + attempt)
        A = rng.matrix(n, n) / n - np.eye(n)
        B = np.ones((n, m)) + 0.5 * rng.matrix(n, m)
        Q1 = rng.matrix(n, n)
        R1 = rng.matrix(m, m)
        Q = Q1 @ Q1.T
        R = R1 @ R1.T
        if not is_stabilizing(A):
            continue
        regularized = []
        Q, fixed = _regularize_spd(Q)
        if fixed:
            regularized.append("Q")
        R, fixed = _regularize_spd(R)
        if fixed:
            regularized.append("R")
        label = f"rand-n{n}-m{m}-seed{seed}"
        if regularized:
            label += "-reg" + "".join(regularized)
            warnings.warn(
                f"{label}: added 1e-9 I to {', '.join(regularized)} "
                "(numerically singular draw)",
                stacklevel=2,
            )
        return LqrProblem(
            A=A, B=B, C=np.eye(n), Q=Q, R=R, Sigma=np.eye(n),
            label=label, k0=np.zeros((m, n)),
        )
    raise ConvergenceError(
        f"no Hurwitz A generated in {max_attempts} attempts (n={n}, seed={seed})"
    )


def _regularize_spd(S):
    try:
        chol = np.linalg.cholesky(S)
        if np.diag(chol).min() ** 2 > 1e-12 * np.diag(S).max():
            return S, False
    except np.linalg.LinAlgError:
        pass
    return S + 1e-9 * np.eye(S.shape[0]), True


# ---------------------------------------------------------------------------
# Benchmark


METHOD_NAMES = ("gd", "gdn", "cgn")


@dataclass(frozen=True)
class BenchmarkConfig:
    n: int = 20
    m: int = 5
    seed: int = 1
    methods: Tuple[str, ...] = METHOD_NAMES
    max_iter: int = 500
    grad_tol: float = 1e-6

    def __post_init__(self):
        if not self.n >= self.m >= 1:
            raise ValidationError("need n >= m >= 1")
        if not self.methods:
            raise ValidationError("methods must be nonempty")
        unknown = set(self.methods) - set(METHOD_NAMES)
        if unknown:
            raise ValidationError(f"unknown methods: {sorted(unknown)}")


@dataclass
class MethodOutcome:
    trace: Optional[RunTrace]
    final_f: Optional[float] = None
    final_gap: Optional[float] = None
    final_rel_err: Optional[float] = None
    gamma: Optional[float] = None
    failure: Optional[str] = None


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    fstar: float
    kstar: np.ndarray
    outcomes: Dict[str, MethodOutcome] = field(default_factory=dict)

    def to_dict(self):
        d = {
            "n": self.config.n,
            "m": self.config.m,
            "seed": self.config.seed,
            "grad_tol": self.config.grad_tol,
            "max_iter": self.config.max_iter,
            "fstar": self.fstar,
            "methods": {},
        }
        for name, out in self.outcomes.items():
            entry = {
                "final_f": out.final_f,
                "final_gap": out.final_gap,
                "final_rel_err": out.final_rel_err,
                "iterations": len(out.trace.iterations) if out.trace else None,
                "termination": out.trace.termination if out.trace else None,
                "failure": out.failure,
            }
            if out.gamma is not None:
                entry["gamma"] = out.gamma
            d["methods"][name] = entry
        return d


def tune_constant_step(
    problem,
    K0,
    initial=1.0,
    probe_iters=10,
    max_halvings=60,
    max_doublings=40,
):
    """Constant step size tuned by doubling/halving until the first
    ``probe_iters`` iterations are monotone and stabilizing."""

    def monotone(gamma):
        trace = gradient_descent(
            problem, K0, ConstantStep(gamma), grad_tol=0.0, max_iter=probe_iters
        )
        if trace.termination == TERM_FAILURE:
            return False
        fs = [rec.f for rec in trace.iterations]
        fs.append(evaluate(problem, trace.terminal_gain).f)
        return all(b <= a for a, b in zip(fs, fs[1:]))

    gamma = float(initial)
    halvings = 0
    while not monotone(gamma):
        gamma *= 0.5
        halvings += 1
        if halvings > max_halvings:
            raise ConvergenceError(
                "no monotone constant step found by halving", residuals=[gamma]
            )
    for _ in range(max_doublings):
        if monotone(2.0 * gamma):
            gamma *= 2.0
        else:
            break
    return gamma


def run_benchmark(config):
    """Run the configured methods on one random instance and report
    per-method traces plus distances to the Riccati optimum.

    A method ending in failure is recorded in its outcome, never fatal to
    the report.
    """
    problem = generate_random_problem(config.n, config.m, config.seed)
    K0 = problem.k0
    _, kstar = riccati_optimum(problem)
    fstar = evaluate(problem, kstar).f
    kstar_norm = frobenius(kstar)

    report = BenchmarkReport(config=config, fstar=fstar, kstar=kstar)
    for name in config.methods:
        outcome = MethodOutcome(trace=None)
        try:
            if name == "gd":
                gamma = tune_constant_step(problem, K0)
                outcome.gamma = gamma
                trace = gradient_descent(
                    problem,
                    K0,
                    ConstantStep(gamma),
                    grad_tol=config.grad_tol,
                    max_iter=config.max_iter,
                )
            elif name == "gdn":
                trace = algorithm1(
                    problem, K0, eps=config.grad_tol, max_iter=config.max_iter
                )
            else:
                trace = conjugate_gradient(
                    problem, K0, eps=config.grad_tol, max_iter=config.max_iter
                )
            outcome.trace = trace
            outcome.final_f = evaluate(problem, trace.terminal_gain).f
            outcome.final_gap = outcome.final_f - fstar
            outcome.final_rel_err = (
                frobenius(trace.terminal_gain - kstar) / kstar_norm
            )
            if trace.termination == TERM_FAILURE:
                outcome.failure = trace.failure_reason
        except Exception as exc:  # noqa: BLE001 - per-method isolation
            outcome.failure = f"{type(exc).__name__}: {exc}"
        report.outcomes[name] = outcome
    return report


# ---------------------------------------------------------------------------
# Landscape scans


@dataclass(frozen=True)
class ScanAxis:
    """One scan axis: a set of gain entries tied to a common value swept
    over ``num`` points in [start, stop]."""

    entries: Tuple[Tuple[int, int], ...]
    start: float
    stop: float
    num: int

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("axis needs at least one gain entry")
        if self.num < 1:
            raise ValidationError("axis needs num >= 1")

    def grid(self):
        return np.linspace(self.start, self.stop, self.num)


@dataclass
class LandscapeScan:
    """Grid of cost values; points outside the stabilizing set carry NaN in
    ``values`` and False in ``stabilizing`` (never a fabricated value)."""

    axes: Tuple[ScanAxis, ...]
    values: np.ndarray
    stabilizing: np.ndarray


def landscape_scan(problem, axes, base_gain=None):
    """Evaluate the cost over a 1D or 2D grid of gain entries."""
    axes = tuple(axes)
    if len(axes) not in (1, 2):
        raise ValidationError("scan supports 1 or 2 axes")
    for axis in axes:
        for (i, j) in axis.entries:
            if not (0 <= i < problem.m and 0 <= j < problem.r):
                raise ValidationError(
                    f"axis entry ({i}, {j}) outside gain shape "
                    f"({problem.m}, {problem.r})"
                )
    base = (
        np.zeros((problem.m, problem.r))
        if base_gain is None
        else problem.gain(base_gain).copy()
    )

    def value_at(settings):
        K = base.copy()
        for axis, v in settings:
            for (i, j) in axis.entries:
                K[i, j] = v
        try:
            return evaluate(problem, K).f
        except StabilityError:
            return None

    if len(axes) == 1:
        grid = axes[0].grid()
        values = np.full(grid.shape, np.nan)
        mask = np.zeros(grid.shape, dtype=bool)
        for a, x in enumerate(grid):
            f = value_at([(axes[0], x)])
            if f is not None:
                values[a] = f
                mask[a] = True
    else:
        g0, g1 = axes[0].grid(), axes[1].grid()
        values = np.full((g0.size, g1.size), np.nan)
        mask = np.zeros((g0.size, g1.size), dtype=bool)
        for a, x in enumerate(g0):
            for b, y in enumerate(g1):
                f = value_at([(axes[0], x), (axes[1], y)])
                if f is not None:
                    values[a, b] = f
                    mask[a, b] = True
    return LandscapeScan(axes=axes, values=values, stabilizing=mask)


def stabilizing_intervals(scan):
    """Maximal runs of stabilizing points in a 1D scan, as index pairs."""
    if scan.values.ndim != 1:
        raise ValidationError("intervals are defined for 1D scans")
    runs = []
    start = None
    for idx, ok in enumerate(scan.stabilizing):
        if ok and start is None:
            start = idx
        elif not ok and start is not None:
            runs.append((start, idx - 1))
            start = None
    if start is not None:
        runs.append((start, len(scan.stabilizing) - 1))
    return runs


# ---------------------------------------------------------------------------
# Flat-file I/O

_REQUIRED_FIELDS = ("n", "m", "r", "A", "B", "C", "Q", "R", "Sigma")


def save_problem(problem, path):
    """Write a problem as JSON with lossless (round-trippable) numbers."""
    data = {
        "n": problem.n,
        "m": problem.m,
        "r": problem.r,
        "A": problem.A.tolist(),
        "B": problem.B.tolist(),
        "C": problem.C.tolist(),
        "Q": problem.Q.tolist(),
        "R": problem.R.tolist(),
        "Sigma": problem.Sigma.tolist(),
    }
    if problem.k0 is not None:
        data["K0"] = problem.k0.tolist()
    if problem.label is not None:
        data["label"] = problem.label
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_problem(path):
    """Read a problem file, validating shape consistency field by field."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for name in _REQUIRED_FIELDS:
        if name not in data:
            raise ValidationError(f"problem file is missing field {name!r}")
    n, m, r = data["n"], data["m"], data["r"]
    shapes = {
        "A": (n, n),
        "B": (n, m),
        "C": (r, n),
        "Q": (n, n),
        "R": (m, m),
        "Sigma": (n, n),
    }
    arrays = {}
    for name, shape in shapes.items():
        arr = np.asarray(data[name], dtype=float)
        if arr.shape != shape:
            raise ValidationError(
                f"field {name!r} has shape {arr.shape}, expected {shape}"
            )
        arrays[name] = arr
    k0 = None
    if "K0" in data:
        k0 = np.asarray(data["K0"], dtype=float)
        if k0.shape != (m, r):
            raise ValidationError(
                f"field 'K0' has shape {k0.shape}, expected {(m, r)}"
            )
    return LqrProblem(
        A=arrays["A"],
        B=arrays["B"],
        C=arrays["C"],
        Q=arrays["Q"],
        R=arrays["R"],
        Sigma=arrays["Sigma"],
        label=data.get("label"),
        k0=k0,
    )


TRACE_HEADER = "iter,f,grad_norm,step,shrinks,stabilizing"


def save_trace(trace, path):
    """Trace CSV: one data row per completed iteration."""
    lines = [TRACE_HEADER]
    for rec in trace.iterations:
        lines.append(
            f"{rec.index},{rec.f!r},{rec.grad_norm!r},{rec.step!r},"
            f"{rec.shrinks},{int(rec.stabilizing)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


FLOW_HEADER = "t,f,grad_norm"


def save_flow_trace(trace: FlowTrace, path):
    """Flow CSV: one data row per accepted integrator node."""
    lines = [FLOW_HEADER]
    for s in trace.samples:
        lines.append(f"{s.t!r},{s.f!r},{s.grad_norm!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_scan_csv(scan, path):
    """Scan CSV; the f cell is left empty at non-stabilizing points."""
    lines = []
    if scan.values.ndim == 1:
        lines.append("x,f,stabilizing")
        grid = scan.axes[0].grid()
        for a, x in enumerate(grid):
            f = repr(float(scan.values[a])) if scan.stabilizing[a] else ""
            lines.append(f"{x!r},{f},{int(scan.stabilizing[a])}")
    else:
        lines.append("x,y,f,stabilizing")
        g0, g1 = scan.axes[0].grid(), scan.axes[1].grid()
        for a, x in enumerate(g0):
            for b, y in enumerate(g1):
                ok = scan.stabilizing[a, b]
                f = repr(float(scan.values[a, b])) if ok else ""
                lines.append(f"{x!r},{y!r},{f},{int(ok)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
