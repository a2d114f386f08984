"""Gradient methods on the stabilizing set, and their generic counterparts.

Contains the gradient flow (adaptive embedded Runge-Kutta with a
stabilization guard), discrete gradient descent under three step rules
(constant, Newton-quotient line search, safe-bound), the conjugate
gradient variant, and the callback-based generic optimizer with the same
Newton-quotient step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .errors import DegenerateDirection, StabilityError, ValidationError
from .linalg import frobenius, is_stabilizing, solve_lyapunov, spectrum
from .model import evaluate, hessian_form

TERM_GRAD_TOL = "grad_tol"
TERM_MAX_ITER = "max_iter"
TERM_T_END = "t_end"
TERM_FAILURE = "failure"

#: Hard cap on step reductions within one iteration; exceeding it signals
#: either a non-smooth region or a bug.
MAX_SHRINKS = 60

#: Cap applied to the Newton-quotient step when no explicit bound is given.
STEP_CAP = 1e6


@dataclass(frozen=True)
class ConstantStep:
    """Fixed step size; descent is guaranteed only for gamma <= 2/L."""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")


@dataclass(frozen=True)
class NewtonArmijoStep:
    """Newton-quotient trial step capped at t1, backtracked by the Armijo
    rule.  ``t1=None`` defaults to the global ``STEP_CAP``."""

    t1: Optional[float] = None
    armijo_c: float = 0.01
    shrink: float = 0.5

    def __post_init__(self):
        if self.t1 is not None and not self.t1 > 0:
            raise ValidationError("t1 must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValidationError("armijo_c must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValidationError("shrink must lie in (0, 1)")


@dataclass(frozen=True)
class SafeBoundStep:
    """Step at ``margin`` times the stabilization-preserving bound
    1/lambda_max(G); guarantees the iterate stays stabilizing."""

    margin: float

    def __post_init__(self):
        if not 0 < self.margin < 1:
            raise ValidationError("margin must lie in (0, 1)")


StepRule = Union[ConstantStep, NewtonArmijoStep, SafeBoundStep]


@dataclass(frozen=True)
class IterationRecord:
    index: int
    f: float
    grad_norm: float
    step: float
    shrinks: int
    stabilizing: bool


@dataclass
class RunTrace:
    """Per-iteration record of a descent run.

    Each record describes the iterate *before* the accepted step; the
    point reached by the last step is ``terminal_gain``.  ``gains`` holds
    the matching iterates so invariants can be re-checked after the run.
    """

    iterations: List[IterationRecord]
    gains: List[np.ndarray]
    terminal_gain: np.ndarray
    termination: str
    failure_reason: Optional[str] = None


@dataclass(frozen=True)
class FlowSample:
    t: float
    K: np.ndarray
    f: float
    grad_norm: float


@dataclass
class FlowTrace:
    """Sampled gradient-flow trajectory with integrator statistics."""

    samples: List[FlowSample]
    integrator_stats: dict = field(default_factory=dict)
    termination: str = TERM_T_END
    failure_reason: Optional[str] = None


def _try_evaluate(problem, K):
    try:
        return evaluate(problem, K)
    except StabilityError:
        return None


def newton_quotient_step(problem, K, cost=None):
    """One-Newton-step length along the gradient:
    ||grad||_F^2 / hessian_form(grad).

    Returns ``math.inf`` when the quadratic form is not positive (the
    caller caps the step); raises :class:`DegenerateDirection` on a zero
    gradient.
    """
    K = problem.gain(K)
    ev = cost if cost is not None else evaluate(problem, K)
    gn2 = float(np.vdot(ev.grad, ev.grad))
    if gn2 == 0.0:
        raise DegenerateDirection("gradient is zero; no step direction")
    quad = hessian_form(problem, K, ev.grad, cost=ev)
    if quad <= 0.0:
        return math.inf
    return gn2 / quad


def safe_step_bound(problem, K, D):
    """Largest step along -D guaranteed to keep K - tD stabilizing.

    Builds G = (BDC)Y + Y(BDC)' with Y solving A_K Y + Y A_K' + I = 0 and
    returns 1/lambda_max(G); ``math.inf`` when lambda_max(G) <= 0 (any
    step keeps the loop stable).
    """
    K = problem.gain(K)
    D = problem.gain(D)
    A_K = problem.A - problem.B @ K @ problem.C
    info = spectrum(A_K)
    if info.spectral_abscissa >= 0.0:
        raise StabilityError(
            f"gain is not stabilizing (spectral abscissa {info.spectral_abscissa:.6e})",
            abscissa=info.spectral_abscissa,
        )
    Y = solve_lyapunov(A_K, np.eye(problem.n), adjoint=False).X
    BDC = problem.B @ D @ problem.C
    G = BDC @ Y + Y @ BDC.T
    lam_max = float(np.linalg.eigvalsh(0.5 * (G + G.T))[-1])
    if lam_max <= 0.0:
        return math.inf
    return 1.0 / lam_max


def algorithm1(
    problem,
    K0,
    eps,
    armijo_c=0.01,
    shrink=0.5,
    t1=None,
    max_iter=500,
):
    """Gradient descent with the Newton-quotient trial step and Armijo
    backtracking (the workhorse method, "GDN").

    Each iteration takes t = min(t1, ||g||^2 / hessian_form(g)) and
    shrinks it until the trial gain is stabilizing *and* achieves the
    sufficient decrease armijo_c * t * ||g||^2.  Stops when
    ||grad||_F < eps.
    """
    NewtonArmijoStep(t1=t1, armijo_c=armijo_c, shrink=shrink)  # validate
    if not eps > 0:
        raise ValidationError("eps must be positive")
    K = problem.gain(K0)
    ev = evaluate(problem, K)
    records: List[IterationRecord] = []
    gains: List[np.ndarray] = []
    cap = t1
    for j in range(max_iter):
        gn = frobenius(ev.grad)
        if gn < eps:
            return RunTrace(records, gains, K, TERM_GRAD_TOL)
        quad = hessian_form(problem, K, ev.grad, cost=ev)
        t_newton = gn * gn / quad if quad > 0.0 else math.inf
        t = min(cap if cap is not None else STEP_CAP, t_newton)
        shrinks = 0
        while True:
            trial = K - t * ev.grad
            ev_trial = _try_evaluate(problem, trial)
            if ev_trial is not None and ev_trial.f <= ev.f - armijo_c * t * gn * gn:
                break
            shrinks += 1
            if shrinks > MAX_SHRINKS:
                return RunTrace(
                    records,
                    gains,
                    K,
                    TERM_FAILURE,
                    failure_reason=(
                        f"step shrank {MAX_SHRINKS} times without acceptance"
                    ),
                )
            t *= shrink
        records.append(IterationRecord(j, ev.f, gn, t, shrinks, True))
        gains.append(K)
        K, ev = trial, ev_trial
    return RunTrace(records, gains, K, TERM_MAX_ITER)


def _constant_descent(problem, K0, rule, grad_tol, max_iter):
    K = problem.gain(K0)
    ev = evaluate(problem, K)
    records: List[IterationRecord] = []
    gains: List[np.ndarray] = []
    for j in range(max_iter):
        gn = frobenius(ev.grad)
        if gn < grad_tol:
            return RunTrace(records, gains, K, TERM_GRAD_TOL)
        trial = K - rule.gamma * ev.grad
        ev_trial = _try_evaluate(problem, trial)
        if ev_trial is None:
            return RunTrace(
                records,
                gains,
                K,
                TERM_FAILURE,
                failure_reason=(
                    f"constant step gamma={rule.gamma:g} produced a "
                    "non-stabilizing gain (gamma exceeds the theory range)"
                ),
            )
        records.append(IterationRecord(j, ev.f, gn, rule.gamma, 0, True))
        gains.append(K)
        K, ev = trial, ev_trial
    return RunTrace(records, gains, K, TERM_MAX_ITER)


def _safe_bound_descent(problem, K0, rule, grad_tol, max_iter):
    K = problem.gain(K0)
    ev = evaluate(problem, K)
    records: List[IterationRecord] = []
    gains: List[np.ndarray] = []
    for j in range(max_iter):
        gn = frobenius(ev.grad)
        if gn < grad_tol:
            return RunTrace(records, gains, K, TERM_GRAD_TOL)
        bound = safe_step_bound(problem, K, ev.grad)
        if math.isfinite(bound):
            t = rule.margin * bound
        else:
            # unbounded: every step stays stabilizing, so fall back to the
            # Newton quotient for a sensibly scaled descent step
            t = min(newton_quotient_step(problem, K, cost=ev), STEP_CAP)
        shrinks = 0
        while True:
            trial = K - t * ev.grad
            ev_trial = _try_evaluate(problem, trial)
            if ev_trial is not None and ev_trial.f < ev.f:
                break
            shrinks += 1
            if shrinks > MAX_SHRINKS:
                return RunTrace(
                    records,
                    gains,
                    K,
                    TERM_FAILURE,
                    failure_reason="safe-bound step found no descent",
                )
            t *= 0.5
        records.append(IterationRecord(j, ev.f, gn, t, shrinks, True))
        gains.append(K)
        K, ev = trial, ev_trial
    return RunTrace(records, gains, K, TERM_MAX_ITER)


def gradient_descent(problem, K0, rule, grad_tol, max_iter=500):
    """Discrete gradient method K <- K - t grad f(K) under a step rule."""
    if grad_tol < 0:
        raise ValidationError("grad_tol must be nonnegative")
    if isinstance(rule, NewtonArmijoStep):
        return algorithm1(
            problem,
            K0,
            eps=max(grad_tol, np.finfo(float).tiny),
            armijo_c=rule.armijo_c,
            shrink=rule.shrink,
            t1=rule.t1,
            max_iter=max_iter,
        )
    if isinstance(rule, ConstantStep):
        return _constant_descent(problem, K0, rule, grad_tol, max_iter)
    if isinstance(rule, SafeBoundStep):
        return _safe_bound_descent(problem, K0, rule, grad_tol, max_iter)
    raise ValidationError(f"unknown step rule {rule!r}")


def _cg_engine(
    try_eval,
    quad_form,
    x0,
    tol,
    t1,
    max_iter,
    armijo_c,
    shrink,
):
    """Conjugate-gradient loop over a flat or matrix variable.

    ``try_eval(x)`` returns ``(f, grad, ctx)`` or ``None`` when ``x`` is
    infeasible; ``quad_form(x, p, ctx)`` is the Hessian quadratic form.
    The step along the current direction is its Newton quotient
    -<g, p>/<Hp, p> capped at ``t1``; a step that is infeasible or fails
    the Armijo test restarts along the steepest descent direction, where
    it may shrink as in :func:`algorithm1`.
    """
    state = try_eval(x0)
    if state is None:
        raise StabilityError("initial point is infeasible")
    fx, g, ctx = state
    x = x0
    records: List[IterationRecord] = []
    gains: List[np.ndarray] = []
    p_prev = None
    gn2_prev = None
    cap = t1 if t1 is not None else STEP_CAP

    def newton_step(slope, quad):
        raw = -slope / quad if quad > 0.0 else math.inf
        return min(cap, raw)

    for j in range(max_iter):
        gn2 = float(np.vdot(g, g))
        gn = math.sqrt(gn2)
        if gn < tol:
            return RunTrace(records, gains, x, TERM_GRAD_TOL)
        steepest = p_prev is None
        if steepest:
            p = -g
        else:
            beta = gn2 / gn2_prev
            p = -g + beta * p_prev
            if float(np.vdot(g, p)) >= 0.0:
                p = -g
                steepest = True
        slope = float(np.vdot(g, p))
        quad = quad_form(x, p, ctx)
        t = newton_step(slope, quad)
        shrinks = 0
        while True:
            trial_x = x + t * p
            trial = try_eval(trial_x)
            if trial is not None and trial[0] <= fx + armijo_c * t * slope:
                break
            if not steepest:
                # conjugate step failed: restart along -grad
                p = -g
                steepest = True
                slope = -gn2
                quad = quad_form(x, p, ctx)
                t = newton_step(slope, quad)
                continue
            shrinks += 1
            if shrinks > MAX_SHRINKS:
                return RunTrace(
                    records,
                    gains,
                    x,
                    TERM_FAILURE,
                    failure_reason=(
                        f"step shrank {MAX_SHRINKS} times without acceptance"
                    ),
                )
            t *= shrink
        records.append(IterationRecord(j, fx, gn, t, shrinks, True))
        gains.append(x)
        x = trial_x
        fx, g, ctx = trial
        p_prev = p
        gn2_prev = gn2
    return RunTrace(records, gains, x, TERM_MAX_ITER)


def conjugate_gradient(
    problem,
    K0,
    eps,
    t1=None,
    max_iter=500,
    armijo_c=0.01,
    shrink=0.5,
):
    """Conjugate gradient on the gain space ("CGN").

    Fletcher-Reeves combination p = -g + (||g||^2/||g_prev||^2) p_prev with
    the Newton-quotient step along p, safeguarded exactly like
    :func:`algorithm1` (restart to steepest descent on a failed step, keep
    every iterate stabilizing).  With beta_0 = 0 the first iteration
    coincides with the first step of :func:`algorithm1`.
    """
    NewtonArmijoStep(t1=t1, armijo_c=armijo_c, shrink=shrink)  # validate
    if not eps > 0:
        raise ValidationError("eps must be positive")
    K = problem.gain(K0)
    evaluate(problem, K)  # raise early with the abscissa if K0 is bad

    def try_eval(x):
        ev = _try_evaluate(problem, x)
        if ev is None:
            return None
        return ev.f, ev.grad, ev

    def quad_form(x, p, ctx):
        return hessian_form(problem, x, p, cost=ctx)

    return _cg_engine(try_eval, quad_form, K, eps, t1, max_iter, armijo_c, shrink)


def generic_conjugate_gradient(f, grad, hess_quad, x0, tol=1e-8, t1=None, max_iter=200):
    """Conjugate gradient for callbacks on R^n (same engine as
    :func:`conjugate_gradient`, no feasibility constraint).

    On a positive definite quadratic the Armijo test always accepts the
    Newton-quotient step, so the method reduces to exact-line-search CG
    and terminates in at most n iterations.  With no feasible set to
    protect, the step cap defaults to ``STEP_CAP`` outright.
    """
    x0 = np.asarray(x0, dtype=float).copy()

    def try_eval(x):
        return float(f(x)), np.asarray(grad(x), dtype=float), None

    def quad_form(x, p, ctx):
        return float(hess_quad(x, p))

    return _cg_engine(try_eval, quad_form, x0, tol, t1, max_iter, 0.01, 0.5)


def _check_callbacks(f, grad, x0, rtol=1e-3):
    g = np.asarray(grad(x0), dtype=float)
    if g.shape != x0.shape:
        raise ValidationError("grad(x0) does not match the shape of x0")
    h = 1e-6 * (1.0 + float(np.linalg.norm(x0)))
    directions = [
        np.ones_like(x0),
        np.where(np.arange(x0.size) % 2 == 0, 1.0, -1.0).reshape(x0.shape),
    ]
    for d in directions:
        d = d / np.linalg.norm(d)
        fd = (f(x0 + h * d) - f(x0 - h * d)) / (2.0 * h)
        slope = float(np.vdot(g, d))
        if abs(fd - slope) > rtol * (1.0 + abs(slope)):
            raise ValidationError(
                "grad callback is inconsistent with f at x0 "
                f"(directional derivative {slope:.6e} vs finite difference {fd:.6e})"
            )


def generic_descent(
    f: Callable,
    grad: Callable,
    hess_quad: Callable,
    x0,
    damping: Optional[float] = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
):
    """Gradient descent on R^n with the Newton-quotient step size
    gamma = ||g||^2 / <hess g, g> (optionally damped by ``damping``).

    ``hess_quad(x, v)`` must return the quadratic form of the Hessian at x
    along v.  The undamped step equals exact line search on quadratics;
    the damped variant (``damping <= mu/L``) contracts globally on
    strongly convex functions.  Callback consistency is spot-checked at
    ``x0`` before iterating.
    """
    x = np.asarray(x0, dtype=float).copy()
    if damping is not None and not 0 < damping <= 1:
        raise ValidationError("damping must lie in (0, 1]")
    _check_callbacks(f, grad, x)
    records: List[IterationRecord] = []
    points: List[np.ndarray] = []
    for j in range(max_iter):
        g = np.asarray(grad(x), dtype=float)
        gn2 = float(np.vdot(g, g))
        gn = math.sqrt(gn2)
        if gn < tol:
            return RunTrace(records, points, x, TERM_GRAD_TOL)
        quad = float(hess_quad(x, g))
        if quad <= 0.0:
            return RunTrace(
                records,
                points,
                x,
                TERM_FAILURE,
                failure_reason="nonpositive curvature along the gradient",
            )
        gamma = gn2 / quad
        if damping is not None:
            gamma *= damping
        records.append(IterationRecord(j, float(f(x)), gn, gamma, 0, True))
        points.append(x.copy())
        x = x - gamma * g
    return RunTrace(records, points, x, TERM_MAX_ITER)


def multi_start(problem, starts, eps, **kwargs):
    """Run :func:`algorithm1` from several starts, skipping the
    non-stabilizing ones.  Returns one trace per surviving start."""
    traces = []
    for K0 in starts:
        try:
            traces.append(algorithm1(problem, K0, eps, **kwargs))
        except StabilityError:
            continue
    return traces


# ---------------------------------------------------------------------------
# Gradient flow


# Fehlberg 4(5) embedded pair
_RKF_C = (0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5)
_RKF_A = (
    (),
    (0.25,),
    (3.0 / 32.0, 9.0 / 32.0),
    (1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0),
    (439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0),
    (-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0),
)
_RKF_B4 = (25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0)
_RKF_B5 = (
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
)


def gradient_flow(problem, K0, t_end, grad_tol=0.0, rtol=1e-8, max_step=None):
    """Integrate dK/dt = -grad f(K) from ``K0`` with an adaptive embedded
    4(5) Runge-Kutta pair.

    Steps are rejected when the local error estimate exceeds the
    tolerance *or* the endpoint leaves the stabilizing set (the flow is
    only defined there).  Samples are recorded at every accepted node.
    Stops at ``t_end``, when the gradient norm falls below ``grad_tol``,
    or with a failure trace when the step size underflows near the
    boundary of the stabilizing set.
    """
    if not t_end > 0:
        raise ValidationError("t_end must be positive")
    if not rtol > 0:
        raise ValidationError("rtol must be positive")
    if grad_tol < 0:
        raise ValidationError("grad_tol must be nonnegative")
    atol = 1e-2 * rtol

    K = problem.gain(K0)
    ev = evaluate(problem, K)
    samples = [FlowSample(0.0, K.copy(), ev.f, frobenius(ev.grad))]
    steps = 0
    rejected = 0
    t = 0.0
    h_cap = max_step if max_step is not None else math.inf
    h = min(1e-2 * t_end, h_cap)
    h_min = 1e-14 * t_end

    def rhs(Kx):
        # None when the stage leaves the stabilizing set
        ev_x = _try_evaluate(problem, Kx)
        if ev_x is None:
            return None
        return -ev_x.grad

    while t < t_end:
        if frobenius(ev.grad) <= grad_tol:
            return FlowTrace(
                samples,
                {"steps": steps, "rejected_steps": rejected},
                TERM_GRAD_TOL,
            )
        h = min(h, t_end - t)
        if h < h_min:
            return FlowTrace(
                samples,
                {"steps": steps, "rejected_steps": rejected},
                TERM_FAILURE,
                failure_reason=(
                    "step size underflow (trajectory approaching the "
                    "boundary of the stabilizing set)"
                ),
            )
        ks = [-ev.grad]
        failed_stage = False
        for i in range(1, 6):
            Ki = K + h * sum(a * k for a, k in zip(_RKF_A[i], ks))
            ki = rhs(Ki)
            if ki is None:
                failed_stage = True
                break
            ks.append(ki)
        if failed_stage:
            rejected += 1
            h *= 0.5
            continue
        K4 = K + h * sum(b * k for b, k in zip(_RKF_B4, ks))
        K5 = K + h * sum(b * k for b, k in zip(_RKF_B5, ks))
        err = frobenius(K5 - K4)
        scale = atol + rtol * max(frobenius(K), frobenius(K5))
        ev_new = _try_evaluate(problem, K5) if err <= scale else None
        if ev_new is None:
            rejected += 1
            if err > scale and err > 0:
                h *= max(0.1, min(0.5, 0.9 * (scale / err) ** 0.2))
            else:
                h *= 0.5
            continue
        t += h
        K, ev = K5, ev_new
        steps += 1
        samples.append(FlowSample(t, K.copy(), ev.f, frobenius(ev.grad)))
        if err > 0:
            h *= min(4.0, max(0.2, 0.9 * (scale / err) ** 0.2))
        else:
            h *= 4.0
        h = min(h, h_cap)

    return FlowTrace(
        samples,
        {"steps": steps, "rejected_steps": rejected},
        TERM_T_END,
    )
