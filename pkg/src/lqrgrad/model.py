"""Cost, derivatives, analytic bounds, and the Riccati reference optimum.

The object of study is the quadratic performance index

    f(K) = Tr(X Sigma),   A_K' X + X A_K + C'K'RKC + Q = 0,

defined on the open set of stabilizing gains K (A_K = A - BKC Hurwitz).
This module evaluates f, its gradient and Hessian quadratic form, the
coercivity / smoothness / gradient-domination constants attached to a
starting gain, and the optimal state-feedback gain via Newton-Kleinman
iteration on the algebraic Riccati equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConvergenceError,
    StabilityError,
    UnsupportedForOutputFeedback,
    ValidationError,
)
from .linalg import (
    STABILITY_TOL,
    as_square_matrix,
    eig_bounds_sym,
    frobenius,
    is_stabilizing,
    solve_lyapunov,
    spectral_norm,
    spectrum,
    symmetric_part,
)


def _inner(A, B):
    # Frobenius inner product <A, B> = Tr(A'B)
    return float(np.vdot(A, B))


def _checked_spd(S, name):
    S = as_square_matrix(S, name)
    scale = max(1.0, float(np.linalg.norm(S)))
    if np.linalg.norm(S - S.T) > 1e-12 * scale:
        raise ValidationError(f"{name} must be symmetric")
    S = symmetric_part(S)
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValidationError(f"{name} must be positive definite") from None
    pivots = np.diag(chol) ** 2
    if pivots.min() <= 1e-12 * max(np.diag(S).max(), np.finfo(float).tiny):
        raise ValidationError(f"{name} is numerically singular")
    return S


def _as_gain(K, m, r, name="K"):
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = K.reshape(1, 1)
    elif K.ndim == 1:
        if m == 1 and K.size == r:
            K = K.reshape(1, r)
        elif r == 1 and K.size == m:
            K = K.reshape(m, 1)
    if K.shape != (m, r):
        raise ValidationError(f"{name} must have shape ({m}, {r}), got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValidationError(f"{name} contains non-finite entries")
    return K


@dataclass(frozen=True, eq=False)
class LqrProblem:
    """Plant and cost data (A, B, C, Q, R, Sigma).

    Q, R and Sigma must be symmetric positive definite, C must have full
    row rank, and B must be nonzero.  ``C = I`` identifies the
    state-feedback problem; everything else is output feedback.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Sigma: np.ndarray
    label: Optional[str] = None
    k0: Optional[np.ndarray] = None

    def __post_init__(self):
        A = as_square_matrix(self.A, "A")
        n = A.shape[0]

        B = np.asarray(self.B, dtype=float)
        if B.ndim == 0:
            B = B.reshape(1, 1)
        elif B.ndim == 1:
            B = B.reshape(n, 1)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValidationError(f"B must have {n} rows, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ValidationError("B contains non-finite entries")
        if not B.any():
            raise ValidationError("B must be nonzero")

        C = np.asarray(self.C, dtype=float)
        if C.ndim == 0:
            C = C.reshape(1, 1)
        elif C.ndim == 1:
            C = C.reshape(1, n)
        if C.ndim != 2 or C.shape[1] != n:
            raise ValidationError(f"C must have {n} columns, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ValidationError("C contains non-finite entries")
        r = C.shape[0]
        if r > n:
            raise ValidationError("C cannot have more rows than columns")
        sv = np.linalg.svd(C, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise ValidationError("C must have full row rank")

        Q = _checked_spd(self.Q, "Q")
        if Q.shape[0] != n:
            raise ValidationError(f"Q must have order {n}")
        R = _checked_spd(self.R, "R")
        if R.shape[0] != B.shape[1]:
            raise ValidationError(f"R must have order {B.shape[1]}")
        Sigma = _checked_spd(self.Sigma, "Sigma")
        if Sigma.shape[0] != n:
            raise ValidationError(f"Sigma must have order {n}")

        k0 = self.k0
        if k0 is not None:
            k0 = _as_gain(k0, B.shape[1], r, "k0")

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "k0", k0)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def r(self):
        return self.C.shape[0]

    @property
    def is_state_feedback(self):
        return self.C.shape == (self.n, self.n) and np.array_equal(
            self.C, np.eye(self.n)
        )

    def gain(self, K):
        """Coerce ``K`` to a validated m-by-r gain array."""
        return _as_gain(K, self.m, self.r)

    def closed_loop(self, K):
        """A - B K C for a validated gain."""
        K = self.gain(K)
        return self.A - self.B @ K @ self.C


@dataclass(frozen=True)
class CostEval:
    """f(K) with its Lyapunov solutions and gradient.

    ``M = RKC - B'X`` is the factor that makes the gradient
    ``grad = 2 M Y C'`` reconstructible from the stored parts.
    """

    f: float
    X: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    grad: np.ndarray


@dataclass(frozen=True)
class HessianWorkspace:
    """Directional Lyapunov solution X'(K)[E] along a direction E."""

    Xprime: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class BoundsReport:
    """Computed constants for a problem anchored at a starting gain."""

    lower_bound_sigma: float
    lower_bound_norm: float
    L: float
    xi: float
    mu: Optional[float]
    f0: float


def evaluate(problem, K, tol=STABILITY_TOL):
    """Cost, Lyapunov solutions, and gradient at a stabilizing gain.

    Raises :class:`StabilityError` (with the spectral abscissa) when
    ``A - BKC`` is not stable within ``tol``.
    """
    K = problem.gain(K)
    A_K = problem.A - problem.B @ K @ problem.C
    info = spectrum(A_K)
    if info.spectral_abscissa >= -tol:
        raise StabilityError(
            f"gain is not stabilizing (spectral abscissa {info.spectral_abscissa:.6e})",
            abscissa=info.spectral_abscissa,
        )
    KC = K @ problem.C
    W = symmetric_part(problem.Q + KC.T @ problem.R @ KC)
    X = solve_lyapunov(A_K, W, adjoint=True).X
    Y = solve_lyapunov(A_K, problem.Sigma, adjoint=False).X
    f = float(np.trace(X @ problem.Sigma))
    M = problem.R @ KC - problem.B.T @ X
    grad = 2.0 * M @ Y @ problem.C.T
    return CostEval(f=f, X=X, Y=Y, M=M, grad=grad)


def hessian_workspace(problem, K, E, cost=None):
    """Solve the directional Lyapunov equation for X'(K)[E]."""
    K = problem.gain(K)
    E = _as_gain(E, problem.m, problem.r, "E")
    ev = cost if cost is not None else evaluate(problem, K)
    A_K = problem.A - problem.B @ K @ problem.C
    MEC = ev.M.T @ E @ problem.C
    Xprime = solve_lyapunov(A_K, MEC + MEC.T, adjoint=True).X
    return HessianWorkspace(Xprime=Xprime, direction=E)


def hessian_form(problem, K, E, cost=None):
    """Quadratic form of the second derivative of f at K along E.

    Returns the full form (twice the half-form built from the directional
    Lyapunov solution X'(K)[E]).
    """
    K = problem.gain(K)
    E = _as_gain(E, problem.m, problem.r, "E")
    ev = cost if cost is not None else evaluate(problem, K)
    ws = hessian_workspace(problem, K, E, cost=ev)
    YCt = ev.Y @ problem.C.T
    term1 = _inner(problem.R @ E @ problem.C @ YCt, E)
    term2 = _inner(problem.B.T @ ws.Xprime @ YCt, E)
    return 2.0 * (term1 - 2.0 * term2)


def coercivity_bounds(problem, K):
    """The two lower bounds on f(K): one from the closed-loop stability
    degree, one from the gain norm.  Both are guaranteed <= f(K)."""
    K = problem.gain(K)
    A_K = problem.A - problem.B @ K @ problem.C
    info = spectrum(A_K)
    if info.spectral_abscissa >= -STABILITY_TOL:
        raise StabilityError(
            f"gain is not stabilizing (spectral abscissa {info.spectral_abscissa:.6e})",
            abscissa=info.spectral_abscissa,
        )
    lam1_sigma, _ = eig_bounds_sym(problem.Sigma)
    lam1_q, _ = eig_bounds_sym(problem.Q)
    bound_sigma = lam1_sigma * lam1_q / (2.0 * info.stability_degree)

    k_norm = frobenius(K)
    if k_norm == 0.0:
        bound_norm = 0.0
    else:
        lam1_r, _ = eig_bounds_sym(problem.R)
        lam1_cct, _ = eig_bounds_sym(problem.C @ problem.C.T)
        denom = 2.0 * spectral_norm(problem.A) + 2.0 * k_norm * spectral_norm(
            problem.B
        ) * spectral_norm(problem.C)
        bound_norm = lam1_sigma * lam1_r * k_norm**2 * lam1_cct / denom
    return bound_sigma, bound_norm


def smoothness_constant(problem, f0):
    """Gradient-Lipschitz constant L (and the intermediate xi) valid on the
    sublevel set {f <= f0}.  Monotone increasing in f0."""
    if not f0 > 0:
        raise ValidationError("f0 must be positive")
    lam1_sigma, _ = eig_bounds_sym(problem.Sigma)
    lam1_q, _ = eig_bounds_sym(problem.Q)
    _, lamn_r = eig_bounds_sym(problem.R)
    norm_b = spectral_norm(problem.B)
    norm_c = spectral_norm(problem.C)
    norm_c_f = frobenius(problem.C)
    ratio = f0 * norm_b / (lam1_sigma * lam1_q)
    xi = (
        math.sqrt(problem.n)
        * f0
        / lam1_sigma
        * (ratio + math.sqrt(ratio**2 + lamn_r))
    )
    L = 2.0 * f0 / lam1_q * (lamn_r * norm_c**2 + norm_b * norm_c_f * xi)
    return L, xi


def lpl_constant(problem, f0, fstar):
    """Gradient-domination constant mu on {f <= f0} for state feedback.

    Refuses output-feedback problems: the domination inequality fails
    there (disconnected domains, multiple local minima)."""
    if not problem.is_state_feedback:
        raise UnsupportedForOutputFeedback(
            "the gradient-domination constant is defined for state feedback (C = I) only"
        )
    if not fstar > 0:
        raise ValidationError("fstar must be positive")
    if f0 < fstar:
        raise ValidationError("f0 must be at least fstar")
    lam1_sigma, _ = eig_bounds_sym(problem.Sigma)
    lam1_q, _ = eig_bounds_sym(problem.Q)
    lam1_r, _ = eig_bounds_sym(problem.R)
    inner = spectral_norm(problem.A) + spectral_norm(problem.B) ** 2 * f0 / (
        lam1_sigma * lam1_r
    )
    return lam1_r * lam1_sigma**2 * lam1_q / (8.0 * fstar * inner**2)


def y_trace_bound(problem, K, cost=None):
    """Upper bound on the largest eigenvalue of Y(K):
    f(K) / lambda_min(Q + C'K'RKC)."""
    K = problem.gain(K)
    ev = cost if cost is not None else evaluate(problem, K)
    KC = K @ problem.C
    W = symmetric_part(problem.Q + KC.T @ problem.R @ KC)
    lam1_w, _ = eig_bounds_sym(W)
    return ev.f / lam1_w


def k_norm_bound(problem, fval):
    """Upper bound on ||K||_F over the sublevel set {f <= fval}."""
    if not fval > 0:
        raise ValidationError("fval must be positive")
    lam1_sigma, _ = eig_bounds_sym(problem.Sigma)
    lam1_r, _ = eig_bounds_sym(problem.R)
    norm_b = spectral_norm(problem.B)
    return 2.0 * norm_b * fval / (lam1_sigma * lam1_r) + spectral_norm(
        problem.A
    ) / norm_b


def riccati_optimum(problem, K0=None, rtol=1e-9, max_iter=60):
    """Stabilizing Riccati solution and optimal gain for state feedback.

    Newton-Kleinman iteration: each step solves the Lyapunov equation of
    the current closed loop and refreshes the gain as R^{-1} B' X.  The
    iterate sequence is monotone in X and quadratically convergent from
    any stabilizing start.  ``K0`` defaults to zero when A is Hurwitz.
    """
    if not problem.is_state_feedback:
        raise UnsupportedForOutputFeedback(
            "the Riccati optimum is computed for state feedback (C = I) only"
        )
    if K0 is None:
        K = np.zeros((problem.m, problem.n))
        if not is_stabilizing(problem.A):
            raise ValidationError(
                "A is not Hurwitz; supply an initial stabilizing gain"
            )
    else:
        K = problem.gain(K0)
        if not is_stabilizing(problem.closed_loop(K)):
            raise StabilityError("initial gain is not stabilizing")

    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    S = B @ np.linalg.solve(R, B.T)
    history = []
    for _ in range(max_iter):
        A_K = A - B @ K
        W = symmetric_part(Q + K.T @ R @ K)
        X = solve_lyapunov(A_K, W, adjoint=True).X
        residual = A.T @ X + X @ A - X @ S @ X + Q
        scale = (
            frobenius(A.T @ X)
            + frobenius(X @ A)
            + frobenius(X @ S @ X)
            + frobenius(Q)
        )
        rel = frobenius(residual) / scale
        history.append(rel)
        K_next = np.linalg.solve(R, B.T @ X)
        if rel <= rtol:
            if not is_stabilizing(A - B @ K_next):
                raise ConvergenceError(
                    "Riccati iteration converged to a non-stabilizing gain",
                    residuals=history,
                )
            return X, K_next
        K = K_next
    raise ConvergenceError(
        f"Newton-Kleinman did not reach relative residual {rtol:.0e} "
        f"in {max_iter} iterations",
        residuals=history,
    )


def bounds_report(problem, K0):
    """Assemble every analytic constant anchored at ``K0``.

    The gradient-domination constant ``mu`` is filled in for state
    feedback only (it needs the optimal value, taken from the Riccati
    solve); it stays ``None`` for output feedback.
    """
    K0 = problem.gain(K0)
    ev = evaluate(problem, K0)
    bound_sigma, bound_norm = coercivity_bounds(problem, K0)
    L, xi = smoothness_constant(problem, ev.f)
    mu = None
    if problem.is_state_feedback:
        _, kstar = riccati_optimum(problem, K0)
        fstar = evaluate(problem, kstar).f
        mu = lpl_constant(problem, ev.f, fstar)
    return BoundsReport(
        lower_bound_sigma=bound_sigma,
        lower_bound_norm=bound_norm,
        L=L,
        xi=xi,
        mu=mu,
        f0=ev.f,
    )
