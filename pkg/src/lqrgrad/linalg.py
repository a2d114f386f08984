"""Spectra, stability tests, and dense Lyapunov solvers.

Shared substrate for the cost model and the optimizers: eigenvalue
summaries with a deterministic ordering, the stabilizing-set membership
test, and two independent solution paths for the continuous Lyapunov
equation (a Schur-based solve and a Kronecker-vectorized reference used
for cross-checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import (
    EigendecompositionError,
    IllConditionedError,
    StabilityError,
    ValidationError,
)

__all__ = [
    "STABILITY_TOL",
    "LYAPUNOV_RTOL",
    "KRON_MAX_ORDER",
    "SpectrumSummary",
    "LyapunovSolution",
    "spectrum",
    "is_stabilizing",
    "solve_lyapunov",
    "solve_lyapunov_kron",
]

#: Default margin on the spectral abscissa separating "stable" from "marginal".
STABILITY_TOL = 1e-9

#: Relative residual tolerance every Lyapunov solution must meet.
LYAPUNOV_RTOL = 1e-9

#: Largest matrix order the Kronecker reference solver accepts (the
#: vectorized system has order n**2).
KRON_MAX_ORDER = 32


def as_square_matrix(A, name="A"):
    """Coerce ``A`` to a finite, square, float ndarray.

    Scalars and length-1 arrays are promoted to 1x1 matrices so the scalar
    textbook examples read naturally.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 0 or (A.ndim == 1 and A.size == 1):
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {A.shape}")
    if A.shape[0] < 1:
        raise ValidationError(f"{name} must have order >= 1")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains non-finite entries")
    return A


def symmetric_part(M):
    return 0.5 * (M + M.T)


def _checked_symmetric(W, name="W"):
    W = as_square_matrix(W, name)
    scale = max(1.0, float(np.linalg.norm(W)))
    if np.linalg.norm(W - W.T) > 1e-12 * scale:
        raise ValidationError(f"{name} must be symmetric")
    return symmetric_part(W)


@dataclass(frozen=True)
class SpectrumSummary:
    """Eigenvalues sorted by real part (ties broken by imaginary part),
    with the spectral abscissa and the stability degree (its negation)."""

    eigenvalues: np.ndarray
    spectral_abscissa: float
    stability_degree: float


@dataclass(frozen=True)
class LyapunovSolution:
    """A symmetric Lyapunov solution together with its achieved residual."""

    X: np.ndarray
    residual_norm: float


def spectrum(A):
    """Eigenvalue summary of a square matrix.

    Eigenvalues are returned in ascending order of real part; equal real
    parts are ordered by ascending imaginary part so the output is
    deterministic.  The spectral abscissa is the largest real part.
    """
    A = as_square_matrix(A)
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise EigendecompositionError(
            f"eigenvalue iteration failed to converge: {exc}", detail=str(exc)
        ) from exc
    order = np.lexsort((eigs.imag, eigs.real))
    eigs = eigs[order]
    abscissa = float(eigs[-1].real)
    return SpectrumSummary(
        eigenvalues=eigs, spectral_abscissa=abscissa, stability_degree=-abscissa
    )


def is_stabilizing(A, tol=STABILITY_TOL):
    """True iff all eigenvalues of ``A`` lie strictly left of ``-tol``."""
    if tol < 0:
        raise ValidationError("stability tolerance must be nonnegative")
    return bool(spectrum(A).spectral_abscissa < -tol)


def _require_hurwitz(A, context):
    info = spectrum(A)
    if info.spectral_abscissa >= 0.0:
        raise StabilityError(
            f"{context}: matrix is not Hurwitz "
            f"(spectral abscissa {info.spectral_abscissa:.6e})",
            abscissa=info.spectral_abscissa,
        )


def _finalize_solution(A, W, X, adjoint):
    X = symmetric_part(X)
    if adjoint:
        residual = A.T @ X + X @ A + W
    else:
        residual = A @ X + X @ A.T + W
    rnorm = float(np.linalg.norm(residual))
    scale = float(np.linalg.norm(A)) * float(np.linalg.norm(X)) + float(
        np.linalg.norm(W)
    )
    if rnorm > LYAPUNOV_RTOL * max(scale, np.finfo(float).tiny):
        estimate = rnorm / (np.finfo(float).eps * max(scale, np.finfo(float).tiny))
        raise IllConditionedError(
            "Lyapunov back-substitution is numerically unreliable: residual "
            f"{rnorm:.3e} exceeds {LYAPUNOV_RTOL:.0e} * {scale:.3e}",
            condition_estimate=estimate,
        )
    return LyapunovSolution(X=X, residual_norm=rnorm)


def solve_lyapunov(A, W, adjoint=True):
    """Solve ``A'X + XA + W = 0`` (``adjoint=True``) or ``AX + XA' + W = 0``.

    ``A`` must be Hurwitz (refused otherwise, with the spectral abscissa in
    the diagnostic) and ``W`` symmetric.  The solve reduces ``A`` to real
    Schur form and back-substitutes on the quasi-triangular system; the
    result is symmetrized and its residual checked against
    ``LYAPUNOV_RTOL``.  When ``W`` is positive definite the solution is
    positive definite as well.
    """
    A = as_square_matrix(A)
    W = _checked_symmetric(W)
    if W.shape != A.shape:
        raise ValidationError(
            f"W has shape {W.shape}, expected {A.shape} to match A"
        )
    _require_hurwitz(A, "solve_lyapunov")
    a = A.T if adjoint else A
    X = sla.solve_continuous_lyapunov(a, -W)
    return _finalize_solution(A, W, X, adjoint)


def solve_lyapunov_kron(A, W, adjoint=True):
    """Reference Lyapunov solve via the Kronecker-vectorized dense system.

    Solves the same equation as :func:`solve_lyapunov` by forming
    ``(I (x) a + a (x) I) vec(X) = -vec(W)`` with ``a = A'`` (or ``A``) and
    a column-major ``vec``, then calling a dense linear solver.  O(n**6)
    work, so the order is capped at ``KRON_MAX_ORDER``; intended for tests
    and cross-checks only.
    """
    A = as_square_matrix(A)
    W = _checked_symmetric(W)
    if W.shape != A.shape:
        raise ValidationError(
            f"W has shape {W.shape}, expected {A.shape} to match A"
        )
    n = A.shape[0]
    if n > KRON_MAX_ORDER:
        raise ValidationError(
            f"Kronecker reference solver is limited to order {KRON_MAX_ORDER}, got {n}"
        )
    _require_hurwitz(A, "solve_lyapunov_kron")
    a = A.T if adjoint else A
    eye = np.eye(n)
    coeff = np.kron(eye, a) + np.kron(a, eye)
    vec = np.linalg.solve(coeff, -W.ravel(order="F"))
    X = vec.reshape((n, n), order="F")
    return _finalize_solution(A, W, X, adjoint)


def frobenius(M):
    """Frobenius norm as a plain float."""
    return float(np.linalg.norm(M))


def spectral_norm(M):
    """Largest singular value as a plain float."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.norm(M, 2))


def eig_bounds_sym(S):
    """(smallest, largest) eigenvalue of a symmetric matrix."""
    vals = np.linalg.eigvalsh(symmetric_part(np.asarray(S, dtype=float)))
    return float(vals[0]), float(vals[-1])
