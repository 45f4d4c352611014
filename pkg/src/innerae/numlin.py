"""Dense matrix-equation solvers: Lyapunov and the continuous algebraic Riccati equation.

The Riccati equation solved here is the one behind normalized coprime
factorizations,

    A'P + PA + C'C - (D'C + B'P)' R^{-1} (D'C + B'P) = 0,   R = I + D'D,

via Kleinman-Newton iteration. Every Newton step is a Lyapunov solve.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

STABILITY_MARGIN = 1e-9
MAX_NEWTON_ITER = 200
NEWTON_RTOL = 1e-12


class NumericalError(RuntimeError):
    """A numerical routine failed to deliver a result with the promised property."""


def as_matrix(M, rows=None, cols=None, name="matrix"):
    """Coerce ``M`` to a finite 2-D float array, optionally checking its shape."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if rows is not None and M.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {M.shape[1]}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def spectral_abscissa(A):
    """Largest real part among the eigenvalues of ``A`` (-inf for an empty matrix)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return -np.inf
    # LAPACK dhseqr: Hessenberg reduction followed by shifted QR sweeps.
    return float(np.max(np.linalg.eigvals(A).real))


def is_hurwitz(A, margin=STABILITY_MARGIN):
    return spectral_abscissa(A) < -margin


def solve_lyapunov(A, Q):
    """Solve ``A'X + XA + Q = 0`` for symmetric ``X``.

    Parameters
    ----------
    A : (n, n) array_like
        Hurwitz matrix.
    Q : (n, n) array_like
        Symmetric right-hand side.

    Raises
    ------
    ValueError
        If ``Q`` is not symmetric or the shapes disagree.
    NumericalError
        If ``A`` is not Hurwitz.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    Q = as_matrix(Q, n, n, name="Q")
    if A.shape != (n, n):
        raise ValueError(f"A must be square, got {A.shape}")
    if n == 0:
        return np.zeros((0, 0))
    qscale = max(np.linalg.norm(Q), 1.0)
    if np.linalg.norm(Q - Q.T) > 1e-12 * qscale:
        raise ValueError("Q must be symmetric")
    if not is_hurwitz(A):
        raise NumericalError(
            f"Lyapunov operator requires a Hurwitz matrix; spectral abscissa is {spectral_abscissa(A):.3e}"
        )
    # Bartels-Stewart; scipy solves AX + XA^H = Q so pass the transpose and negate.
    X = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class CareProblem:
    """Data of the normalized-factorization Riccati equation for the plant (A, B, C, D)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, n, name="B")
        C = as_matrix(self.C, cols=n, name="C")
        D = as_matrix(self.D, C.shape[0], B.shape[1], name="D")
        for name, value in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, value)

    @property
    def R(self):
        return np.eye(self.B.shape[1]) + self.D.T @ self.D

    def gain(self, P):
        """State feedback ``F = -R^{-1}(D'C + B'P)``."""
        return -np.linalg.solve(self.R, self.D.T @ self.C + self.B.T @ P)

    def residual(self, P):
        A, B, C, D = self.A, self.B, self.C, self.D
        N = D.T @ C + B.T @ P
        return A.T @ P + P @ A + C.T @ C - N.T @ np.linalg.solve(self.R, N)

    def relative_residual(self, P):
        A, C = self.A, self.C
        N = self.D.T @ self.C + self.B.T @ P
        scale = (
            2 * np.linalg.norm(A.T @ P)
            + np.linalg.norm(C.T @ C)
            + np.linalg.norm(N.T @ np.linalg.solve(self.R, N))
        )
        res = np.linalg.norm(self.residual(P))
        return res / scale if scale > 0 else res

    def dual(self):
        """The transposed problem whose solution gives the observer-side (LCF) factorization."""
        return CareProblem(self.A.T, self.C.T, self.B.T, self.D.T)


def stabilizing_gain(A, B):
    """A gain F with A + BF Hurwitz, by Bass's shifted-Lyapunov construction.

    With beta > ||A|| the matrix -(A + beta I) is Hurwitz, the Lyapunov solution
    Z of (A + beta I)Z + Z(A + beta I)' = 2BB' is positive semidefinite with range
    equal to the controllable subspace, and F = -B'Z^+ places the controllable
    modes left of -beta. Uncontrollable modes are left untouched.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    B = as_matrix(B, n, name="B")
    if is_hurwitz(A):
        return np.zeros((B.shape[1], n))
    beta = np.linalg.norm(A, 2) + 1.0
    shifted = -(A + beta * np.eye(n))
    Z = solve_lyapunov(shifted.T, 2.0 * B @ B.T)
    F = -B.T @ np.linalg.pinv(Z, rcond=1e-12, hermitian=True)
    if not is_hurwitz(A + B @ F):
        raise NumericalError("(A, B) is not stabilizable: no stabilizing initial gain found")
    return F


def solve_care(prob: CareProblem, max_iter=MAX_NEWTON_ITER, rtol=NEWTON_RTOL):
    """Stabilizing solution P of the normalized-factorization Riccati equation.

    Kleinman-Newton: from a stabilizing F_k, solve the closed-loop Lyapunov
    equation

        (A + BF_k)'P + P(A + BF_k) + (C + DF_k)'(C + DF_k) + F_k'F_k = 0

    and update F_{k+1} = -R^{-1}(D'C + B'P). Iterates decrease monotonically to
    the stabilizing solution.
    """
    A, B, C, D = prob.A, prob.B, prob.C, prob.D
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    F = stabilizing_gain(A, B)
    P = None
    stalled = 0
    best = np.inf
    for _ in range(max_iter):
        Acl = A + B @ F
        Ccl = C + D @ F
        P_new = solve_lyapunov(Acl, Ccl.T @ Ccl + F.T @ F)
        F = prob.gain(P_new)
        if P is not None:
            diff = np.linalg.norm(P_new - P)
            scale = np.linalg.norm(P_new)
            if diff <= rtol * scale or diff == 0.0:
                P = P_new
                break
            # Round-off floor: accept once the step stops shrinking near machine precision.
            if diff >= best and diff <= 1e-9 * max(scale, 1e-300):
                stalled += 1
                if stalled >= 3:
                    P = P_new
                    break
            best = min(best, diff)
        P = P_new
    else:
        raise NumericalError(f"Kleinman-Newton iteration did not converge in {max_iter} iterations")

    P = 0.5 * (P + P.T)
    F = prob.gain(P)
    if not is_hurwitz(A + B @ F):
        raise NumericalError(
            f"Riccati solution is not stabilizing: spectral abscissa of A+BF is {spectral_abscissa(A + B @ F):.3e}"
        )
    rel = prob.relative_residual(P)
    if rel > 1e-8:
        raise NumericalError(f"Riccati residual too large: {rel:.3e} relative")
    return P
