"""Krylov solvers for the assembled DG systems.

Hand-rolled CG and BiCGSTAB reference implementations with optional
Jacobi preconditioning.  CG refuses non-symmetric input and reports
pAp <= 0 as indefiniteness, which in this package almost always means
the jump penalty was forced below its stability bound.  Convergence is
certified against the true residual b - Ax, not the recurrence residual.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import SparseSystem, check_symmetry

_SYM_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


class NonSymmetricMatrixError(SolverError):
    pass


class IndefiniteSystemError(SolverError):
    pass


class BreakdownError(SolverError):
    pass


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    final_relative_residual: float
    converged: bool


class JacobiPreconditioner:
    """Entrywise multiplication by 1/diag(A)."""

    def __init__(self, inv_diag: np.ndarray):
        self.inv_diag = inv_diag

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.inv_diag * v


def jacobi_precondition(matrix) -> JacobiPreconditioner:
    a = matrix.matrix if isinstance(matrix, SparseSystem) else matrix
    d = a.diagonal()
    if np.any(d == 0.0):
        raise SolverError("zero diagonal entry; Jacobi preconditioner "
                          "undefined")
    return JacobiPreconditioner(1.0 / d)


def _setup(system, b, precond):
    a = system.matrix if isinstance(system, SparseSystem) else system
    if not sp.issparse(a):
        a = sp.csr_matrix(np.asarray(a, dtype=float))
    if b is None:
        rhs = getattr(system, "rhs", None)
        if rhs is None:
            raise SolverError("no right-hand side: pass b or set system.rhs")
        b = rhs
    b = np.asarray(b, dtype=float)
    if a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise SolverError(f"shape mismatch: A {a.shape}, b {b.shape}")
    if precond in (None, "none"):
        m = lambda v: v
    elif precond == "jacobi":
        m = jacobi_precondition(a)
    elif callable(precond):
        m = precond
    else:
        raise SolverError(f"unknown preconditioner {precond!r}")
    return a, b, m


def cg(system, b=None, tol: float = 1e-10, max_iter: int | None = None,
       precond="none") -> SolveReport:
    """Preconditioned conjugate gradients; symmetric input only.

    ``tol`` is relative to |b|; ``max_iter`` defaults to 10 n.  The
    returned residual is the true relative residual.
    """
    a, b, m = _setup(system, b, precond)
    defect = check_symmetry(a)
    scale = np.abs(a.data).max() if a.nnz else 0.0
    if defect > _SYM_RTOL * scale:
        raise NonSymmetricMatrixError(
            f"matrix not symmetric: defect {defect:.3e} > "
            f"{_SYM_RTOL:.0e} * {scale:.3e}")
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return SolveReport(x, 0, 0.0, True)
    r = b.copy()
    z = m(r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise IndefiniteSystemError(
                f"p^T A p = {pap:.3e} <= 0 at iteration {it}; system is "
                "not positive definite (penalty weight below the "
                "stability bound?)")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        if np.linalg.norm(r) <= tol * bnorm:
            true_r = b - a @ x
            rel = np.linalg.norm(true_r) / bnorm
            if rel <= tol:
                return SolveReport(x, it, float(rel), True)
            # recurrence drifted; restart from the true residual
            r = true_r
        z = m(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    rel = float(np.linalg.norm(b - a @ x) / bnorm)
    return SolveReport(x, it, rel, rel <= tol)


def bicgstab(system, b=None, tol: float = 1e-10,
             max_iter: int | None = None, precond="none") -> SolveReport:
    """Preconditioned BiCGSTAB for general square systems.

    A rho or omega breakdown restarts once from the current residual;
    a second breakdown raises BreakdownError.
    """
    a, b, m = _setup(system, b, precond)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return SolveReport(x, 0, 0.0, True)

    restarts = 0
    r = b.copy()
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    it = 0

    def breakdown(what):
        nonlocal restarts, r, r_hat, rho, alpha, omega, v, p
        if restarts >= 1:
            raise BreakdownError(
                f"{what} breakdown at iteration {it} after restart")
        restarts += 1
        r = b - a @ x
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)

    while it < max_iter:
        rho_new = float(r_hat @ r)
        if abs(rho_new) < 1e-300:
            breakdown("rho")
            continue
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        ph = m(p)
        v = a @ ph
        rv = float(r_hat @ v)
        if abs(rv) < 1e-300:
            breakdown("rho")
            continue
        alpha = rho / rv
        s = r - alpha * v
        it += 1
        if np.linalg.norm(s) <= tol * bnorm:
            x += alpha * ph
            rel = float(np.linalg.norm(b - a @ x) / bnorm)
            if rel <= tol:
                return SolveReport(x, it, rel, True)
            r = b - a @ x
            continue
        sh = m(s)
        t = a @ sh
        tt = float(t @ t)
        if tt == 0.0:
            breakdown("omega")
            continue
        omega = float(t @ s) / tt
        if omega == 0.0:
            breakdown("omega")
            continue
        x += alpha * ph + omega * sh
        r = s - omega * t
        if np.linalg.norm(r) <= tol * bnorm:
            rel = float(np.linalg.norm(b - a @ x) / bnorm)
            if rel <= tol:
                return SolveReport(x, it, rel, True)
            r = b - a @ x
    rel = float(np.linalg.norm(b - a @ x) / bnorm)
    return SolveReport(x, it, rel, rel <= tol)
