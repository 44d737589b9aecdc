"""Sparse systems, Dirichlet constraint handling and linear solvers.

Thin layer over scipy.sparse: CSR storage, symmetric elimination or row
replacement for constraints, and direct LU / GMRES+ILU0 / CG+Jacobi solves
with residual histories.  Factorizations run single-threaded in scipy, so
direct solves are bit-reproducible across runs on identical input.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError


@dataclass
class SolverConfig:
    method: str = "direct_LU"        # direct_LU | gmres_ilu0 | cg_jacobi
    rtol: float = 1e-10
    atol: float = 1e-14
    max_iterations: int = 2000
    restart: int = 60

    def __post_init__(self):
        if self.method not in ("direct_LU", "gmres_ilu0", "cg_jacobi"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


class SparseSystem:
    """CSR matrix + right-hand side + Dirichlet constraint set.

    ``constraints`` maps row index -> prescribed solution value.  The
    ``symmetric`` flag selects symmetric elimination (preserves symmetry)
    versus plain row replacement when constraints are applied.
    """

    def __init__(self, matrix, rhs, constraints=None, symmetric=False):
        self.matrix = sp.csr_matrix(matrix)
        self.matrix.sort_indices()
        self.rhs = np.asarray(rhs, dtype=float).copy()
        if self.matrix.shape[0] != self.rhs.shape[0]:
            raise ValueError("matrix/rhs size mismatch")
        self.constraints = dict(constraints or {})
        self.symmetric = symmetric
        self.constrained = False
        for row in self.constraints:
            if not 0 <= row < self.matrix.shape[0]:
                raise ValueError(f"constraint on out-of-range row {row}")

    @property
    def shape(self):
        return self.matrix.shape

    def residual_norm(self, x):
        return float(np.linalg.norm(self.matrix @ x - self.rhs))


def apply_constraints(system):
    """Return a new SparseSystem with Dirichlet rows eliminated.

    Symmetric systems get symmetric elimination (zeroed row and column, unit
    diagonal, right-hand-side lift); nonsymmetric systems get row
    replacement.  Solutions of the result carry the prescribed values
    exactly.
    """
    if not system.constraints:
        out = SparseSystem(system.matrix, system.rhs, {}, system.symmetric)
        out.constrained = True
        return out
    n = system.shape[0]
    rows = np.fromiter(system.constraints.keys(), dtype=np.int64)
    vals = np.fromiter((system.constraints[r] for r in rows), dtype=float)
    order = np.argsort(rows)          # boolean-mask assignment below is index-ordered
    rows = rows[order]
    vals = vals[order]
    mask = np.zeros(n, dtype=bool)
    mask[rows] = True
    g = np.zeros(n)
    g[rows] = vals

    A = system.matrix.tocsr(copy=True)
    b = system.rhs.copy()
    if system.symmetric:
        b -= A @ g
    # zero constrained rows (and columns for the symmetric case)
    keep = sp.diags(np.where(mask, 0.0, 1.0))
    A = keep @ A
    if system.symmetric:
        A = A @ keep
    A = A + sp.diags(np.where(mask, 1.0, 0.0))
    b[mask] = vals
    if not system.symmetric:
        b[~mask] = system.rhs[~mask]
    out = SparseSystem(A, b, {}, system.symmetric)
    out.constrained = True
    return out


def solve(system, config=None):
    """Solve a (constrained) square system; returns (x, info dict).

    info carries ``iterations`` and ``residuals`` (history for iterative
    methods, final residual for direct).  Raises SolverError on breakdown,
    stagnation, or a singular factorization.
    """
    config = config or SolverConfig()
    if system.constraints and not system.constrained:
        system = apply_constraints(system)
    A = system.matrix.tocsc()
    b = system.rhs
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise SolverError("system is not square")
    bnorm = float(np.linalg.norm(b))
    target = max(config.atol, config.rtol * bnorm)

    if config.method == "direct_LU":
        try:
            lu = spla.splu(A)
            x = lu.solve(b)
        except RuntimeError as exc:  # SuperLU signals exact singularity this way
            raise SolverError(f"direct LU failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("direct LU produced non-finite solution (singular matrix)")
        res = float(np.linalg.norm(A @ x - b))
        return x, {"iterations": 0, "residuals": [res]}

    residuals = []

    def callback(xk):
        residuals.append(float(np.linalg.norm(A @ xk - b)))

    if config.method == "gmres_ilu0":
        try:
            ilu = spla.spilu(A, fill_factor=1.0, drop_tol=0.0)
            M = spla.LinearOperator(A.shape, matvec=ilu.solve)
        except RuntimeError as exc:
            raise SolverError(f"ILU0 factorization failed: {exc}") from exc
        x, code = spla.gmres(A, b, rtol=config.rtol, atol=config.atol,
                             restart=config.restart, maxiter=config.max_iterations,
                             M=M, callback=callback, callback_type="x")
    else:  # cg_jacobi
        diag = A.diagonal()
        if np.any(diag == 0.0):
            raise SolverError("zero diagonal entry; Jacobi preconditioner undefined")
        M = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
        x, code = spla.cg(A, b, rtol=config.rtol, atol=config.atol,
                          maxiter=config.max_iterations, M=M, callback=callback)

    res = float(np.linalg.norm(A @ x - b))
    if code != 0 or res > target * (1.0 + 1e-12):
        raise SolverError(
            f"{config.method} failed to converge: residual {res:.3e} > {target:.3e}",
            iterations=len(residuals), residuals=residuals)
    if not residuals:
        residuals = [res]
    return x, {"iterations": len(residuals), "residuals": residuals}


def export_matrix_market(system, path):
    """Write the assembled matrix (and rhs alongside) in MatrixMarket format."""
    from scipy.io import mmwrite

    mmwrite(str(path), system.matrix)
    np.savetxt(str(path) + ".rhs.txt", system.rhs)
