"""Elastic mesh update: the mesh deforms as a fictitious linear elastic body.

Nodal displacements solve div(sigma) = 0 with
sigma = lambda*tr(eps)*I + 2*mu*eps and eps the symmetric displacement
gradient, driven purely by Dirichlet data (prescribed boundary displacements
or single-component axis constraints); traction data is identically zero.
Linear triangles, plane strain.  Element stiffness can optionally be scaled
by (reference area / current area)**stiffening_exponent so small elements
resist further compression.

Assembly is elementwise with a commutative scatter-add, so a parallel
element loop must reproduce the sequential result up to float reassociation;
this implementation is the deterministic sequential mode.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import geometry
from .errors import AssemblyError, SolverError
from .linalg import SolverConfig, SparseSystem, apply_constraints, solve


@dataclass
class ElasticityParams:
    lam: float = 1.0
    mu: float = 1.0
    stiffening_exponent: float = 0.0

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0 or self.stiffening_exponent < 0:
            raise ValueError("need mu > 0, lambda >= 0, stiffening_exponent >= 0")


@dataclass
class MeshDirichletSet:
    """Prescribed node displacements and axis constraints for the mesh solve.

    ``displacements`` maps node id -> (dx, dy); ``axis_locked`` maps node id
    -> locked component (0 or 1), meaning zero displacement in that direction
    and free motion in the other.  A node may not appear in both.
    """

    displacements: dict = field(default_factory=dict)
    axis_locked: dict = field(default_factory=dict)

    def validate(self, n_nodes):
        for n in list(self.displacements) + list(self.axis_locked):
            if not 0 <= n < n_nodes:
                raise ValueError(f"boundary condition references unknown node {n}")
        both = set(self.displacements) & set(self.axis_locked)
        if both:
            raise ValueError(f"nodes both prescribed and axis-constrained: {sorted(both)}")
        for n, comp in self.axis_locked.items():
            if comp not in (0, 1):
                raise ValueError(f"axis constraint component must be 0 or 1, got {comp}")

    def constraint_rows(self):
        rows = {}
        for n, (gx, gy) in self.displacements.items():
            rows[2 * n] = float(gx)
            rows[2 * n + 1] = float(gy)
        for n, comp in self.axis_locked.items():
            rows[2 * n + comp] = 0.0
        return rows


@dataclass
class DisplacementField:
    """Per-node displacement vectors, shape (n_nodes, 2)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 2:
            raise ValueError("displacement field must be (n, 2)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("displacement field contains non-finite entries")


def element_stiffness(tri, params, ref_area=None):
    """6x6 stiffness of one linear plane-strain triangle (dofs ux0,uy0,...)."""
    tri = np.asarray(tri, dtype=float)
    area = float(geometry.signed_area(tri))
    if area <= 0.0:
        raise AssemblyError(f"degenerate or inverted element (area {area:.3e})")
    # shape gradients: dN_i = (b_i, c_i)
    x, y = tri[:, 0], tri[:, 1]
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / (2 * area)
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / (2 * area)
    B = np.zeros((3, 6))
    B[0, 0::2] = b
    B[1, 1::2] = c
    B[2, 0::2] = c
    B[2, 1::2] = b
    lam, mu = params.lam, params.mu
    D = np.array([[lam + 2 * mu, lam, 0.0],
                  [lam, lam + 2 * mu, 0.0],
                  [0.0, 0.0, mu]])
    K = area * B.T @ D @ B
    if params.stiffening_exponent > 0.0 and ref_area is not None:
        K *= (ref_area / area) ** params.stiffening_exponent
    return K


def assemble_elasticity(mesh, params, bc):
    """Assemble the mesh-elasticity stiffness system with Dirichlet data.

    Pre-constraint the matrix is symmetric positive-semidefinite with the
    rigid-body modes in its null space; constraints are attached for
    symmetric elimination.  Degenerate elements raise AssemblyError naming
    the element.
    """
    bc.validate(mesh.n_nodes)
    tris = mesh.element_coords()
    areas = geometry.signed_area(tris)
    eps_area = 1e-14 * mesh.domain_diameter() ** 2
    bad = np.flatnonzero(areas <= eps_area)
    if len(bad):
        raise AssemblyError(f"degenerate element(s) in elasticity assembly: {bad.tolist()}")

    x = tris[:, :, 0]
    y = tris[:, :, 1]
    inv2a = 1.0 / (2.0 * areas)
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) * inv2a[:, None]
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) * inv2a[:, None]

    ne = mesh.n_elements
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    lam, mu = params.lam, params.mu
    D = np.array([[lam + 2 * mu, lam, 0.0],
                  [lam, lam + 2 * mu, 0.0],
                  [0.0, 0.0, mu]])
    scale = areas.copy()
    if params.stiffening_exponent > 0.0:
        scale *= np.maximum(mesh.ref_area / areas, 0.0) ** params.stiffening_exponent
    Ke = np.einsum("e,eki,kl,elj->eij", scale, B, D, B, optimize=True)

    dofs = np.empty((ne, 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * mesh.elements
    dofs[:, 1::2] = 2 * mesh.elements + 1
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return SparseSystem(K, np.zeros(n), bc.constraint_rows(), symmetric=True)


def solve_mesh_displacement(system, config=None):
    """Solve the constrained mesh-elasticity system for nodal displacements.

    The residual of the constrained system is verified against rtol 1e-10;
    prescribed dofs carry their values exactly.
    """
    config = config or SolverConfig(method="direct_LU")
    constrained = apply_constraints(system)
    x, info = solve(constrained, config)
    rnorm = constrained.residual_norm(x)
    bnorm = float(np.linalg.norm(constrained.rhs))
    if rnorm > 1e-10 * max(bnorm, 1.0):
        raise SolverError(
            f"mesh displacement solve too inaccurate: residual {rnorm:.3e}",
            iterations=info["iterations"], residuals=info["residuals"])
    return DisplacementField(x.reshape(-1, 2))


def apply_displacement(mesh, d):
    """Return (updated mesh, orientation report) with coordinates incremented.

    Orientation violations are surfaced but the displaced mesh is returned
    regardless; the caller decides whether to reject the step.
    """
    values = d.values if isinstance(d, DisplacementField) else np.asarray(d, dtype=float)
    if values.shape != mesh.coords.shape:
        raise ValueError(f"displacement shape {values.shape} does not match mesh "
                         f"({mesh.coords.shape})")
    out = mesh.copy()
    out.coords = out.coords + values
    report = orientation_report(out)
    return out, report


def orientation_report(mesh):
    """Fast orientation-only validation (node motion cannot alter topology)."""
    from .mesh import ValidationReport

    areas = geometry.signed_area(mesh.element_coords())
    rep = ValidationReport()
    rep.orientation_violations = [int(e) for e in np.flatnonzero(areas <= 0.0)]
    return rep
