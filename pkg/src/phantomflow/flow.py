"""Space-time finite-element solver for incompressible Navier-Stokes flow on
deforming domains.

Each time step solves one space-time slab spanned by the mesh configurations
at the lower and upper time levels.  Velocity is interpolated linearly in
space and time (two unknowns per node per slab); pressure is linear in space
and constant in time (one unknown per node).  The discrete weak form
contains, in order: the Galerkin transient/convection/body-force term, the
stress term with sigma = -p*I + 2*rho*nu*eps(u), the continuity term, the
temporal jump term coupling the slab to the previous solution, a
least-squares momentum stabilization weighted per element by tau_mom acting
on the strong residual (whose viscous part vanishes for linear elements),
and a least-squares continuity stabilization weighted by rho*tau_cont.
Dirichlet velocity data can be prescribed per time level; natural boundaries
carry zero traction.

The nonlinear slab problem is solved with full Newton: the Jacobian is the
exact derivative of every term with respect to the nodal unknowns, with the
stabilization parameters frozen at the donor (previous-level) velocity so
they carry no state dependence.  Assembly is vectorized over elements and
deterministic; the linear solve defaults to the direct sparse LU.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, SolverError
from .linalg import SolverConfig, SparseSystem, apply_constraints, solve
from .state import FlowState

# quadrature: 2-point Gauss in time x 3-point barycentric rule in space
_THETA = (0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0)))
_WTHETA = (0.5, 0.5)
_BARY = np.array([[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                  [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                  [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]])
_WBARY = 1.0 / 3.0

_EYE2 = np.eye(2)


@dataclass
class FluidProperties:
    rho: float = 1.0
    nu: float = 1e-3              # viscosity entering sigma = -p I + 2 rho nu eps
    body_force: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.rho <= 0 or self.nu <= 0:
            raise ValueError("need rho > 0 and nu > 0")
        self.body_force = np.asarray(self.body_force, dtype=float)


@dataclass
class StabilizationParams:
    tau_mom: np.ndarray
    tau_cont: np.ndarray


@dataclass
class NewtonConfig:
    rtol: float = 1e-8
    atol: float = 1e-12
    max_iterations: int = 25
    linear: SolverConfig = field(default_factory=lambda: SolverConfig(method="direct_LU"))


class FlowDirichletSet:
    """Velocity Dirichlet data per node and time level.

    ``values`` maps node id -> (g_lower, g_upper); either level may be None,
    meaning the node is free at that level (a node entering or leaving the
    boundary within the slab is constrained only where it sits on it).
    """

    def __init__(self, values=None):
        self.values = {}
        for node, (lo, hi) in (values or {}).items():
            self.set(node, lo, hi)

    def set(self, node, g_lower=None, g_upper=None):
        lo = None if g_lower is None else np.asarray(g_lower, dtype=float)
        hi = None if g_upper is None else np.asarray(g_upper, dtype=float)
        for g in (lo, hi):
            if g is not None and not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite boundary value at node {node}")
        self.values[int(node)] = (lo, hi)

    def items(self):
        return self.values.items()

    def __len__(self):
        return len(self.values)

    def __contains__(self, node):
        return int(node) in self.values


def compute_tau(h, u_norm, dt, props):
    """Stabilization parameters from element size, advective speed and dt.

    tau_mom = [(2/dt)^2 + (2|u|/h)^2 + (4 nu/h^2)^2]^(-1/2) and
    tau_cont = max(h |u| / 2, h^2 / (4 dt)).  Accepts scalars or arrays.
    """
    h = np.asarray(h, dtype=float)
    u_norm = np.asarray(u_norm, dtype=float)
    if np.any(h <= 0.0):
        raise ValueError("element size h must be positive")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    nu_kin = props.nu
    tau_mom = 1.0 / np.sqrt((2.0 / dt) ** 2 + (2.0 * u_norm / h) ** 2
                            + (4.0 * nu_kin / h ** 2) ** 2)
    tau_cont = np.maximum(0.5 * h * u_norm, h ** 2 / (4.0 * dt))
    return StabilizationParams(tau_mom=tau_mom, tau_cont=tau_cont)


class SpaceTimeSlab:
    """One space-time slab: paired mesh configurations plus solver layout.

    Holds the active-node index, local connectivity, both coordinate sets,
    frozen stabilization parameters and the precomputed scatter indices for
    assembly.  Five unknowns per active node: lower velocity (2), upper
    velocity (2), pressure.
    """

    def __init__(self, mesh_upper, pattern, lower_coords, dt, props,
                 donor_state=None, index=0):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.index = index
        self.dt = float(dt)
        self.mesh = mesh_upper
        self.pattern = pattern
        self.element_ids = np.flatnonzero(pattern.active)
        if not len(self.element_ids):
            raise ValueError("slab has no active elements")
        elems = mesh_upper.elements[self.element_ids]
        self.node_ids = np.unique(elems)
        self.index_of = {int(n): i for i, n in enumerate(self.node_ids)}
        remap = np.zeros(mesh_upper.n_nodes, dtype=np.int64)
        remap[self.node_ids] = np.arange(len(self.node_ids))
        self.conn = remap[elems]
        self.coords_lower = np.asarray(lower_coords, dtype=float)[self.node_ids]
        self.coords_upper = mesh_upper.coords[self.node_ids]
        self.n_nodes = len(self.node_ids)
        self.n_dof = 5 * self.n_nodes

        # per-element dof layout: node-major [uLx, uLy, uUx, uUy, p]
        base = 5 * self.conn                                  # (ne, 3)
        offs = np.arange(5, dtype=np.int64)
        self.elem_dofs = (base[:, :, None] + offs[None, None, :]).reshape(-1, 15)
        self.rows = np.repeat(self.elem_dofs, 15, axis=1).ravel().astype(np.int32)
        self.cols = np.tile(self.elem_dofs, (1, 15)).ravel().astype(np.int32)

        # stabilization frozen at the donor velocity
        tri_u = self.coords_upper[self.conn]
        e0 = np.linalg.norm(tri_u[:, 1] - tri_u[:, 0], axis=1)
        e1 = np.linalg.norm(tri_u[:, 2] - tri_u[:, 1], axis=1)
        e2 = np.linalg.norm(tri_u[:, 0] - tri_u[:, 2], axis=1)
        h = np.maximum(e0, np.maximum(e1, e2))
        if donor_state is not None:
            donor = self._gather_nodal(donor_state)
            u_norm = np.linalg.norm(donor, axis=1)[self.conn].mean(axis=1)
        else:
            u_norm = np.zeros(len(self.conn))
        taus = compute_tau(h, u_norm, self.dt, props)
        self.tau_mom = taus.tau_mom
        self.tau_cont = taus.tau_cont
        self.props = props

    def _gather_nodal(self, state):
        """Donor velocities aligned with this slab's local node order."""
        out = np.zeros((self.n_nodes, 2))
        for i, n in enumerate(self.node_ids):
            if state.has_node(int(n)):
                out[i] = state.upper_velocity(int(n))
        return out

    def make_state(self, donor_state=None):
        """Initial FlowState on this slab's node set, seeded from the donor."""
        if donor_state is None:
            z = np.zeros((self.n_nodes, 2))
            return FlowState(self.node_ids, z.copy(), z.copy(),
                             np.zeros(self.n_nodes), z.copy())
        donor = self._gather_nodal(donor_state)
        p = np.array([donor_state.pressure(int(n)) if donor_state.has_node(int(n)) else 0.0
                      for n in self.node_ids])
        return FlowState(self.node_ids, donor.copy(), donor.copy(), p, donor.copy())

    def constraint_rows(self, bc, pin_pressure=False):
        """Dirichlet dof -> value map (velocity rows; optional pressure pin)."""
        rows = {}
        for node, (lo, hi) in bc.items():
            i = self.index_of.get(int(node))
            if i is None:
                continue
            if lo is not None:
                rows[5 * i] = float(lo[0])
                rows[5 * i + 1] = float(lo[1])
            if hi is not None:
                rows[5 * i + 2] = float(hi[0])
                rows[5 * i + 3] = float(hi[1])
        if pin_pressure:
            rows[4] = 0.0   # pressure dof of the first local node
        return rows


def _unpack(state):
    return state.u_lower, state.u_upper, state.p


def assemble_slab(slab, state, props, bc=None, pin_pressure=False):
    """Residual vector and exact Jacobian of the slab equations.

    With ``bc`` given, Dirichlet rows are replaced (unit diagonal, zero
    residual) so Newton updates leave prescribed values untouched.  Raises
    AssemblyError if a space-time element inverts anywhere in the slab.
    """
    uL, uU, pn = _unpack(state)
    ne = len(slab.conn)
    conn = slab.conn
    XL = slab.coords_lower[conn]            # (ne, 3, 2)
    XU = slab.coords_upper[conn]
    uLe = uL[conn]                          # (ne, 3, 2)
    uUe = uU[conn]
    pe = pn[conn]                           # (ne, 3)
    donor_e = state.donor[conn]
    rho = props.rho
    nu = props.nu
    f = props.body_force
    dt = slab.dt
    tauM = slab.tau_mom
    tauC = slab.tau_cont

    R = np.zeros((ne, 15))
    K = np.zeros((ne, 15, 15))

    # index maps: vl = 2*a + l; velocity dof (vl, i) -> 5*a + 2*l + i
    a_of = np.repeat(np.arange(3), 2)
    l_of = np.tile(np.arange(2), 3)
    VD = (5 * a_of[:, None] + 2 * l_of[:, None] + np.arange(2)[None, :]).reshape(-1)
    PD = 5 * np.arange(3) + 4

    mesh_vel = (XU - XL) / dt               # (ne, 3, 2) nodal mesh velocity

    for theta, wt in zip(_THETA, _WTHETA):
        X = (1.0 - theta) * XL + theta * XU
        ub = (1.0 - theta) * uLe + theta * uUe          # (ne, 3, 2)
        T = np.array([1.0 - theta, theta])
        Tp = np.array([-1.0, 1.0])

        e1 = X[:, 1] - X[:, 0]
        e2 = X[:, 2] - X[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0.0):
            bad = slab.element_ids[det <= 0.0]
            raise AssemblyError(
                f"slab {slab.index}: space-time element inverted within the slab "
                f"(elements {bad.tolist()})")
        dNdx = np.empty((ne, 3, 2))
        dNdx[:, 0, 0] = X[:, 1, 1] - X[:, 2, 1]
        dNdx[:, 0, 1] = X[:, 2, 0] - X[:, 1, 0]
        dNdx[:, 1, 0] = X[:, 2, 1] - X[:, 0, 1]
        dNdx[:, 1, 1] = X[:, 0, 0] - X[:, 2, 0]
        dNdx[:, 2, 0] = X[:, 0, 1] - X[:, 1, 1]
        dNdx[:, 2, 1] = X[:, 1, 0] - X[:, 0, 0]
        dNdx /= det[:, None, None]

        gradu = np.einsum("eai,eaj->eij", ub, dNdx)      # du_i/dx_j
        gradp = np.einsum("ea,eaj->ej", pe, dNdx)
        divu = gradu[:, 0, 0] + gradu[:, 1, 1]
        dU = (uUe - uLe) / dt

        Gphi = (dNdx[:, :, None, :] * T[None, None, :, None]).reshape(ne, 6, 2)

        for b3 in _BARY:
            N = b3
            u_qp = np.einsum("a,eai->ei", N, ub)
            ut = np.einsum("a,eai->ei", N, dU) \
                - np.einsum("ej,eij->ei", np.einsum("a,eai->ei", N, mesh_vel), gradu)
            conv = np.einsum("eij,ej->ei", gradu, u_qp)
            resfac = rho * (ut + conv - f[None, :]) + gradp
            p_qp = pe @ N
            sigma = rho * nu * (gradu + np.swapaxes(gradu, 1, 2))
            sigma[:, 0, 0] -= p_qp
            sigma[:, 1, 1] -= p_qp

            phi = (N[:, None] * T[None, :]).reshape(6)
            vmd = np.einsum("ej,eaj->ea",
                            np.einsum("a,eai->ei", N, mesh_vel), dNdx)  # (ne, 3)
            Dtphi = ((N[:, None] * Tp[None, :]).reshape(6)[None, :] / dt
                     - (vmd[:, :, None] * T[None, None, :]).reshape(ne, 6))
            ugv = np.einsum("ej,evj->ev", u_qp, Gphi)

            W = (wt * _WBARY * 0.5 * dt) * det            # (ne,)

            # residual: momentum rows
            mom = np.einsum("v,ei->evi", phi, rho * (ut + conv - f[None, :]))
            mom += np.einsum("evj,eij->evi", Gphi, sigma)
            mom += tauM[:, None, None] * np.einsum("ev,ei->evi", ugv, resfac)
            mom += (rho * tauC)[:, None, None] * np.einsum("evi,e->evi", Gphi, divu)
            # residual: continuity rows
            cont = np.einsum("a,e->ea", N, divu)
            cont += (tauM / rho)[:, None] * np.einsum("eai,ei->ea", dNdx, resfac)

            R[:, VD] += (W[:, None, None] * mom).reshape(ne, 12)
            R[:, PD] += W[:, None] * cont

            # Jacobian blocks
            Cmat = np.einsum("eb,ij->ebij", Dtphi + ugv, _EYE2) \
                + np.einsum("b,eij->ebij", phi, gradu)            # d(ut+conv)/du
            Avv = rho * np.einsum("v,ebij->evibj", phi, Cmat)
            GG = np.einsum("evk,ebk->evb", Gphi, Gphi)
            Avv += rho * nu * (np.einsum("evb,ij->evibj", GG, _EYE2)
                               + np.einsum("evj,ebi->evibj", Gphi, Gphi))
            Avv += tauM[:, None, None, None, None] * (
                np.einsum("b,evj,ei->evibj", phi, Gphi, resfac)
                + rho * np.einsum("ev,ebij->evibj", ugv, Cmat))
            Avv += (rho * tauC)[:, None, None, None, None] * np.einsum(
                "evi,ebj->evibj", Gphi, Gphi)

            Avp = -np.einsum("b,evi->evib", N, Gphi)
            Avp += tauM[:, None, None, None] * np.einsum("ev,ebi->evib", ugv, dNdx)

            dgrad = np.einsum("eai,eij->eaj", dNdx, gradu)
            Apv = np.einsum("a,ebj->eabj", N, Gphi)
            Apv += tauM[:, None, None, None] * (
                np.einsum("eaj,eb->eabj", dNdx, Dtphi + ugv)
                + np.einsum("b,eaj->eabj", phi, dgrad))

            App = (tauM / rho)[:, None, None] * np.einsum("eai,ebi->eab", dNdx, dNdx)

            Wk = W[:, None, None]
            K[:, VD.reshape(6, 2)[:, :, None, None], VD.reshape(6, 2)[None, None, :, :]] \
                += Wk[..., None, None] * Avv
            K[:, VD.reshape(6, 2)[:, :, None], PD[None, None, :]] += Wk[..., None] * Avp
            K[:, PD[:, None, None], VD.reshape(6, 2)[None, :, :]] += Wk[..., None] * Apv
            K[:, PD[:, None], PD[None, :]] += Wk * App

    # temporal jump term on the lower configuration
    e1 = XL[:, 1] - XL[:, 0]
    e2 = XL[:, 2] - XL[:, 0]
    detL = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(detL <= 0.0):
        bad = slab.element_ids[detL <= 0.0]
        raise AssemblyError(f"slab {slab.index}: inverted lower-level element(s) {bad.tolist()}")
    JD = (5 * np.arange(3)[:, None] + np.arange(2)[None, :]).reshape(-1)  # lower-level dofs
    for b3 in _BARY:
        N = b3
        Wj = _WBARY * 0.5 * detL
        du = np.einsum("a,eai->ei", N, uLe - donor_e)
        R[:, JD] += (Wj[:, None, None] * rho
                     * np.einsum("a,ei->eai", N, du)).reshape(ne, 6)
        block = rho * np.einsum("a,b,ij->aibj", N, N, _EYE2).reshape(6, 6)
        K[:, JD[:, None], JD[None, :]] += Wj[:, None, None] * block[None, :, :]

    # scatter
    Rg = np.bincount(slab.elem_dofs.ravel(), weights=R.ravel(), minlength=slab.n_dof)
    Jg = sp.coo_matrix((K.ravel(), (slab.rows, slab.cols)),
                       shape=(slab.n_dof, slab.n_dof)).tocsr()

    if bc is not None:
        rows = slab.constraint_rows(bc, pin_pressure=pin_pressure)
        if rows:
            idx = np.fromiter(rows.keys(), dtype=np.int64)
            mask = np.zeros(slab.n_dof, dtype=bool)
            mask[idx] = True
            keep = sp.diags(np.where(mask, 0.0, 1.0))
            Jg = keep @ Jg + sp.diags(np.where(mask, 1.0, 0.0))
            Rg[mask] = 0.0
    return Rg, Jg


def impose_bc(state, slab, bc):
    """Write Dirichlet values into the state (prescribed exactly)."""
    for node, (lo, hi) in bc.items():
        i = slab.index_of.get(int(node))
        if i is None:
            continue
        if lo is not None:
            state.u_lower[i] = lo
        if hi is not None:
            state.u_upper[i] = hi


def newton_solve_slab(slab, state, props, bc, config=None, pin_pressure=False):
    """Solve one slab with full Newton; returns (state, info).

    Convergence: residual 2-norm <= max(atol, rtol * initial).  Divergence
    (residual growth over three consecutive iterations) or reaching the
    iteration cap raises SolverError carrying the residual history.
    """
    config = config or NewtonConfig()
    impose_bc(state, slab, bc)
    history = []
    grow = 0
    for it in range(config.max_iterations + 1):
        R, J = assemble_slab(slab, state, props, bc=bc, pin_pressure=pin_pressure)
        rnorm = float(np.linalg.norm(R))
        history.append(rnorm)
        target = max(config.atol, config.rtol * history[0])
        if rnorm <= target:
            return state, {"iterations": it, "residuals": history}
        if len(history) >= 2 and rnorm > history[-2]:
            grow += 1
            if grow >= 3:
                raise SolverError(
                    f"slab {slab.index}: Newton diverged after {it} iterations",
                    iterations=it, residuals=history)
        else:
            grow = 0
        if it == config.max_iterations:
            break
        system = SparseSystem(J, -R, {}, symmetric=False)
        try:
            delta, _ = solve(system, config.linear)
        except SolverError as exc:
            raise SolverError(
                f"slab {slab.index}: linear solve failed at Newton iteration {it}: {exc}",
                iterations=it, residuals=history) from exc
        dx = delta.reshape(-1, 5)
        state.u_lower += dx[:, 0:2]
        state.u_upper += dx[:, 2:4]
        state.p += dx[:, 4]
    raise SolverError(
        f"slab {slab.index}: Newton did not converge in {config.max_iterations} iterations",
        iterations=config.max_iterations, residuals=history)


def boundary_flux(slab, state):
    """Net flux of the upper-level velocity through the active-region boundary."""
    act = set(int(e) for e in slab.element_ids)
    flux = 0.0
    for (a, b), els in slab.mesh.edge_elements().items():
        adj = [e for e in els if e in act]
        if len(adj) != 1:
            continue
        ia = slab.index_of.get(a)
        ib = slab.index_of.get(b)
        xa = slab.coords_upper[ia]
        xb = slab.coords_upper[ib]
        # outward normal: the adjacent element lies left of (a, b) as stored
        e = adj[0]
        tri = list(slab.mesh.elements[e])
        k = tri.index(a)
        if tri[(k + 1) % 3] != b:
            xa, xb = xb, xa
            ia, ib = ib, ia
        t = xb - xa
        n = np.array([t[1], -t[0]])
        um = 0.5 * (state.u_upper[ia] + state.u_upper[ib])
        flux += float(um @ n)
    return flux


def jump_energy(slab, state, props):
    """Integral of rho * |u_plus - u_minus|^2 over the lower configuration."""
    conn = slab.conn
    XL = slab.coords_lower[conn]
    e1 = XL[:, 1] - XL[:, 0]
    e2 = XL[:, 2] - XL[:, 0]
    detL = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    du = state.u_lower[conn] - state.donor[conn]
    total = 0.0
    for b3 in _BARY:
        d = np.einsum("a,eai->ei", b3, du)
        total += np.sum(_WBARY * 0.5 * detL * np.sum(d * d, axis=1))
    return props.rho * float(total)
