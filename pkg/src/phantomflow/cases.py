"""Case definitions, configuration parsing, probe evaluation and run loops.

Two cases ship with the package: plane channel flow driven through a moving
background mesh (the validation case with a known parabolic solution), and a
rigid disk descending inside a fluid-filled container (the mesh-update
demonstrator).  Both can run with the full phantom-domain update
(``pd_dmum``) or with a plain elastic update on pinned walls
(``emum_only``) for comparison.

Outputs: a probe CSV ``t,u_x,u_y,rel_err``, a diagnostics CSV
``slab,newton_iters,active_elems,projected_nodes,min_quality``, a Newton
residual log, and optional VTK snapshots carrying the activity pattern and
the nodal fields.  Rows are flushed as they are produced so a failing run
leaves its partial outputs behind.
"""

import configparser
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry, meshio
from .elastic import (ElasticityParams, MeshDirichletSet, apply_displacement,
                      assemble_elasticity, solve_mesh_displacement)
from .errors import ConfigError, StepRejectedError
from .flow import (FluidProperties, FlowDirichletSet, NewtonConfig, SpaceTimeSlab,
                   newton_solve_slab)
from .mesh import (BoundaryTag, MotionClass, build_channel_mesh,
                   build_container_mesh, element_metrics)
from .phantom import FluidRegionSpec, classify_activity, extract_interface, pd_dmum_step
from .state import FlowState

STARTUP_WINDOW = 0.5   # seconds excluded from time-averaged errors


def analytic_poiseuille(y, U, H):
    """Parabolic channel profile u(y) = (4 U y (H - y) / H^2, 0)."""
    if y < 0.0 or y > H:
        raise ValueError(f"y = {y} outside the channel [0, {H}]")
    return np.array([4.0 * U * y * (H - y) / H ** 2, 0.0])


def gamma_T_motion(t, A, T):
    """Sinusoidal driving displacement (0, A sin(2 pi t / T))."""
    if T <= 0.0:
        raise ValueError("period must be positive")
    return np.array([0.0, A * math.sin(2.0 * math.pi * t / T)])


def sample_probe(state, mesh, pattern, p):
    """Linear interpolation of the upper-level velocity at point p.

    Locates the active element containing p (lowest element id on ties) and
    interpolates with barycentric weights.  Raises ValueError with the
    nearest active element when p lies outside the active mesh.
    """
    p = np.asarray(p, dtype=float)
    act = pattern.active_ids()
    tris = mesh.coords[mesh.elements[act]]
    a = tris[:, 0, :]
    det = ((tris[:, 1, 0] - a[:, 0]) * (tris[:, 2, 1] - a[:, 1])
           - (tris[:, 2, 0] - a[:, 0]) * (tris[:, 1, 1] - a[:, 1]))
    px = p[0] - a[:, 0]
    py = p[1] - a[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = ((tris[:, 2, 1] - a[:, 1]) * px - (tris[:, 2, 0] - a[:, 0]) * py) / det
        l2 = (-(tris[:, 1, 1] - a[:, 1]) * px + (tris[:, 1, 0] - a[:, 0]) * py) / det
    bary = np.column_stack([1.0 - l1 - l2, l1, l2])
    ok = np.all(bary >= -1e-10, axis=1) & (det > 0.0)
    hits = np.flatnonzero(ok)
    if not len(hits):
        cen = tris.mean(axis=1)
        nearest = act[int(np.argmin(np.sum((cen - p) ** 2, axis=1)))]
        raise ValueError(f"probe {tuple(p)} outside the active mesh; "
                         f"nearest active element {nearest}")
    e = hits[0]
    w = np.clip(bary[e], 0.0, None)
    w /= w.sum()
    vals = np.array([state.upper_velocity(int(n)) for n in mesh.elements[act[e]]])
    return w @ vals


@dataclass
class CaseConfig:
    case: str = "poiseuille"          # poiseuille | moving_disk
    method: str = "pd_dmum"           # pd_dmum | emum_only
    length: float = 2.2
    height: float = 0.4
    nx: int = 44
    ny: int = 8
    phantom_layers: int = 2
    rho: float = 1.0
    nu: float = 1e-3
    mean_velocity: float = 2.5
    amplitude: float = 0.1
    period: float = 8.0
    dt: float = 0.02
    end_time: float = 8.0
    probe: tuple = (1.1, 0.2)
    output_dir: str = "out"
    vtk_stride: int = 0
    stiffening_exponent: float = 0.0
    # moving-disk extras
    disk_radius: float = 0.125
    disk_center: tuple = (0.5, 1.5)
    descent_speed: float = 0.5
    descent_depth: float = 1.3
    phantom_top: int = 0              # 0: sized automatically from the script

    def __post_init__(self):
        if self.case not in ("poiseuille", "moving_disk"):
            raise ConfigError(f"unknown case {self.case!r}")
        if self.method not in ("pd_dmum", "emum_only"):
            raise ConfigError(f"unknown method {self.method!r}")
        steps = self.end_time / self.dt
        if abs(steps - round(steps)) > 1e-12 * max(steps, 1.0):
            raise ConfigError(f"dt {self.dt} does not divide end time {self.end_time}")
        if self.case == "poiseuille":
            px, py = self.probe
            if not (0.0 < px < self.length and 0.0 < py < self.height):
                raise ConfigError(f"probe {self.probe} outside the fluid region at t = 0")

    @property
    def n_slabs(self):
        return int(round(self.end_time / self.dt))

    def fluid_properties(self):
        return FluidProperties(rho=self.rho, nu=self.nu)


_SCHEMA = {
    "case": {"name": str, "method": str},
    "fluid": {"rho": float, "nu": float, "mean_velocity": float},
    "mesh": {"length": float, "height": float, "nx": int, "ny": int,
             "phantom_layers": int, "phantom_top": int},
    "motion": {"amplitude": float, "period": float, "descent_speed": float,
               "descent_depth": float},
    "disk": {"radius": float, "center_x": float, "center_y": float},
    "time": {"dt": float, "end": float},
    "probe": {"x": float, "y": float},
    "output": {"directory": str, "vtk_stride": int},
    "elastic": {"stiffening_exponent": float},
}

_KEYMAP = {
    ("case", "name"): "case", ("case", "method"): "method",
    ("fluid", "rho"): "rho", ("fluid", "nu"): "nu",
    ("fluid", "mean_velocity"): "mean_velocity",
    ("mesh", "length"): "length", ("mesh", "height"): "height",
    ("mesh", "nx"): "nx", ("mesh", "ny"): "ny",
    ("mesh", "phantom_layers"): "phantom_layers",
    ("mesh", "phantom_top"): "phantom_top",
    ("motion", "amplitude"): "amplitude", ("motion", "period"): "period",
    ("motion", "descent_speed"): "descent_speed",
    ("motion", "descent_depth"): "descent_depth",
    ("disk", "radius"): "disk_radius",
    ("time", "dt"): "dt", ("time", "end"): "end_time",
    ("output", "directory"): "output_dir", ("output", "vtk_stride"): "vtk_stride",
    ("elastic", "stiffening_exponent"): "stiffening_exponent",
}


def parse_config(path):
    """Parse a flat key-value case file with sections; unknown keys error."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    kwargs = {}
    probe = dict(x=None, y=None)
    center = dict(center_x=None, center_y=None)
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            typ = _SCHEMA[section][key]
            try:
                value = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
            if section == "probe":
                probe[key] = value
            elif (section, key) in (("disk", "center_x"), ("disk", "center_y")):
                center[key] = value
            else:
                kwargs[_KEYMAP[(section, key)]] = value
    if probe["x"] is not None or probe["y"] is not None:
        if probe["x"] is None or probe["y"] is None:
            raise ConfigError("probe needs both x and y")
        kwargs["probe"] = (probe["x"], probe["y"])
    if center["center_x"] is not None or center["center_y"] is not None:
        if center["center_x"] is None or center["center_y"] is None:
            raise ConfigError("disk center needs both center_x and center_y")
        kwargs["disk_center"] = (center["center_x"], center["center_y"])
    return CaseConfig(**kwargs)


@dataclass
class ProbeSeries:
    times: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    rel_errors: list = field(default_factory=list)

    def append(self, t, u, err):
        if self.times and t <= self.times[-1]:
            raise ValueError("probe time stamps must increase monotonically")
        self.times.append(float(t))
        self.velocities.append(np.asarray(u, dtype=float))
        self.rel_errors.append(float(err))

    def time_averaged_error(self, startup=STARTUP_WINDOW):
        vals = [e for t, e in zip(self.times, self.rel_errors) if t > startup]
        if not vals:
            raise ValueError("no probe samples after the startup window")
        return float(np.mean(vals))


@dataclass
class RunResult:
    config: CaseConfig
    probe: ProbeSeries
    diagnostics: list
    outputs: dict
    locality_ok: bool = True
    max_projected: int = 0
    cumulative_activated: int = 0
    cumulative_deactivated: int = 0
    min_quality_overall: float = 1.0


class _OutputWriters:
    """Streams probe/diagnostics/Newton CSV rows, flushing per row."""

    def __init__(self, outdir, enabled=True):
        self.enabled = enabled
        self.paths = {}
        self._files = []
        if not enabled:
            self.probe = self.diag = self.newton = None
            return
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.paths["probe"] = outdir / "probe.csv"
        self.paths["diagnostics"] = outdir / "diagnostics.csv"
        self.paths["newton"] = outdir / "newton_log.csv"
        self._probe_f = open(self.paths["probe"], "w", newline="")
        self._diag_f = open(self.paths["diagnostics"], "w", newline="")
        self._newton_f = open(self.paths["newton"], "w", newline="")
        self._files = [self._probe_f, self._diag_f, self._newton_f]
        self.probe = csv.writer(self._probe_f)
        self.diag = csv.writer(self._diag_f)
        self.newton = csv.writer(self._newton_f)
        self.probe.writerow(["t", "u_x", "u_y", "rel_err"])
        self.diag.writerow(["slab", "newton_iters", "active_elems",
                            "projected_nodes", "min_quality"])
        self.newton.writerow(["slab", "iter", "residual"])

    def flush(self):
        for f in self._files:
            f.flush()

    def close(self):
        for f in self._files:
            f.close()


def _repr_csv(x):
    return repr(float(x))


def _mesh_motion_bc(mesh, prescribed):
    """MeshDirichletSet from motion classes plus prescribed displacements.

    Nodes currently tagged as interface act as internal nodes of the mesh
    update, so their prescriptions are dropped; fixed and axis-constrained
    classes always apply.
    """
    bm = MeshDirichletSet()
    for n in range(mesh.n_nodes):
        mc = mesh.motion[n]
        if mc == MotionClass.FIXED.value:
            bm.displacements[n] = (0.0, 0.0)
        elif mc == MotionClass.AXIS_CONSTRAINED.value:
            d = mesh.locked_direction[n]
            bm.axis_locked[n] = 0 if abs(d[0]) < abs(d[1]) else 1
    iface_tagged = set(mesh.nodes_with_tag(BoundaryTag.INTERFACE))
    for n, g in prescribed.items():
        if n not in iface_tagged and n not in bm.axis_locked:
            bm.displacements[n] = g
    return bm


def _initial_channel_state(mesh, slab_nodes, U, H):
    vals = np.zeros((len(slab_nodes), 2))
    for i, n in enumerate(slab_nodes):
        y = min(max(mesh.coords[n, 1], 0.0), H)
        vals[i] = analytic_poiseuille(y, U, H)
    return FlowState.from_velocity(slab_nodes, vals)


def run_case(config, keep_states=False):
    """Run a configured case; returns a RunResult with the probe series."""
    if config.case == "moving_disk":
        return run_moving_disk_case(config, keep_states=keep_states)
    return _run_poiseuille(config, keep_states=keep_states)


def _run_poiseuille(config, keep_states=False):
    L, H, U = config.length, config.height, config.mean_velocity
    mesh = build_channel_mesh(L, H, config.nx, config.ny, config.phantom_layers)
    spec = FluidRegionSpec.band(0.0, H, 0.0, L)
    margin = 0.45 * H / config.ny
    props = config.fluid_properties()
    params = ElasticityParams(stiffening_exponent=config.stiffening_exponent)
    exact = analytic_poiseuille(config.probe[1], U, H)
    exact_norm = float(np.linalg.norm(exact))

    pattern = classify_activity(mesh, spec.inset(margin))
    iface = extract_interface(mesh, pattern)
    gamma_nodes = mesh.nodes_with_tag(BoundaryTag.GAMMA_T)
    inflow_nodes = set(mesh.nodes_with_tag(BoundaryTag.INFLOW))
    initial_coords = mesh.coords.copy()

    emum_only = config.method == "emum_only"
    if emum_only:
        # pinned physical walls; driving tapered to vanish there so the
        # prescribed column motion stays kinematically admissible
        taper = {}
        for n in gamma_nodes:
            y = mesh.coords[n, 1]
            taper[n] = math.sin(math.pi * y / H) if 0.0 <= y <= H else 0.0
        wall_nodes = set(mesh.nodes_with_tag(BoundaryTag.GAMMA_PF))
        frozen_pattern = pattern
        frozen_iface = iface

    def dirichlet_values(current_mesh, current_iface_bc):
        vals = {}
        for n in inflow_nodes:
            y = min(max(current_mesh.coords[n, 1], 0.0), H)
            vals[n] = analytic_poiseuille(y, U, H)
        for n, g in current_iface_bc.items():
            vals[n] = np.asarray(g, dtype=float)
        return vals

    writers = _OutputWriters(config.output_dir)
    probe_series = ProbeSeries()
    diagnostics = []
    states = []
    result = RunResult(config=config, probe=probe_series, diagnostics=diagnostics,
                       outputs=writers.paths)

    slab0 = SpaceTimeSlab(mesh, pattern, mesh.coords, config.dt, props)
    state = _initial_channel_state(mesh, slab0.node_ids, U, H)
    bc_now = dirichlet_values(mesh, {int(n): (0.0, 0.0) for n in iface.nodes})

    try:
        for k in range(config.n_slabs):
            t0 = k * config.dt
            t1 = (k + 1) * config.dt
            lower_coords = mesh.coords.copy()
            bc_prev = bc_now
            old_active = pattern.active.copy()
            delta = gamma_T_motion(t1, config.amplitude, config.period) \
                - gamma_T_motion(t0, config.amplitude, config.period)

            if emum_only:
                prescribed = {n: tuple(delta * taper[n]) for n in gamma_nodes}
                prescribed.update({n: (0.0, 0.0) for n in wall_nodes})
                bm = _mesh_motion_bc(mesh, prescribed)
                if all(v == (0.0, 0.0) for v in prescribed.values()):
                    mesh_new = mesh
                else:
                    system = assemble_elasticity(mesh, params, bm)
                    disp = solve_mesh_displacement(system)
                    mesh_new, rep = apply_displacement(mesh, disp)
                    if rep.orientation_violations:
                        raise StepRejectedError(
                            f"slab {k}: elastic-only update inverted elements "
                            f"{rep.orientation_violations}",
                            offending_elements=rep.orientation_violations)
                pattern = frozen_pattern
                iface_bc = {int(n): (0.0, 0.0) for n in frozen_iface.nodes}
                projected = 0
                donor_state = state
            else:
                prescribed = {n: tuple(delta) for n in gamma_nodes}
                bm = _mesh_motion_bc(mesh, prescribed)
                step = pd_dmum_step(mesh, bm, spec, state, params=params,
                                    interface_velocity=(0.0, 0.0), epoch=k + 1,
                                    pattern_old=pattern, activation_margin=margin)
                mesh_new = step.mesh
                pattern = step.pattern
                iface_bc = step.interface_bc
                donor_state = step.donor_state
                projected = step.record.n_projected
                result.max_projected = max(result.max_projected, projected)
                result.cumulative_activated += len(step.record.newly_activated)
                result.cumulative_deactivated += int(
                    np.count_nonzero(old_active & ~pattern.active))
                newly_nodes = set(
                    int(v) for e in step.record.newly_activated
                    for v in mesh_new.elements[e])
                if not set(step.record.donors).issubset(newly_nodes):
                    result.locality_ok = False

            slab = SpaceTimeSlab(mesh_new, pattern, lower_coords, config.dt,
                                 props, donor_state=donor_state, index=k)
            bc_now = dirichlet_values(mesh_new, iface_bc)
            bc = FlowDirichletSet()
            for n in set(bc_prev) | set(bc_now):
                bc.set(n, bc_prev.get(n), bc_now.get(n))
            st = slab.make_state(donor_state)
            st, info = newton_solve_slab(slab, st, props, bc)

            u_probe = sample_probe(st, mesh_new, pattern, config.probe)
            err = float(np.linalg.norm(u_probe - exact)) / exact_norm
            probe_series.append(t1, u_probe, err)
            q = geometry.triangle_quality(
                mesh_new.coords[mesh_new.elements[pattern.active]])
            min_q = float(q.min())
            result.min_quality_overall = min(result.min_quality_overall, min_q)

            writers.probe.writerow([_repr_csv(t1), _repr_csv(u_probe[0]),
                                    _repr_csv(u_probe[1]), _repr_csv(err)])
            writers.diag.writerow([k, info["iterations"], pattern.n_active,
                                   projected, _repr_csv(min_q)])
            for it, r in enumerate(info["residuals"]):
                writers.newton.writerow([k, it, _repr_csv(r)])
            writers.flush()
            diagnostics.append({"slab": k, "newton_iters": info["iterations"],
                                "active_elems": pattern.n_active,
                                "projected_nodes": projected,
                                "min_quality": min_q})
            if config.vtk_stride and (k % config.vtk_stride == 0):
                _write_snapshot(writers.paths, config, k, mesh_new, pattern, st,
                                initial_coords)
            mesh = mesh_new
            state = st
            if keep_states:
                states.append(st)
    finally:
        writers.flush()
        writers.close()
    result.outputs = writers.paths
    if keep_states:
        result.outputs["states"] = states
    return result


def _write_snapshot(paths, config, k, mesh, pattern, state, initial_coords):
    point_u = np.zeros((mesh.n_nodes, 2))
    point_p = np.zeros(mesh.n_nodes)
    for i, n in enumerate(state.node_ids):
        point_u[n] = state.u_upper[i]
        point_p[n] = state.p[i]
    outdir = Path(config.output_dir)
    path = outdir / f"snapshot_{k:05d}.vtk"
    meshio.write_vtk(path, mesh,
                     point_data={"velocity": point_u, "pressure": point_p,
                                 "mesh_displacement": mesh.coords - initial_coords},
                     cell_data={"activity": pattern.active.astype(np.int32)})
    paths.setdefault("vtk", []).append(path)


@dataclass
class ConvergenceRow:
    level: int
    nx: int
    ny: int
    h: float
    error: float


@dataclass
class ConvergenceResult:
    rows: list
    observed_order: float | None
    failure: str | None = None


def convergence_study(config, levels):
    """Run ``levels`` refinements doubling (nx, ny) each time.

    Reports the time-averaged probe error per level and the observed order
    from a log-log least-squares fit.  A failing level halts the study and
    earlier rows are retained in the result.
    """
    if levels < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    rows = []
    failure = None
    for lvl in range(levels):
        cfg = replace(config, nx=config.nx * 2 ** lvl, ny=config.ny * 2 ** lvl,
                      output_dir=str(Path(config.output_dir) / f"level{lvl}"))
        try:
            res = run_case(cfg)
        except Exception as exc:  # halt, keep earlier rows
            failure = f"level {lvl} failed: {exc}"
            break
        rows.append(ConvergenceRow(level=lvl, nx=cfg.nx, ny=cfg.ny,
                                   h=config.height / cfg.ny,
                                   error=res.probe.time_averaged_error()))
    order = None
    if len(rows) >= 2:
        hs = np.log([r.h for r in rows])
        es = np.log([r.error for r in rows])
        order = float(np.polyfit(hs, es, 1)[0])
    return ConvergenceResult(rows=rows, observed_order=order, failure=failure)


def disk_motion(t, speed, depth):
    """Piecewise descent/ascent displacement of the disk center (y offset)."""
    t_turn = depth / speed
    if t <= 0.0:
        return 0.0
    if t <= t_turn:
        return -speed * t
    return -depth + speed * min(t - t_turn, t_turn)


def disk_velocity(t, speed, depth):
    t_turn = depth / speed
    if t <= 0.0 or t >= 2.0 * t_turn:
        return 0.0
    return -speed if t < t_turn else speed


def run_moving_disk_case(config, keep_states=False):
    """Rigid disk descending in a closed-bottom container with phantom strips.

    The disk boundary drives the elastic update as a Dirichlet set; element
    rows exit through the container bottom and enter from the top reserve.
    Diagnostics track minimum active element quality and cumulative
    activation counts.  ``emum_only`` pins the container bottom/top lines and
    deforms the whole mesh elastically, which under deep descents degrades
    or inverts elements; errors propagate after partial outputs flush.
    """
    W, Hc = config.length, config.height
    speed, depth = config.descent_speed, config.descent_depth
    dy = Hc / config.ny
    n_rows_descent = int(math.ceil(depth / dy))
    gap = config.disk_center[1] - config.disk_radius - depth
    if gap < dy:
        raise ConfigError("disk script leaves less than one element row above the floor")
    phantom_top = config.phantom_top or (n_rows_descent + 2)
    mesh = build_container_mesh(W, Hc, config.nx, config.ny,
                                config.disk_center, config.disk_radius,
                                phantom_bottom=config.phantom_layers,
                                phantom_top=phantom_top)
    spec = FluidRegionSpec.band(0.0, Hc, 0.0, W)
    margin = 0.45 * dy
    props = config.fluid_properties()
    params = ElasticityParams(stiffening_exponent=config.stiffening_exponent or 1.0)
    disk_nodes = mesh.nodes_with_tag(BoundaryTag.MOVING_BODY)
    wall_nodes = set(mesh.nodes_with_tag(BoundaryTag.WALL)) - set(disk_nodes)

    emum_only = config.method == "emum_only"
    pattern = classify_activity(mesh, spec.inset(margin))
    iface = extract_interface(mesh, pattern)
    if emum_only:
        frozen_pattern = pattern
        frozen_iface = iface
        pf_nodes = set(mesh.nodes_with_tag(BoundaryTag.GAMMA_PF))

    def interface_velocity(node, xy):
        # container bottom is a no-slip wall; the open top stays natural
        return (0.0, 0.0) if xy[1] < 0.5 * Hc else None

    def dirichlet_values(current_mesh, iface_bc, t):
        vals = {}
        vdisk = (0.0, disk_velocity(t, speed, depth))
        for n in disk_nodes:
            vals[n] = np.asarray(vdisk, dtype=float)
        for n in wall_nodes:
            vals[n] = np.zeros(2)   # inactive nodes are skipped at constraint time
        for n, g in iface_bc.items():
            vals[n] = np.asarray(g, dtype=float)
        return vals

    writers = _OutputWriters(config.output_dir)
    probe_series = ProbeSeries()
    diagnostics = []
    states = []
    result = RunResult(config=config, probe=probe_series, diagnostics=diagnostics,
                       outputs=writers.paths)
    initial_coords = mesh.coords.copy()

    slab0 = SpaceTimeSlab(mesh, pattern, mesh.coords, config.dt, props)
    state = FlowState.from_velocity(slab0.node_ids,
                                    np.zeros((len(slab0.node_ids), 2)))
    iface_bc0 = {}
    for n in iface.nodes:
        g = interface_velocity(n, mesh.coords[n])
        if g is not None:
            iface_bc0[int(n)] = g
    bc_now = dirichlet_values(mesh, iface_bc0, 0.0)

    try:
        for k in range(config.n_slabs):
            t0 = k * config.dt
            t1 = (k + 1) * config.dt
            lower_coords = mesh.coords.copy()
            bc_prev = bc_now
            delta_y = disk_motion(t1, speed, depth) - disk_motion(t0, speed, depth)
            prescribed = {n: (0.0, delta_y) for n in disk_nodes}

            old_active = pattern.active.copy()
            if emum_only:
                prescribed.update({n: (0.0, 0.0) for n in pf_nodes})
                bm = _mesh_motion_bc(mesh, prescribed)
                if delta_y == 0.0:
                    mesh_new = mesh
                else:
                    system = assemble_elasticity(mesh, params, bm)
                    disp = solve_mesh_displacement(system)
                    mesh_new, rep = apply_displacement(mesh, disp)
                    if rep.orientation_violations:
                        raise StepRejectedError(
                            f"slab {k}: elastic-only update inverted elements "
                            f"{rep.orientation_violations}",
                            offending_elements=rep.orientation_violations)
                pattern = frozen_pattern
                iface_bc = dict(iface_bc0)
                projected = 0
                donor_state = state
            else:
                bm = _mesh_motion_bc(mesh, prescribed)
                step = pd_dmum_step(mesh, bm, spec, state, params=params,
                                    interface_velocity=interface_velocity,
                                    epoch=k + 1, pattern_old=pattern,
                                    activation_margin=margin)
                mesh_new = step.mesh
                pattern = step.pattern
                iface_bc = {n: g for n, g in step.interface_bc.items() if g is not None}
                donor_state = step.donor_state
                projected = step.record.n_projected
                result.max_projected = max(result.max_projected, projected)
                result.cumulative_activated += len(step.record.newly_activated)
                result.cumulative_deactivated += int(
                    np.count_nonzero(old_active & ~pattern.active))
                newly_nodes = set(
                    int(v) for e in step.record.newly_activated
                    for v in mesh_new.elements[e])
                if not set(step.record.donors).issubset(newly_nodes):
                    result.locality_ok = False

            slab = SpaceTimeSlab(mesh_new, pattern, lower_coords, config.dt,
                                 props, donor_state=donor_state, index=k)
            bc_now = dirichlet_values(mesh_new, iface_bc, t1)
            bc = FlowDirichletSet()
            for n in set(bc_prev) | set(bc_now):
                bc.set(n, bc_prev.get(n), bc_now.get(n))
            st = slab.make_state(donor_state)
            st, info = newton_solve_slab(slab, st, props, bc)

            q = geometry.triangle_quality(
                mesh_new.coords[mesh_new.elements[pattern.active]])
            min_q = float(q.min())
            result.min_quality_overall = min(result.min_quality_overall, min_q)
            probe_u = np.zeros(2)
            probe_err = 0.0
            probe_series.append(t1, probe_u, probe_err)
            writers.probe.writerow([_repr_csv(t1), _repr_csv(probe_u[0]),
                                    _repr_csv(probe_u[1]), _repr_csv(probe_err)])
            writers.diag.writerow([k, info["iterations"], pattern.n_active,
                                   projected, _repr_csv(min_q)])
            for it, r in enumerate(info["residuals"]):
                writers.newton.writerow([k, it, _repr_csv(r)])
            writers.flush()
            diagnostics.append({"slab": k, "newton_iters": info["iterations"],
                                "active_elems": pattern.n_active,
                                "projected_nodes": projected,
                                "min_quality": min_q})
            if config.vtk_stride and (k % config.vtk_stride == 0):
                _write_snapshot(writers.paths, config, k, mesh_new, pattern, st,
                                initial_coords)
            mesh = mesh_new
            state = st
            if keep_states:
                states.append(st)
    finally:
        writers.flush()
        writers.close()
    result.outputs = writers.paths
    if keep_states:
        result.outputs["states"] = states
    return result
