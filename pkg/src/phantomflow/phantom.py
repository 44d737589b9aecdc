"""Phantom-domain mesh update: activity patterns, interface handling,
solution projection and virtual-ring bookkeeping.

The fluid domain is described by a fixed region specification; mesh elements
that intersect it are active, the rest sit in the phantom reserve.  After
each elastic mesh update the activity pattern is re-derived from the upper
time-level configuration, the dynamic interface between active and inactive
elements is pulled onto the prescribed fluid boundary by closest-point
projection, and elements entering the fluid domain receive the previous
solution by local interpolation.  The whole step is orchestrated by
:func:`pd_dmum_step`.

classify_activity and build_projection_records are pure functions of their
inputs (safe to re-run or parallelize); the orchestration step mutates
nothing it was given and returns a fresh mesh.
"""

from dataclasses import dataclass, field

import numpy as np

from . import elastic, geometry
from .errors import MeshError, StepRejectedError
from .mesh import BoundaryTag, MotionClass
from .state import FlowState


class FluidRegionSpec:
    """Prescribed fluid region: boundary polylines plus an inside test.

    ``polylines`` is a list of (m, 2) vertex arrays tracing the prescribed
    fluid boundary; ``signed_distance`` maps points (n, 2) to values that
    are positive strictly inside the fluid region.  Consistency of the two
    is checked on construction by sampling across segment midpoints.
    """

    def __init__(self, polylines, signed_distance, check=True):
        self.polylines = [np.asarray(p, dtype=float) for p in polylines]
        for p in self.polylines:
            if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
                raise ValueError("each polyline must be (m >= 2, 2)")
        self.signed_distance = signed_distance
        seg_a = [p[:-1] for p in self.polylines]
        seg_b = [p[1:] for p in self.polylines]
        self.seg_a = np.vstack(seg_a)
        self.seg_b = np.vstack(seg_b)
        if check:
            self._check_consistency()

    def _check_consistency(self):
        mid = 0.5 * (self.seg_a + self.seg_b)
        tang = self.seg_b - self.seg_a
        lengths = np.linalg.norm(tang, axis=1)
        if np.any(lengths == 0.0):
            raise ValueError("zero-length boundary segment")
        normal = np.column_stack([-tang[:, 1], tang[:, 0]]) / lengths[:, None]
        eps = 1e-6 * lengths[:, None]
        s_plus = self.signed_distance(mid + eps * normal)
        s_minus = self.signed_distance(mid - eps * normal)
        if not np.any((s_plus > 0) | (s_minus > 0)):
            raise ValueError("fluid region has empty interior near its boundary")
        if np.any(np.sign(s_plus) == np.sign(s_minus)):
            raise ValueError("inside test inconsistent with boundary polylines")

    def inset(self, margin):
        """Region shrunk inward by ``margin``; boundary polylines unchanged.

        Classifying against an inset region keeps near-tangent elements out
        of the active set, so the interface correction never has to squash a
        freshly entered element row to a sliver; the correction itself still
        targets the original boundary.
        """
        if margin == 0.0:
            return self
        if margin < 0.0:
            raise ValueError("margin must be nonnegative")
        base = self.signed_distance
        return FluidRegionSpec(self.polylines, lambda p: base(p) - margin, check=False)

    @classmethod
    def band(cls, y_lo, y_hi, x_lo, x_hi):
        """Horizontal band y_lo <= y <= y_hi with boundary lines at both y's."""
        if y_hi <= y_lo or x_hi <= x_lo:
            raise ValueError("empty band")
        lines = [np.array([[x_lo, y_lo], [x_hi, y_lo]]),
                 np.array([[x_lo, y_hi], [x_hi, y_hi]])]

        def sd(points):
            y = np.atleast_2d(points)[:, 1]
            return np.minimum(y - y_lo, y_hi - y)

        return cls(lines, sd)

    @classmethod
    def convex_polygon(cls, vertices):
        """Convex polygon region (counterclockwise vertex order)."""
        v = np.asarray(vertices, dtype=float)
        if len(v) < 3 or geometry.signed_area(v[[0, 1, 2]]) == 0 and len(v) == 3:
            raise ValueError("need a non-degenerate polygon")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area2 < 0:
            v = v[::-1]
        elif area2 == 0:
            raise ValueError("degenerate polygon")
        closed = np.vstack([v, v[:1]])
        edges = closed[1:] - closed[:-1]
        lengths = np.linalg.norm(edges, axis=1)
        inward = np.column_stack([-edges[:, 1], edges[:, 0]]) / lengths[:, None]
        anchors = closed[:-1]

        def sd(points):
            p = np.atleast_2d(points)
            d = np.einsum("ej,pj->pe", inward, p) - np.einsum("ej,ej->e", inward, anchors)[None, :]
            return d.min(axis=1)

        return cls([closed], sd)


@dataclass
class ActivityPattern:
    """Per-element active flags, classified at slab index ``epoch``."""

    active: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)

    @property
    def n_active(self):
        return int(self.active.sum())

    def active_ids(self):
        return np.flatnonzero(self.active)


@dataclass
class InterfaceSet:
    """Interface between active and inactive elements.

    ``edges`` holds sorted node pairs each shared by exactly one active and
    one inactive element; ``nodes`` their endpoints, except nodes whose
    motion class is fixed (interface nodes act as internal nodes in the
    mesh update, so a fixed node cannot serve as one).
    """

    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)


@dataclass
class DonorEntry:
    element: int | None          # source element in the previous active mesh
    bary: np.ndarray | None      # barycentric weights within it
    fallback_node: int | None = None


@dataclass
class ProjectionRecord:
    newly_activated: list = field(default_factory=list)
    donors: dict = field(default_factory=dict)   # node id -> DonorEntry

    @property
    def n_projected(self):
        return len(self.donors)


def classify_activity(mesh, spec, config=None, epoch=0):
    """Active flags for every element of the upper-level configuration.

    An element is active iff it intersects the closed fluid region with
    positive measure: a vertex or the centroid strictly inside, a boundary
    segment of the region properly crossing an element edge, or a region
    boundary vertex strictly inside the element.  Tangent contact (touching
    along an edge or point only) classifies inactive.
    """
    coords = mesh.coords if config is None else np.asarray(config, dtype=float)
    tris = coords[mesh.elements]
    sd_nodes = np.asarray(spec.signed_distance(coords))
    active = np.any(sd_nodes[mesh.elements] > 0.0, axis=1)
    centroids = tris.mean(axis=1)
    active |= np.asarray(spec.signed_distance(centroids)) > 0.0

    rest = np.flatnonzero(~active)
    if len(rest):
        sub = tris[rest]
        lo = sub.min(axis=1)
        hi = sub.max(axis=1)
        for poly in spec.polylines:
            p_lo = poly.min(axis=0)
            p_hi = poly.max(axis=0)
            near = np.flatnonzero((lo[:, 0] <= p_hi[0]) & (hi[:, 0] >= p_lo[0])
                                  & (lo[:, 1] <= p_hi[1]) & (hi[:, 1] >= p_lo[1]))
            if not len(near):
                continue
            cand = rest[near]
            cand_tris = tris[cand]
            a = poly[:-1]
            b = poly[1:]
            hit = np.zeros(len(cand), dtype=bool)
            for k in range(3):
                p0 = cand_tris[:, k, :][:, None, :]
                p1 = cand_tris[:, (k + 1) % 3, :][:, None, :]
                hit |= np.any(geometry.segments_properly_cross(
                    p0, p1, a[None, :, :], b[None, :, :]), axis=1)
            hit |= np.any(geometry.points_in_triangles(cand_tris, poly), axis=1)
            active[cand[hit]] = True
            rest_mask = np.ones(len(rest), dtype=bool)
            rest_mask[near[hit]] = False
            rest = rest[rest_mask]
            if not len(rest):
                break
    return ActivityPattern(active=active, epoch=epoch)


def extract_interface(mesh, pattern):
    """Edges separating active from inactive elements; retags interface nodes.

    Adds the interface tag to every interface-edge endpoint that is not
    motion-fixed and removes it from all other nodes.
    """
    if not np.any(pattern.active):
        raise ValueError("no active elements; cannot extract an interface")
    edges = set()
    nodes = set()
    for (a, b), els in mesh.edge_elements().items():
        if len(els) == 2 and pattern.active[els[0]] != pattern.active[els[1]]:
            edges.add((a, b))
            nodes.update((a, b))
    nodes = {n for n in nodes if mesh.motion[n] != MotionClass.FIXED.value}
    for n in list(mesh.nodes_with_tag(BoundaryTag.INTERFACE)):
        if n not in nodes:
            mesh.remove_node_tag(n, BoundaryTag.INTERFACE)
    for n in nodes:
        mesh.add_node_tag(n, BoundaryTag.INTERFACE)
    return InterfaceSet(nodes=nodes, edges=edges)


def conform_interface(mesh, iface, spec, extra_nodes=(), on_unsafe="raise",
                      min_area_factor=0.1):
    """Displacement pulling each interface node onto the prescribed boundary.

    All other nodes receive zero displacement.  Pulls are applied greedily
    in order of ascending projection distance; a pull is unsafe when it
    drops the signed area of an adjacent element below ``min_area_factor``
    times its entry value (inversion and node collapse included).  Where an
    activation front ends mid-row, the two ends of the staircase step in
    the interface project onto the same boundary point, so the longer of
    the two pulls is inherently unsafe and is the normal customer of the
    ``skip`` policy; the skipped node conforms on a later step once the
    front has passed it.

    on_unsafe: "raise" aborts with the offending nodes (caller may reduce
    the time step); "skip" leaves them at their current positions.
    Returns (DisplacementField, skipped node list).
    """
    if not iface.nodes and not extra_nodes:
        raise ValueError("empty interface")
    moved = sorted(set(iface.nodes) | set(int(n) for n in extra_nodes))
    pts = mesh.coords[moved]
    foot, _, _, dist = geometry.project_points_to_segments(pts, spec.seg_a, spec.seg_b)

    node_elems = {}
    for e in np.flatnonzero(np.isin(mesh.elements, moved).any(axis=1)):
        for n in mesh.elements[e]:
            node_elems.setdefault(int(n), []).append(int(e))
    trial = mesh.coords.copy()
    entry_area = geometry.signed_area(mesh.element_coords())

    skipped = []
    order = sorted(range(len(moved)), key=lambda i: (dist[i], moved[i]))
    for i in order:
        n = moved[i]
        old = trial[n].copy()
        trial[n] = foot[i]
        adj = node_elems.get(n, ())
        areas = geometry.signed_area(trial[np.asarray(mesh.elements[adj])]) if adj else ()
        ok = all(a > min_area_factor * entry_area[e] for a, e in zip(areas, adj))
        if not ok:
            trial[n] = old
            skipped.append(n)
    if skipped and on_unsafe == "raise":
        raise StepRejectedError(
            f"interface projection would invert or collapse elements near nodes {skipped}",
            offending_nodes=skipped)
    disp = trial - mesh.coords
    return elastic.DisplacementField(disp), skipped


def build_projection_records(pattern_old, pattern_new, mesh_old):
    """Donor map for nodes entering the fluid domain.

    Newly activated elements are those active now but not before.  Each of
    their nodes that carried no previous solution gets a donor: the old
    active element containing it (with clamped barycentric weights), or the
    nearest old active node when it lies outside the old active mesh.
    """
    if pattern_old.active.shape != pattern_new.active.shape:
        raise ValueError("activity patterns cover different element lists")
    newly = np.flatnonzero(pattern_new.active & ~pattern_old.active)
    record = ProjectionRecord(newly_activated=[int(e) for e in newly])
    if not len(newly):
        return record
    old_nodes = np.unique(mesh_old.elements[pattern_old.active])
    old_set = set(int(n) for n in old_nodes)
    need = sorted(set(int(n) for n in np.unique(mesh_old.elements[newly])) - old_set)
    if not need:
        return record

    old_els = np.flatnonzero(pattern_old.active)
    tris = mesh_old.coords[mesh_old.elements[old_els]]
    a = tris[:, 0, :]
    det = ((tris[:, 1, 0] - a[:, 0]) * (tris[:, 2, 1] - a[:, 1])
           - (tris[:, 2, 0] - a[:, 0]) * (tris[:, 1, 1] - a[:, 1]))
    points = mesh_old.coords[need]
    for i, n in enumerate(need):
        px = points[i, 0] - a[:, 0]
        py = points[i, 1] - a[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            l1 = ((tris[:, 2, 1] - a[:, 1]) * px - (tris[:, 2, 0] - a[:, 0]) * py) / det
            l2 = (-(tris[:, 1, 1] - a[:, 1]) * px + (tris[:, 1, 0] - a[:, 0]) * py) / det
        l0 = 1.0 - l1 - l2
        bary = np.column_stack([l0, l1, l2])
        ok = np.all(bary >= -1e-10, axis=1) & (det != 0.0)
        hits = np.flatnonzero(ok)
        if len(hits):
            e = hits[0]                      # lowest element id wins
            w = np.clip(bary[e], 0.0, None)
            w = w / w.sum()
            record.donors[n] = DonorEntry(element=int(old_els[e]), bary=w)
        else:
            d2 = np.sum((mesh_old.coords[old_nodes] - points[i]) ** 2, axis=1)
            record.donors[n] = DonorEntry(element=None, bary=None,
                                          fallback_node=int(old_nodes[np.argmin(d2)]))
    return record


def interpolate_donor_state(record, mesh_old, old_state, active_nodes):
    """Donor velocity/pressure arrays for the new active node set."""
    n = len(active_nodes)
    donor_u = np.zeros((n, 2))
    donor_p = np.zeros(n)
    for i, node in enumerate(active_nodes):
        node = int(node)
        if old_state.has_node(node):
            donor_u[i] = old_state.upper_velocity(node)
            donor_p[i] = old_state.pressure(node)
            continue
        entry = record.donors.get(node)
        if entry is None:
            continue
        if entry.element is not None:
            tri_nodes = mesh_old.elements[entry.element]
            vals = np.array([old_state.upper_velocity(int(m)) for m in tri_nodes])
            ps = np.array([old_state.pressure(int(m)) for m in tri_nodes])
            donor_u[i] = entry.bary @ vals
            donor_p[i] = entry.bary @ ps
        else:
            donor_u[i] = old_state.upper_velocity(entry.fallback_node)
            donor_p[i] = old_state.pressure(entry.fallback_node)
    return donor_u, donor_p


def apply_ring_shift(mesh, shift):
    """Cyclically relabel element rows along the virtual ring.

    Element slot (row r, column c) takes over the node triple (and the
    travelling per-element records: phantom membership, reference shape,
    ring index) of slot ((r + shift) mod rows, c).  Node positions never
    move, so element count, the multiset of reference shapes and the fluid
    coverage are all preserved; shifting by the full circumference is the
    identity.
    """
    if not mesh.ring_links:
        raise MeshError("mesh has no ring links; ring shift unsupported")
    if mesh.grid_shape is None:
        raise MeshError("ring shift needs structured-grid provenance")
    rows, cols = mesh.grid_shape
    if abs(shift) >= rows:
        raise ValueError(f"|shift| must be below the ring circumference ({rows} rows)")
    per_row = 2 * cols
    if mesh.n_elements != rows * per_row:
        raise MeshError("element count inconsistent with grid provenance")
    e = np.arange(mesh.n_elements)
    r = e // per_row
    within = e % per_row
    perm = ((r + shift) % rows) * per_row + within
    out = mesh.copy()
    out.elements = mesh.elements[perm].copy()
    out.phantom = mesh.phantom[perm].copy()
    out.ref_area = mesh.ref_area[perm].copy()
    out.ring_index = mesh.ring_index[perm].copy()
    out._edge_cache = None
    return out


def ring_rebalance_hint(mesh, pattern):
    """Suggested ring shift keeping phantom reserves within budget (0 = no-op).

    Reserve thickness per side is the run of fully inactive construction
    rows next to each exterior; a positive hint moves slack from the thick
    side toward the exhausted one.  The shift itself is geometry-neutral
    bookkeeping, so this is diagnostic unless reserves are resized.
    """
    if mesh.grid_shape is None or not mesh.ring_links:
        return 0
    rows, cols = mesh.grid_shape
    per_row = 2 * cols
    row_inactive = ~pattern.active.reshape(rows, per_row).any(axis=1)
    bottom = 0
    for r in range(rows):
        if row_inactive[r]:
            bottom += 1
        else:
            break
    top = 0
    for r in range(rows - 1, -1, -1):
        if row_inactive[r]:
            top += 1
        else:
            break
    if bottom == 0 and top > 1:
        return (top - bottom) // 2
    if top == 0 and bottom > 1:
        return -(bottom - top) // 2
    return 0


@dataclass
class StepResult:
    mesh: object
    pattern: ActivityPattern
    iface: InterfaceSet
    interface_bc: dict              # node id -> prescribed velocity (2,)
    donor_state: FlowState | None   # previous solution projected onto the new active set
    record: ProjectionRecord
    diagnostics: dict


def pd_dmum_step(mesh, boundary_motion, spec, old_state, params=None,
                 interface_velocity=(0.0, 0.0), epoch=0, pattern_old=None,
                 activation_margin=0.0):
    """One phantom-domain mesh update step.

    In order: (1) elastic mesh update from the prescribed boundary motion,
    (2) activity classification on the resulting upper-level configuration,
    (3) closest-point correction of the interface onto the prescribed fluid
    boundary, (4) flow boundary values on the interface nodes, (5) projection
    of the previous solution onto newly activated nodes, (6) hand-off of the
    active submesh plus boundary data.  The input mesh is left untouched, so
    a rejected step simply keeps the previous configuration.

    ``activation_margin`` classifies against the region shrunk inward by
    that length (see FluidRegionSpec.inset); the interface correction still
    targets the original boundary, closing the gap.  A margin just under
    half the wall-element height keeps entering rows from degenerating.
    """
    params = params or elastic.ElasticityParams()
    spec_act = spec.inset(activation_margin)
    if pattern_old is None:
        pattern_old = classify_activity(mesh, spec_act, epoch=max(epoch - 1, 0))

    rows = boundary_motion.constraint_rows()
    if rows and all(v == 0.0 for v in rows.values()):
        # zero Dirichlet data: the homogeneous solve is identically zero
        mesh_new = mesh.copy()
        emum_violations = []
    else:
        system = elastic.assemble_elasticity(mesh, params, boundary_motion)
        disp = elastic.solve_mesh_displacement(system)
        mesh_new, rep = elastic.apply_displacement(mesh, disp)
        emum_violations = list(rep.orientation_violations)

    pattern = classify_activity(mesh_new, spec_act, epoch=epoch)
    if not np.any(pattern.active):
        raise StepRejectedError("mesh update left no active elements")

    iface = extract_interface(mesh_new, pattern)
    exterior_nodes = {n for (a, b) in mesh_new.exterior_edges() for n in (a, b)}
    active_node_set = set(int(n) for n in np.unique(mesh_new.elements[pattern.active]))
    closure = sorted(
        n for n in mesh_new.nodes_with_tag(BoundaryTag.PHANTOM_EXTERIOR)
        if n in active_node_set and n in exterior_nodes and n not in iface.nodes
        and mesh_new.motion[n] != MotionClass.FIXED.value)

    skipped = []
    if iface.nodes or closure:
        conform, skipped = conform_interface(mesh_new, iface, spec,
                                             extra_nodes=closure, on_unsafe="skip")
        mesh_new, rep = elastic.apply_displacement(mesh_new, conform)
        violations = rep.orientation_violations
    else:
        violations = emum_violations
    if violations:
        raise StepRejectedError(
            f"mesh update inverted elements {violations} even after interface projection",
            offending_elements=violations)

    interface_bc = {}
    for n in sorted(set(iface.nodes) | set(closure)):
        if callable(interface_velocity):
            g = interface_velocity(int(n), mesh_new.coords[n])
            if g is None:    # node sits on a natural (traction-free) section
                interface_bc[int(n)] = None
                continue
        else:
            g = interface_velocity
        interface_bc[int(n)] = np.asarray(g, dtype=float)

    record = build_projection_records(pattern_old, pattern, mesh)
    donor_state = None
    if old_state is not None:
        active_nodes = np.unique(mesh_new.elements[pattern.active])
        donor_u, donor_p = interpolate_donor_state(record, mesh, old_state, active_nodes)
        donor_state = FlowState(active_nodes, donor_u.copy(), donor_u.copy(),
                                donor_p, donor_u.copy())

    diagnostics = {
        "emum_orientation_violations": emum_violations,
        "projected_nodes": record.n_projected,
        "newly_activated": len(record.newly_activated),
        "closure_nodes": len(closure),
        "conform_skipped": len(skipped),
        "ring_shift_hint": ring_rebalance_hint(mesh_new, pattern),
    }
    return StepResult(mesh=mesh_new, pattern=pattern, iface=iface,
                      interface_bc=interface_bc, donor_state=donor_state,
                      record=record, diagnostics=diagnostics)
