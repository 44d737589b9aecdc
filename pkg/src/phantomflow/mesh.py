"""Triangle mesh data model with boundary tags and phantom-domain bookkeeping.

The mesh couples a fluid region with phantom element strips that sit outside
the physical domain and hold reserve elements.  Geometry lives in numpy
arrays (``coords``, ``elements``); tags and motion classes drive both the
flow boundary conditions and the elastic mesh update.  A mesh is treated as
immutable while solvers read from it; coordinate updates happen in exclusive
phases through :func:`phantomflow.elastic.apply_displacement` or the
orchestration step, which re-validate orientation before any solver consumes
the result.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geometry
from .errors import MeshError


class BoundaryTag(Enum):
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    WALL = "wall"
    GAMMA_T = "gamma_T"              # internal driving section
    GAMMA_PF = "gamma_PF"            # prescribed fluid/phantom boundary
    PHANTOM_EXTERIOR = "phantom_exterior"
    INTERFACE = "interface_gamma_I"  # dynamic active/inactive interface
    MOVING_BODY = "moving_body"


class MotionClass(Enum):
    FIXED = 0
    PRESCRIBED = 1
    FREE = 2
    AXIS_CONSTRAINED = 3  # zero displacement in one direction only


@dataclass
class Node:
    """Read-only view of one mesh node."""

    id: int
    x: np.ndarray
    tags: set
    motion_class: MotionClass
    locked_direction: np.ndarray | None = None


@dataclass
class Element:
    """Read-only view of one linear triangle."""

    id: int
    node_ids: tuple
    phantom_member: bool
    ring_index: int | None = None


@dataclass
class ValidationReport:
    orientation_violations: list = field(default_factory=list)
    duplicate_nodes: list = field(default_factory=list)
    nonmanifold_edges: list = field(default_factory=list)
    dangling_ring_links: list = field(default_factory=list)
    tag_conflicts: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.orientation_violations or self.duplicate_nodes
                    or self.nonmanifold_edges or self.dangling_ring_links
                    or self.tag_conflicts)

    def summary(self):
        parts = []
        for name in ("orientation_violations", "duplicate_nodes",
                     "nonmanifold_edges", "dangling_ring_links", "tag_conflicts"):
            items = getattr(self, name)
            if items:
                parts.append(f"{name}: {items}")
        return "ok" if not parts else "; ".join(parts)


class Mesh:
    """Linear-triangle mesh with tagged boundary edges and ring links.

    Parameters
    ----------
    coords : (n_nodes, 2) float array
    elements : (n_elements, 3) int array, counterclockwise node triples
    boundary_edges : list of (n0, n1, BoundaryTag)
        Tagged edges.  Topological boundary edges carry inflow/outflow/
        phantom-exterior tags; interior polylines (gamma_PF, gamma_T traces)
        are also listed here so they survive node motion and retagging.
    phantom : (n_elements,) bool array, optional
    ring_links : list of ((a0, a1), (b0, b1)), optional
        Pairs of exterior edges on opposite phantom strips forming the
        virtual ring; paired edges match in node count and orientation but
        are not geometrically coincident.
    """

    def __init__(self, coords, elements, boundary_edges=None, phantom=None,
                 ring_links=None):
        self.coords = np.ascontiguousarray(coords, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int32)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise MeshError("coords must be (n, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be (m, 3)")
        self.boundary_edges = [(int(a), int(b), BoundaryTag(t))
                               for a, b, t in (boundary_edges or [])]
        if phantom is None:
            phantom = np.zeros(len(self.elements), dtype=bool)
        self.phantom = np.asarray(phantom, dtype=bool).copy()
        self.ring_links = [((int(a0), int(a1)), (int(b0), int(b1)))
                           for (a0, a1), (b0, b1) in (ring_links or [])]
        self.node_tags = {}           # node id -> set of BoundaryTag
        self.motion = np.full(len(self.coords), MotionClass.FREE.value, dtype=np.uint8)
        self.locked_direction = np.zeros((len(self.coords), 2))
        self.ring_index = np.full(len(self.elements), -1, dtype=np.int32)
        self.ref_area = geometry.signed_area(self.coords[self.elements]).copy()
        # structured-grid provenance, set by the builders; used by ring shifts
        self.grid_shape = None        # (n_rows, n_cols) of quad cells
        self._edge_cache = None       # connectivity-derived; reset when elements change

    # -- basic queries ----------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.coords)

    @property
    def n_elements(self):
        return len(self.elements)

    def node(self, i):
        return Node(
            id=int(i),
            x=self.coords[i],
            tags=set(self.node_tags.get(int(i), ())),
            motion_class=MotionClass(self.motion[i]),
            locked_direction=(self.locked_direction[i].copy()
                              if self.motion[i] == MotionClass.AXIS_CONSTRAINED.value
                              else None),
        )

    def element(self, e):
        ring = int(self.ring_index[e])
        return Element(
            id=int(e),
            node_ids=tuple(int(v) for v in self.elements[e]),
            phantom_member=bool(self.phantom[e]),
            ring_index=None if ring < 0 else ring,
        )

    def element_coords(self, config=None):
        """(n_elements, 3, 2) vertex coordinates; ``config`` overrides coords."""
        coords = self.coords if config is None else config
        return coords[self.elements]

    def domain_diameter(self):
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def copy(self):
        m = Mesh(self.coords.copy(), self.elements.copy(),
                 [(a, b, t) for a, b, t in self.boundary_edges],
                 self.phantom.copy(),
                 [(e0, e1) for e0, e1 in self.ring_links])
        m.node_tags = {k: set(v) for k, v in self.node_tags.items()}
        m.motion = self.motion.copy()
        m.locked_direction = self.locked_direction.copy()
        m.ring_index = self.ring_index.copy()
        m.ref_area = self.ref_area.copy()
        m.grid_shape = self.grid_shape
        m._edge_cache = self._edge_cache  # connectivity is copied verbatim
        return m

    # -- tag helpers ------------------------------------------------------

    def add_node_tag(self, node, tag):
        self.node_tags.setdefault(int(node), set()).add(BoundaryTag(tag))

    def remove_node_tag(self, node, tag):
        tags = self.node_tags.get(int(node))
        if tags:
            tags.discard(BoundaryTag(tag))
            if not tags:
                del self.node_tags[int(node)]

    def nodes_with_tag(self, tag):
        tag = BoundaryTag(tag)
        return sorted(n for n, tags in self.node_tags.items() if tag in tags)

    def edges_with_tag(self, tag):
        tag = BoundaryTag(tag)
        return [(a, b) for a, b, t in self.boundary_edges if t == tag]

    def set_motion_class(self, node, motion_class, direction=None):
        self.motion[int(node)] = MotionClass(motion_class).value
        if MotionClass(motion_class) is MotionClass.AXIS_CONSTRAINED:
            if direction is None:
                raise MeshError("axis constraint needs a direction")
            d = np.asarray(direction, dtype=float)
            self.locked_direction[int(node)] = d / np.linalg.norm(d)

    # -- topology ---------------------------------------------------------

    def edge_elements(self):
        """Map sorted edge (i, j) -> list of adjacent element ids (cached)."""
        if self._edge_cache is None:
            adj = {}
            for e, (a, b, c) in enumerate(self.elements):
                for u, v in ((a, b), (b, c), (c, a)):
                    key = (int(u), int(v)) if u < v else (int(v), int(u))
                    adj.setdefault(key, []).append(e)
            self._edge_cache = adj
        return self._edge_cache

    def exterior_edges(self):
        """Sorted-edge set of the topological boundary (one adjacent element)."""
        return {edge for edge, els in self.edge_elements().items() if len(els) == 1}


# -- construction ---------------------------------------------------------


def _tag_column(mesh, nodes, tag):
    for n in nodes:
        mesh.add_node_tag(n, tag)


def build_channel_mesh(length, height, nx, ny, phantom_layers):
    """Structured triangulated channel with phantom strips above and below.

    The fluid region is [0, length] x [0, height], nx-by-ny quads split into
    counterclockwise triangles.  ``phantom_layers`` extra element rows are
    attached along the bottom and top; the shared lines y = 0 and y = height
    are tagged gamma_PF (and wall), the strip outer boundary phantom_exterior.
    The node column nearest x = length/2 is tagged gamma_T and marked
    prescribed; inflow/outflow columns are fixed for the mesh update.
    """
    if length <= 0 or height <= 0:
        raise MeshError("channel dimensions must be positive")
    if nx < 2 or ny < 2:
        raise MeshError("need nx, ny >= 2")
    if phantom_layers < 1:
        raise MeshError("need phantom_layers >= 1")

    dx = length / nx
    dy = height / ny
    p = phantom_layers
    n_rows = ny + 2 * p               # element rows
    n_cols = nx
    ys = (np.arange(n_rows + 1) - p) * dy
    xs = np.arange(n_cols + 1) * dx

    xx, yy = np.meshgrid(xs, ys)      # row-major: node (r, c) -> r*(nx+1)+c
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(r, c):
        return r * (n_cols + 1) + c

    elements = []
    phantom = []
    for r in range(n_rows):
        is_phantom = r < p or r >= p + ny
        for c in range(n_cols):
            bl, br = nid(r, c), nid(r, c + 1)
            tl, tr = nid(r + 1, c), nid(r + 1, c + 1)
            elements.append((bl, br, tr))
            elements.append((bl, tr, tl))
            phantom.extend([is_phantom, is_phantom])
    elements = np.asarray(elements, dtype=np.int32)

    boundary_edges = []
    # fluid inlet/outlet columns
    for r in range(p, p + ny):
        boundary_edges.append((nid(r, 0), nid(r + 1, 0), BoundaryTag.INFLOW))
        boundary_edges.append((nid(r, n_cols), nid(r + 1, n_cols), BoundaryTag.OUTFLOW))
    # gamma_PF / wall lines at y = 0 and y = height (interior to the extended mesh)
    for c in range(n_cols):
        for r_line in (p, p + ny):
            boundary_edges.append((nid(r_line, c), nid(r_line, c + 1), BoundaryTag.GAMMA_PF))
            boundary_edges.append((nid(r_line, c), nid(r_line, c + 1), BoundaryTag.WALL))
    # phantom exterior: strip outer rows and strip end columns
    for c in range(n_cols):
        boundary_edges.append((nid(0, c), nid(0, c + 1), BoundaryTag.PHANTOM_EXTERIOR))
        boundary_edges.append((nid(n_rows, c), nid(n_rows, c + 1), BoundaryTag.PHANTOM_EXTERIOR))
    for r in list(range(0, p)) + list(range(p + ny, n_rows)):
        boundary_edges.append((nid(r, 0), nid(r + 1, 0), BoundaryTag.PHANTOM_EXTERIOR))
        boundary_edges.append((nid(r, n_cols), nid(r + 1, n_cols), BoundaryTag.PHANTOM_EXTERIOR))

    ring_links = [((nid(n_rows, c), nid(n_rows, c + 1)), (nid(0, c), nid(0, c + 1)))
                  for c in range(n_cols)]

    mesh = Mesh(coords, elements, boundary_edges, phantom, ring_links)
    mesh.grid_shape = (n_rows, n_cols)
    mesh.ring_index[:] = np.repeat(np.arange(n_rows, dtype=np.int32), 2 * n_cols)

    # node tags and motion classes
    c_gamma = int(np.argmin(np.abs(xs - length / 2.0)))
    for r in range(n_rows + 1):
        mesh.add_node_tag(nid(r, c_gamma), BoundaryTag.GAMMA_T)
        mesh.set_motion_class(nid(r, c_gamma), MotionClass.PRESCRIBED)
    for r in range(p, p + ny + 1):
        for c, tag in ((0, BoundaryTag.INFLOW), (n_cols, BoundaryTag.OUTFLOW)):
            mesh.add_node_tag(nid(r, c), tag)
            mesh.set_motion_class(nid(r, c), MotionClass.FIXED)
    for c in range(n_cols + 1):
        for r_line in (p, p + ny):
            mesh.add_node_tag(nid(r_line, c), BoundaryTag.GAMMA_PF)
            mesh.add_node_tag(nid(r_line, c), BoundaryTag.WALL)
        for r_ext in (0, n_rows):
            mesh.add_node_tag(nid(r_ext, c), BoundaryTag.PHANTOM_EXTERIOR)
    return mesh


def build_container_mesh(width, height, nx, ny, disk_center, disk_radius,
                         phantom_bottom, phantom_top, smooth_iters=4):
    """Fluid container with a circular hole and phantom strips top/bottom.

    Starts from a structured grid, carves out elements whose centroid falls
    inside the disk, snaps the resulting hole boundary onto the circle and
    relaxes nearby interior nodes.  Side walls are axis-constrained to
    vertical motion; hole nodes are tagged moving_body and prescribed.
    """
    if width <= 0 or height <= 0 or disk_radius <= 0:
        raise MeshError("container dimensions must be positive")
    cx, cy = disk_center
    if min(cy, height - cy) < 3.0 * disk_radius or min(cx, width - cx) < 3.0 * disk_radius:
        raise MeshError("disk too close to the container boundary")
    dx = width / nx
    dy = height / ny
    pb, pt = phantom_bottom, phantom_top
    n_rows = ny + pb + pt
    n_cols = nx
    ys = (np.arange(n_rows + 1) - pb) * dy
    xs = np.arange(n_cols + 1) * dx
    xx, yy = np.meshgrid(xs, ys)
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(r, c):
        return r * (n_cols + 1) + c

    elements = []
    phantom = []
    for r in range(n_rows):
        is_phantom = r < pb or r >= pb + ny
        for c in range(n_cols):
            bl, br = nid(r, c), nid(r, c + 1)
            tl, tr = nid(r + 1, c), nid(r + 1, c + 1)
            for tri in ((bl, br, tr), (bl, tr, tl)):
                cen = coords[list(tri)].mean(axis=0)
                if (cen[0] - cx) ** 2 + (cen[1] - cy) ** 2 < disk_radius ** 2:
                    continue  # carved out
                elements.append(tri)
                phantom.append(is_phantom)
    elements = np.asarray(elements, dtype=np.int32)

    # drop orphan nodes, remap
    used = np.unique(elements)
    remap = -np.ones(len(coords), dtype=np.int64)
    remap[used] = np.arange(len(used))
    coords = coords[used]
    elements = remap[elements].astype(np.int32)

    def rid(r, c):
        return remap[nid(r, c)]

    boundary_edges = []
    for c in range(n_cols):
        for r_line, tag in ((pb, BoundaryTag.GAMMA_PF), (pb + ny, BoundaryTag.GAMMA_PF)):
            boundary_edges.append((rid(r_line, c), rid(r_line, c + 1), tag))
        boundary_edges.append((rid(pb, c), rid(pb, c + 1), BoundaryTag.WALL))
        boundary_edges.append((rid(0, c), rid(0, c + 1), BoundaryTag.PHANTOM_EXTERIOR))
        boundary_edges.append((rid(n_rows, c), rid(n_rows, c + 1), BoundaryTag.PHANTOM_EXTERIOR))
    for r in range(n_rows):
        boundary_edges.append((rid(r, 0), rid(r + 1, 0), BoundaryTag.WALL))
        boundary_edges.append((rid(r, n_cols), rid(r + 1, n_cols), BoundaryTag.WALL))

    mesh = Mesh(coords, elements, boundary_edges, phantom)
    mesh.grid_shape = (n_rows, n_cols)

    # hole boundary: exterior edges not on the outer rectangle
    eps = 1e-9 * max(width, height)
    outer = (np.abs(mesh.coords[:, 0]) < eps) | (np.abs(mesh.coords[:, 0] - width) < eps) \
        | (np.abs(mesh.coords[:, 1] - ys[0]) < eps) | (np.abs(mesh.coords[:, 1] - ys[-1]) < eps)
    hole_nodes = set()
    for (a, b), els in mesh.edge_elements().items():
        if len(els) == 1 and not (outer[a] or outer[b]):
            hole_nodes.update((a, b))
            mesh.boundary_edges.append((a, b, BoundaryTag.MOVING_BODY))
    if not hole_nodes:
        raise MeshError("disk carve produced no hole; refine the grid")

    # snap hole nodes onto the circle
    for n in hole_nodes:
        v = mesh.coords[n] - (cx, cy)
        r = np.linalg.norm(v)
        if r == 0:
            raise MeshError("hole node coincides with disk center")
        mesh.coords[n] = (cx, cy) + v * (disk_radius / r)
        mesh.add_node_tag(n, BoundaryTag.MOVING_BODY)
        mesh.set_motion_class(n, MotionClass.PRESCRIBED)

    # relax interior nodes near the hole (simple Laplacian smoothing)
    near = np.linalg.norm(mesh.coords - (cx, cy), axis=1) < 2.5 * disk_radius
    adj = {}
    for a, b, c in mesh.elements:
        for u, v in ((a, b), (b, c), (c, a)):
            adj.setdefault(int(u), set()).add(int(v))
            adj.setdefault(int(v), set()).add(int(u))
    movable = [n for n in range(mesh.n_nodes)
               if near[n] and n not in hole_nodes and not outer[n]]
    for _ in range(smooth_iters):
        for n in movable:
            nbrs = list(adj[n])
            mesh.coords[n] = mesh.coords[nbrs].mean(axis=0)

    # motion classes: side walls slide vertically, exteriors free
    for n in range(mesh.n_nodes):
        x = mesh.coords[n]
        if n in hole_nodes:
            continue
        if abs(x[0]) < eps or abs(x[0] - width) < eps:
            mesh.add_node_tag(n, BoundaryTag.WALL)
            mesh.set_motion_class(n, MotionClass.AXIS_CONSTRAINED, direction=(0.0, 1.0))
    for c in range(n_cols + 1):
        for r_line in (pb, pb + ny):
            n = int(rid(r_line, c))
            if n >= 0:
                mesh.add_node_tag(n, BoundaryTag.GAMMA_PF)
    mesh.ref_area = geometry.signed_area(mesh.coords[mesh.elements]).copy()
    rep = validate(mesh)
    if not rep.ok:
        raise MeshError(f"container mesh invalid: {rep.summary()}")
    return mesh


# -- diagnostics ----------------------------------------------------------


def validate(mesh):
    """Report orientation, duplicate-node, manifold, ring-link and tag defects.

    Report-only: an empty report means all mesh invariants hold.
    """
    report = ValidationReport()
    areas = geometry.signed_area(mesh.element_coords())
    report.orientation_violations = [int(e) for e in np.flatnonzero(areas <= 0.0)]

    rounded = np.round(mesh.coords, 12)
    _, first, counts = np.unique(rounded, axis=0, return_index=True, return_counts=True)
    for idx in first[counts > 1]:
        dup = np.flatnonzero((rounded == rounded[idx]).all(axis=1))
        report.duplicate_nodes.append(tuple(int(d) for d in dup))

    adj = mesh.edge_elements()
    report.nonmanifold_edges = [edge for edge, els in adj.items() if len(els) > 2]

    exterior = {edge for edge, els in adj.items() if len(els) == 1}
    for (a, b) in [e for link in mesh.ring_links for e in link]:
        key = (a, b) if a < b else (b, a)
        if key not in exterior:
            report.dangling_ring_links.append((a, b))

    for n, tags in mesh.node_tags.items():
        if BoundaryTag.INTERFACE in tags and mesh.motion[n] == MotionClass.FIXED.value:
            report.tag_conflicts.append(int(n))
    return report


def element_metrics(mesh, config=None):
    """Per-element area, longest edge h and radius-ratio quality.

    Degenerate elements report quality 0 rather than raising.
    """
    tris = mesh.element_coords(config)
    return {
        "area": geometry.signed_area(tris),
        "h": geometry.longest_edge(tris),
        "quality": geometry.triangle_quality(tris),
    }


def closest_point_on_polyline(p, tag, mesh):
    """Closest point from p to the union of edges tagged ``tag``.

    Returns (point, segment id, parameter); the segment id indexes the
    tag-filtered edge list in boundary_edges order, and distance ties
    resolve to the lowest id.
    """
    edges = mesh.edges_with_tag(tag)
    if not edges:
        raise MeshError(f"no boundary edges tagged {BoundaryTag(tag).value}")
    seg_a = mesh.coords[[a for a, _ in edges]]
    seg_b = mesh.coords[[b for _, b in edges]]
    foot, idx, t, _ = geometry.project_points_to_segments(np.asarray(p, dtype=float), seg_a, seg_b)
    return foot[0], int(idx[0]), float(t[0])
