"""Mesh import/export: plain-text format and legacy VTK snapshots.

Plain-text layout (whitespace separated, '#' comments):

    NODES <n>
    <id> <x> <y> <motion> <locked_x> <locked_y> <tag,tag,...|->
    ELEMENTS <m>
    <n0> <n1> <n2> <phantom 0|1> <ring_index|-1>
    BOUNDARY_EDGES <k>
    <n0> <n1> <tag>
    RING_LINKS <k>
    <a0> <a1> <b0> <b1>
    GRID <rows> <cols>          (optional structured provenance)

VTK output is legacy ASCII UNSTRUCTURED_GRID with triangles, one optional
integer cell field and any number of point scalar/vector fields.
"""

import numpy as np

from .errors import MeshError
from .mesh import BoundaryTag, Mesh, MotionClass


def write_mesh_text(mesh, path):
    with open(path, "w") as f:
        f.write(f"NODES {mesh.n_nodes}\n")
        for i in range(mesh.n_nodes):
            tags = mesh.node_tags.get(i, ())
            tag_str = ",".join(sorted(t.value for t in tags)) if tags else "-"
            d = mesh.locked_direction[i]
            f.write(f"{i} {mesh.coords[i, 0]!r} {mesh.coords[i, 1]!r} "
                    f"{MotionClass(mesh.motion[i]).name} {d[0]!r} {d[1]!r} {tag_str}\n")
        f.write(f"ELEMENTS {mesh.n_elements}\n")
        for e in range(mesh.n_elements):
            a, b, c = mesh.elements[e]
            f.write(f"{a} {b} {c} {int(mesh.phantom[e])} {int(mesh.ring_index[e])}\n")
        f.write(f"BOUNDARY_EDGES {len(mesh.boundary_edges)}\n")
        for a, b, t in mesh.boundary_edges:
            f.write(f"{a} {b} {t.value}\n")
        f.write(f"RING_LINKS {len(mesh.ring_links)}\n")
        for (a0, a1), (b0, b1) in mesh.ring_links:
            f.write(f"{a0} {a1} {b0} {b1}\n")
        if mesh.grid_shape is not None:
            f.write(f"GRID {mesh.grid_shape[0]} {mesh.grid_shape[1]}\n")


def read_mesh_text(path):
    with open(path) as f:
        tokens = [ln.split("#", 1)[0].split() for ln in f]
    lines = [t for t in tokens if t]
    pos = 0

    def expect(keyword):
        nonlocal pos
        if pos >= len(lines) or lines[pos][0] != keyword:
            raise MeshError(f"expected {keyword!r} section in {path}")
        count = int(lines[pos][1])
        pos += 1
        return count

    n = expect("NODES")
    coords = np.zeros((n, 2))
    motion = []
    locked = np.zeros((n, 2))
    tags = {}
    for _ in range(n):
        t = lines[pos]
        pos += 1
        i = int(t[0])
        coords[i] = (float(t[1]), float(t[2]))
        motion.append((i, MotionClass[t[3]]))
        locked[i] = (float(t[4]), float(t[5]))
        if t[6] != "-":
            tags[i] = {BoundaryTag(name) for name in t[6].split(",")}
    m = expect("ELEMENTS")
    elements = np.zeros((m, 3), dtype=np.int32)
    phantom = np.zeros(m, dtype=bool)
    ring_index = np.full(m, -1, dtype=np.int32)
    for e in range(m):
        t = lines[pos]
        pos += 1
        elements[e] = (int(t[0]), int(t[1]), int(t[2]))
        phantom[e] = bool(int(t[3]))
        ring_index[e] = int(t[4])
    k = expect("BOUNDARY_EDGES")
    boundary_edges = []
    for _ in range(k):
        t = lines[pos]
        pos += 1
        boundary_edges.append((int(t[0]), int(t[1]), BoundaryTag(t[2])))
    k = expect("RING_LINKS")
    ring_links = []
    for _ in range(k):
        t = lines[pos]
        pos += 1
        ring_links.append(((int(t[0]), int(t[1])), (int(t[2]), int(t[3]))))

    mesh = Mesh(coords, elements, boundary_edges, phantom, ring_links)
    mesh.ring_index = ring_index
    mesh.locked_direction = locked
    for i, mc in motion:
        mesh.motion[i] = mc.value
    mesh.node_tags = tags
    if pos < len(lines) and lines[pos][0] == "GRID":
        mesh.grid_shape = (int(lines[pos][1]), int(lines[pos][2]))
    return mesh


def write_vtk(path, mesh, point_data=None, cell_data=None, title="phantomflow snapshot"):
    """Legacy ASCII VTK unstructured grid with point/cell fields.

    ``point_data`` maps name -> (n, 2) vectors or (n,) scalars; ``cell_data``
    maps name -> (m,) integer or float scalars.
    """
    nn = mesh.n_nodes
    ne = mesh.n_elements
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(title + "\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {nn} double\n")
        for x, y in mesh.coords:
            f.write(f"{x!r} {y!r} 0.0\n")
        f.write(f"CELLS {ne} {4 * ne}\n")
        for a, b, c in mesh.elements:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {ne}\n")
        f.write("\n".join(["5"] * ne) + "\n")
        if cell_data:
            f.write(f"CELL_DATA {ne}\n")
            for name, values in cell_data.items():
                values = np.asarray(values)
                kind = "int" if np.issubdtype(values.dtype, np.integer) else "double"
                f.write(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n")
                for v in values:
                    f.write(f"{v}\n" if kind == "int" else f"{float(v)!r}\n")
        if point_data:
            f.write(f"POINT_DATA {nn}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.ndim == 2:
                    f.write(f"VECTORS {name} double\n")
                    for vx, vy in values:
                        f.write(f"{vx!r} {vy!r} 0.0\n")
                else:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in values:
                        f.write(f"{v!r}\n")
