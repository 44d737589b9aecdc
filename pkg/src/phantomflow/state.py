"""Flow state container shared by the mesh-update and flow-solver modules."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FlowState:
    """Nodal velocity/pressure on the active node set of one space-time slab.

    ``u_lower``/``u_upper`` are the velocities at the slab's two time levels,
    ``p`` the per-slab nodal pressure, and ``donor`` the previous slab's
    upper-level velocity (the time-discontinuous limit from below) used by
    the jump term.  All arrays are indexed by rows of ``node_ids``.
    """

    node_ids: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    p: np.ndarray
    donor: np.ndarray
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.u_lower = np.asarray(self.u_lower, dtype=float)
        self.u_upper = np.asarray(self.u_upper, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.donor = np.asarray(self.donor, dtype=float)
        n = len(self.node_ids)
        for name in ("u_lower", "u_upper", "donor"):
            if getattr(self, name).shape != (n, 2):
                raise ValueError(f"{name} must have shape ({n}, 2)")
        if self.p.shape != (n,):
            raise ValueError(f"p must have shape ({n},)")
        if not self.index:
            self.index = {int(nid): i for i, nid in enumerate(self.node_ids)}

    @classmethod
    def from_velocity(cls, node_ids, velocity, pressure=None):
        node_ids = np.asarray(node_ids, dtype=np.int64)
        u = np.asarray(velocity, dtype=float)
        p = np.zeros(len(node_ids)) if pressure is None else np.asarray(pressure, dtype=float)
        return cls(node_ids, u.copy(), u.copy(), p, u.copy())

    def has_node(self, node):
        return int(node) in self.index

    def upper_velocity(self, node):
        return self.u_upper[self.index[int(node)]]

    def pressure(self, node):
        return self.p[self.index[int(node)]]

    def is_finite(self):
        return (np.all(np.isfinite(self.u_lower)) and np.all(np.isfinite(self.u_upper))
                and np.all(np.isfinite(self.p)))
