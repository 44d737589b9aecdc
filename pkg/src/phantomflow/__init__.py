"""phantomflow: 2D incompressible-flow space-time FEM with phantom-domain
mesh updating.

The package couples three pieces: an elastic mesh update that deforms the
mesh like a fictitious solid, a phantom-domain layer whose elements enter
and leave the fluid region as the mesh slides across the prescribed fluid
boundary, and a stabilized space-time solver for the flow itself.  See
README.md for the case drivers and the command-line interface.
"""

from .elastic import (DisplacementField, ElasticityParams, MeshDirichletSet,
                      apply_displacement, assemble_elasticity, solve_mesh_displacement)
from .errors import (AssemblyError, ConfigError, MeshError, SolverError,
                     StepRejectedError)
from .flow import (FluidProperties, FlowDirichletSet, NewtonConfig, SpaceTimeSlab,
                   StabilizationParams, assemble_slab, compute_tau, newton_solve_slab)
from .linalg import SolverConfig, SparseSystem, apply_constraints, solve
from .mesh import (BoundaryTag, Element, Mesh, MotionClass, Node,
                   build_channel_mesh, build_container_mesh,
                   closest_point_on_polyline, element_metrics, validate)
from .phantom import (ActivityPattern, FluidRegionSpec, InterfaceSet,
                      ProjectionRecord, apply_ring_shift, build_projection_records,
                      classify_activity, conform_interface, extract_interface,
                      pd_dmum_step)
from .cases import (CaseConfig, ProbeSeries, analytic_poiseuille, convergence_study,
                    gamma_T_motion, parse_config, run_case, run_moving_disk_case,
                    sample_probe)
from .state import FlowState

__version__ = "0.1.0"
