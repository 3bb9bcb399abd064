"""Exact maintenance of topology-dependent sparse operators under tet edits."""

from .bench import FrameMetrics, RunConfig, run_benchmark
from .connectivity import make_connectivity, update_connectivity
from .edits import EditBatch, Schedule, make_schedule
from .elasticity import Material, make_elasticity_state, precompute_element_stiffness
from .mesh import SupersetMesh, build_refinement, generate_block_mesh, load_mesh
from .proxy import apply_edits, finalize, make_proxy_state, rebuild_proxy
from .solver import CgConfig, implicit_euler_step, pcg_solve

__version__ = "0.1.0"
