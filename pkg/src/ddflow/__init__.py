"""Penalty Navier-Stokes on hexahedral meshes solved by Newton with additive Schwarz inner solves."""
from .bench import RunConfig, RunReport, compare_orderings, run, scaling_sweep
from .direct_solver import SingularMatrixError, analyze, factorize, solve
from .fem import Assembler, FlowParams, assemble, divergence_norm
from .mesh import Mesh, Tag, boundary_sets, build_channel_mesh
from .ordering import Permutation, min_degree, nested_dissection
from .partition import SubdomainMap, extend_overlap, partition_nodes, prolong, restrict
from .runtime import WorkerPool
from .schwarz import SchwarzConfig, mnas_solve, nas_solve, newton_solve, schwarz_iterate
from .sparse import CsrMatrix, from_triplets, matvec

__version__ = "0.1.0"

__all__ = [
    "Assembler", "CsrMatrix", "FlowParams", "Mesh", "Permutation", "RunConfig", "RunReport",
    "SchwarzConfig", "SingularMatrixError", "SubdomainMap", "Tag", "WorkerPool",
    "analyze", "assemble", "boundary_sets", "build_channel_mesh", "compare_orderings",
    "divergence_norm", "extend_overlap", "factorize", "from_triplets", "matvec",
    "min_degree", "mnas_solve", "nas_solve", "nested_dissection", "newton_solve",
    "partition_nodes", "prolong", "restrict", "run", "scaling_sweep", "schwarz_iterate",
    "solve",
]
