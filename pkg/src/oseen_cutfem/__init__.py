"""Unfitted (CutFEM) finite elements for the Oseen problem on moving domains."""

from .errors import *  # noqa: F401,F403
from .mesh import BackgroundMesh, build_uniform_mesh, face_adjacency, mesh_metrics
from .geometry import MovingDomain, ActiveGeometry, build_geometry, classify, make_domain
from .fespace import ElementPair, DofMap, FEFunction, build_spaces, interpolate
from .forms import Assembler, Penalties

__version__ = "0.1.0"
