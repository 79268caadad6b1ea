"""Heat flow and diagnostics for surface maps with scalar and two-form couplings."""

from .fields import FieldPack
from .flow import FlowParams, FlowTrace, MapState
from .surface import DiscreteSurface, build_patch, build_sphere, build_torus
from .target import EmbeddedTarget, make_target

__all__ = [
    "DiscreteSurface",
    "EmbeddedTarget",
    "FieldPack",
    "FlowParams",
    "FlowTrace",
    "MapState",
    "build_torus",
    "build_sphere",
    "build_patch",
    "make_target",
]
