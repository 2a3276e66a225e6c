"""Question-conditioned view sampling, selection, and VQA over simple 3D
models, served to screen-reader users as an accessible editable table."""

from .assets import Aabb, MeshModel, compute_aabb, load_mesh
from .errors import (
    AnswerUnavailable,
    BackendError,
    DegenerateExtent,
    ParseError,
    SweeperError,
    TooManyModels,
    UnsupportedFeature,
)
from .renderer import CameraPose, SampledView, render_view, unique_depth, visible_fractions
from .session import Session, TableRow, ask, create_session, export_session
from .viewgrid import ViewGrid, build_view_grid, sample_radii

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "AnswerUnavailable",
    "BackendError",
    "CameraPose",
    "DegenerateExtent",
    "MeshModel",
    "ParseError",
    "SampledView",
    "Session",
    "SweeperError",
    "TableRow",
    "TooManyModels",
    "UnsupportedFeature",
    "ViewGrid",
    "ask",
    "build_view_grid",
    "compute_aabb",
    "create_session",
    "export_session",
    "load_mesh",
    "render_view",
    "sample_radii",
    "unique_depth",
    "visible_fractions",
]
