"""conekernel: localized initial data for the vacuum Einstein constraints.

Explicit cone- and sector-supported solution operators for divergence-type
equations, weighted-norm diagnostics, and a Picard fixed-point solver on
uniform grids, with a CLI for verification runs and reports.
"""

from .geometry import (
    AngularCutoff,
    ConeSpec,
    PlanarCutoff,
    SectorSpec,
    admissible_delta_range,
)
from .grid import (
    GridSpec,
    ScalarField,
    SymTensorField2,
    VectorField,
    partial,
    read_field,
    restrict_support,
    write_field,
)

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "SymTensorField2",
    "partial",
    "read_field",
    "write_field",
    "restrict_support",
    "ConeSpec",
    "SectorSpec",
    "AngularCutoff",
    "PlanarCutoff",
    "admissible_delta_range",
    "__version__",
]
