"""collapse-lab: numerics for collapsing fibrations over one-dimensional bases.

Subpackages cover, in dependency order: exact threshold combinatorics on
resolution data (``lct``), the local fiber-volume integral and exponent
fitting (``fiber_volume``), singular densities and the generalized
Kahler-Einstein solver on a flat torus (``density``, ``gke``), base-reduced
continuity/parabolic flow families (``flow``), and discrete metric geometry
of the singular limit metrics (``metric``).
"""

__version__ = "0.1.0"

from .errors import (
    CollapseLabError,
    ConvergenceError,
    InvalidInputError,
    LinearSolverError,
    NumericalError,
    SeparationError,
)

__all__ = [
    "CollapseLabError",
    "ConvergenceError",
    "InvalidInputError",
    "LinearSolverError",
    "NumericalError",
    "SeparationError",
    "__version__",
]
