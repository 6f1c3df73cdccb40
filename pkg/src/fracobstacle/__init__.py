"""Numerical lab for the fractional thin obstacle problem in extension form.

Main entry points:

    WeightedGrid, ObstacleProblem, solve      discretization and solver
    extend, corrected_obstacle                a-harmonic polynomial extension
    LocalField, frequency_profile             Almgren-type frequency machinery
    extract_geometry, beta_number             free boundary geometry
    blowup_sequence                           rescalings and blow-up limits
"""

from .errors import (ConfigurationError, DegenerateError, FracObstacleError,
                     IterationLimitError, ResolutionError)
from .polynomial import Polynomial
from .poly_extension import corrected_obstacle, extend, extend_homogeneous, taylor_poly
from .grid import WeightedGrid, QuadratureSpec
from .obstacles import (AffineObstacle, CapObstacle, GaussianObstacle, PolynomialObstacle,
                        builtin_obstacles, obstacle_from_config)
from .solver import ObstacleProblem, Solution, SolverOptions, solve
from .frequency import (AnalysisConfig, CorrectedFieldCache, LocalField, frequency_profile,
                        frequency_record)
from .geometry import PointMeasure, beta_number, extract_geometry, minkowski_tube
from .references import reference_library
from .blowup import blowup_sequence, rescale

__version__ = "0.1.0"
