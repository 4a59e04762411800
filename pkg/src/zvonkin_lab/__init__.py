"""Numerical laboratory for SDEs with singular drifts and Sobolev diffusions.

Modules
-------
grid          periodic space-time lattices, mollifiers, cutoffs, maximal function
norms         localized Bessel-potential space-time norms
pde           parabolic solvers, duality and maximal-regularity measurements
zvonkin       Zvonkin's transformation and conjugacy checks
coefficients  coefficient families A-E
sde           Euler-Maruyama ensembles and Monte-Carlo estimators
cli           scenario runner and command line
"""
from .grid import Grid, GridFn, Mollifier, build_grid, cutoff, local_maximal, mollify, sample
from .norms import NormParams, localized_norm
from .coefficients import family, catalog
from .pde import ParabolicProblem, solve_backward, solve_forward
from .sde import simulate
from .zvonkin import build_transform

__version__ = "0.1.0"
