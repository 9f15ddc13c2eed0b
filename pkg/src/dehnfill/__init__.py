"""Explicit Einstein metrics on Dehn-filled cusp ends, and checks on them.

Submodules
----------
lattice     flat tori, filling curves, basis completion, the shrinking family
metrics     cusp, toral black hole and glued profile metrics
curvature   curvature by closed formulas and by finite differences
modes       torus-invariant infinitesimal deformations on the cusp
bieberbach  flat-manifold ends and admissible filling curves
topo        volume accounting and four-dimensional Gauss-Bonnet
cli         the ``dehnfill`` experiment driver
"""

__version__ = "0.1.0"

from . import bieberbach, curvature, lattice, metrics, modes, topo  # noqa: E402,F401
