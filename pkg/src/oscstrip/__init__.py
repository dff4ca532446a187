"""Elliptic problems on strips with a fast oscillating lower boundary.

Modules: ``geometry`` (profiles and meshes), ``forms`` (coefficients and
assembly), ``solve`` (linear solves and H1 errors), ``corrector`` (periodic
cell problem), ``oracle`` (independent reference solutions) and ``harness``
(convergence studies and reports).
"""

__version__ = "0.1.0"
