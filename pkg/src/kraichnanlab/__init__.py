"""Numerical laboratory for Kraichnan transport noise on the torus.

Spectral solvers for stochastic passive scalars and vector fields, empirical
Young/occupation measures, the limit b-space Fokker-Planck equation and its
Lagrangian Monte Carlo counterpart, plus the acceptance experiments tying the
finite-shell dynamics to the scaling-limit identities.
"""

__version__ = "0.1.0"
