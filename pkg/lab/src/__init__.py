"""
CylinderLab
============
Numerical laboratory for convex variational energies on long cylinders
(-ell, ell) x omega2: discretisation, minimisation, and empirical checks of
the large-ell behaviour of the minimisers.
"""

__version__ = "1.0.0"
