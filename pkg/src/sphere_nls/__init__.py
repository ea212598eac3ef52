"""Numerical toolkit for the Wick-ordered cubic Schrödinger equation on the 2-sphere.

Modules
-------
harmonics   real spherical harmonics, quadrature grids and transforms
fields      spectral fields, projections, norms and snapshots
stochastic  reproducible Gaussian random fields and ensembles
nonlinear   cubic nonlinearities and their pairing decomposition
dynamics    time integrators, conservation laws and Duhamel integrals
rao         random averaging operators, colored fields, remainders, ladder
rnorms      Fourier-restriction norms and empirical estimate probes
xcli        experiment configuration, orchestration and reports
"""

__version__ = "0.1.0"
