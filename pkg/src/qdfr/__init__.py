"""Simulation and verification of fluctuation relations under discrete quantum feedback.

Modules
-------
mat       dense complex linear algebra and a Jacobi Hermitian eigensolver
proto     feedback protocols, Gibbs states, time reversal and config JSON
oracle    exact two-point-measurement atoms and per-atom relation checks
circuits  density-matrix simulation of the interferometric circuits
spectral  grid planning, sampling and Lorentzian Fourier reconstruction
verify    ratio points, line and hyperplane fits, consistency verdict
cli       batch pipeline and command line
"""

from .errors import NumericalError, QDFRError, ValidationError

__version__ = "0.1.0"
__all__ = ["QDFRError", "ValidationError", "NumericalError", "__version__"]
