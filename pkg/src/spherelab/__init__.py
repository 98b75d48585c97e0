"""spherelab: feature vs. lazy training regimes for regression on the
d-dimensional unit sphere, at desk scale.

Submodules
----------
harmonics       multiplicities, Gegenbauer polynomials, Funk-Hecke spectra
targets         uniform sphere samples and Gaussian random fields
kernels         closed-form NTK/RFK and ridgeless interpolation
feature_solver  L1-minimal atomic measures (LP) and gradient-descent trainers
theory          exponent predictions, replica curves, d=2 predictor analysis
diffeo          max-entropy deformations and relative sensitivity
harness         sweeps, exponent fits, persistence, synthetic diffeo task
"""

from . import diffeo, feature_solver, harmonics, harness, kernels, targets, theory

__version__ = "0.1.0"

__all__ = ["diffeo", "feature_solver", "harmonics", "harness", "kernels", "targets", "theory", "__version__"]
