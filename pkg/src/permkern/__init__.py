"""Symmetrizability of kernels of permanental vectors.

Submodules
----------
matrix       dense kernels, determinants, Laplace transforms, I/O
symcheck     cycle condition, diagonal scaling, randomized identity test
kernels      kernel constructors, potentials, perturbations, families
potential    f = Uh and the block-wise construction of h
dichotomy    triple residuals, form detection, asymptotic and limit-point scans
permanental  Gaussian-square sampling and Laplace-transform checks
"""

from .matrix import Kernel, DiagonalScaling, IndexSet, det, lt_determinant, conjugate
from .symcheck import (
    Symmetrizable,
    NotSymmetrizable,
    Indeterminate,
    symmetrizable,
    pit_equivalence,
    check_necessary,
)
from .kernels import (
    exp_toeplitz,
    min_kernel,
    diag_plus_constant,
    random_potential,
    perturb,
    from_descriptor,
)
from .dichotomy import triple_residual, detect_form, asymptotic_scan, limit_point_check
from .potential import construct_h
from .permanental import PermanentalSpec, sample_half, sample_rational, lt_report

__version__ = "0.1.0"

__all__ = [
    "Kernel",
    "DiagonalScaling",
    "IndexSet",
    "det",
    "lt_determinant",
    "conjugate",
    "Symmetrizable",
    "NotSymmetrizable",
    "Indeterminate",
    "symmetrizable",
    "pit_equivalence",
    "check_necessary",
    "exp_toeplitz",
    "min_kernel",
    "diag_plus_constant",
    "random_potential",
    "perturb",
    "from_descriptor",
    "triple_residual",
    "detect_form",
    "asymptotic_scan",
    "limit_point_check",
    "construct_h",
    "PermanentalSpec",
    "sample_half",
    "sample_rational",
    "lt_report",
]
