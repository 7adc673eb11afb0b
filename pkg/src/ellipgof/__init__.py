"""Smooth goodness-of-fit tests for elliptical distributions with a
diagnostic split of the statistic into direction (U), interaction (I) and
radius (R) parts."""

__version__ = "0.1.0"

from .harmonics import build_harmonics, harmonic_dimension, verify_orthonormality
from .radial import moments, mvn_radial_closed_form, radial_polys
from .families import (decomposition_constants, fit_mle, get_family, sample_null,
                       standardize)
from .decomposition import (Decomposer, build_basis, compute_pi_bar, decompose,
                            global_statistic, scaled_components, select_K)
from .montecarlo import NullTable, build_null_table, mc_pvalue
from .alternatives import AlternativeSpec, sample_alternative
from ._backend import BACKEND

__all__ = [
    "build_harmonics", "harmonic_dimension", "verify_orthonormality",
    "moments", "radial_polys", "mvn_radial_closed_form",
    "get_family", "fit_mle", "standardize", "decomposition_constants", "sample_null",
    "build_basis", "compute_pi_bar", "global_statistic", "scaled_components",
    "Decomposer", "decompose", "select_K",
    "NullTable", "build_null_table", "mc_pvalue",
    "AlternativeSpec", "sample_alternative",
    "BACKEND",
]
