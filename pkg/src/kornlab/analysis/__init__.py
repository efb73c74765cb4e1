"""Norms, quotients, ellipticity checks, discrete coercivity and the Cosserat energy."""

from kornlab.analysis.cosserat import cosserat_energy, four_a_identity
from kornlab.analysis.ellipticity import (
    complex_ellipticity_check,
    complex_ellipticity_lower_bound,
    index_certificate,
    lh_check,
)
from kornlab.analysis.fem import Mesh, assemble_forms, extend_by_zero, quadrature_energy, read_coo, write_coo
from kornlab.analysis.norms import (
    NormConvention,
    QuotientReport,
    fit_power_law,
    korn_quotient,
    lq_norm,
    piecewise_constant_lq,
    witness_quotient,
)
from kornlab.analysis.spectrum import SpectrumResult, dense_min_eig, min_garding_eig, rayleigh_quotient

__all__ = [
    "Mesh",
    "NormConvention",
    "QuotientReport",
    "SpectrumResult",
    "assemble_forms",
    "complex_ellipticity_check",
    "complex_ellipticity_lower_bound",
    "cosserat_energy",
    "dense_min_eig",
    "extend_by_zero",
    "fit_power_law",
    "four_a_identity",
    "index_certificate",
    "korn_quotient",
    "lh_check",
    "lq_norm",
    "min_garding_eig",
    "piecewise_constant_lq",
    "quadrature_energy",
    "rayleigh_quotient",
    "read_coo",
    "witness_quotient",
    "write_coo",
]
