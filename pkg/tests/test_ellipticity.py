import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from kornlab.analysis.ellipticity import (
    complex_ellipticity_check,
    complex_ellipticity_lower_bound,
    index_certificate,
    lh_check,
    sym_rank_one,
)
from kornlab.exceptions import InvalidSample
from kornlab.geometry import Box
from kornlab.unimodular import Tag, UnimodularCounterexample


def min_eig_by_char_poly(S):
    """Smallest eigenvalue of a symmetric 3x3 matrix from its characteristic polynomial."""
    return float(np.min(np.roots(np.poly(S)).real))


def test_identity_on_coordinate_pair():
    assert lh_check(np.eye(3), pairs=([1.0, 0, 0], [1.0, 0, 0])) == pytest.approx(2.0, abs=1e-15)


def test_random_rotations():
    for seed in range(3):
        P = Rotation.random(random_state=seed).as_matrix()
        assert lh_check(P, samples=10_000, rng=seed) >= 1 - 1e-9


def test_construction_coefficients_with_independent_eigensolve():
    m = UnimodularCounterexample(n=2).fit()
    b = m.evaluate(Box.unit().sample(200, np.random.default_rng(0)))
    Ps = b.P[b.tag == Tag.INTERIOR][:20]
    rng = np.random.default_rng(1)
    for P in Ps:
        lam = min_eig_by_char_poly(P @ P.T)
        xi = rng.standard_normal((2000, 3))
        eta = rng.standard_normal((2000, 3))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        eta /= np.linalg.norm(eta, axis=1, keepdims=True)
        S = sym_rank_one(xi, eta @ P)
        oracle = np.min(np.sum(S * S, axis=(1, 2))) / (0.5 * lam)
        got = lh_check(P, samples=2000, rng=rng)
        assert got >= 1 - 1e-9
        assert got <= oracle + 1e-9
        # the adversarial pair attains the infimum
        assert got == pytest.approx(1.0, abs=1e-9)


def test_zero_vector_is_invalid():
    with pytest.raises(InvalidSample):
        lh_check(np.eye(3), pairs=([0.0, 0, 0], [1.0, 0, 0]))


def test_complex_diagonal_example():
    val = complex_ellipticity_check(np.eye(3), pairs=([1.0, 0, 0], [1j, 0, 0]))
    assert val == pytest.approx(1.0, abs=1e-15)


def test_complex_random_rotation():
    P = Rotation.random(random_state=5).as_matrix()
    val = complex_ellipticity_check(P, samples=10_000, rng=5)
    assert val > 1e-6
    assert val >= complex_ellipticity_lower_bound(P) - 1e-9


def test_complex_zero_vector_is_invalid():
    with pytest.raises(InvalidSample):
        complex_ellipticity_check(np.eye(3), pairs=([0.0, 0, 0], [1.0, 0, 0]))


def test_index_certificate_bounds_norm_from_below():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5000, 3)) + 1j * rng.standard_normal((5000, 3))
    # near-degenerate partners: b almost a multiple of i * a
    b = 1j * a + 1e-6 * (rng.standard_normal((5000, 3)) + 1j * rng.standard_normal((5000, 3)))
    cert = index_certificate(a, b)
    norm = np.linalg.norm(sym_rank_one(a, b), axis=(1, 2))
    assert np.all(cert > 0)
    assert np.all(cert <= norm * (1 + 1e-12))
