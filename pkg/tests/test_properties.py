import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from kornlab.analysis.ellipticity import (
    complex_ellipticity_check,
    complex_ellipticity_lower_bound,
    index_certificate,
    lh_check,
    sym_rank_one,
)
from kornlab.analysis.norms import NormConvention
from kornlab.geometry import RESIDUAL, Box, OrientedCube, axis_grid_cover, cubes_overlap, rotation_margin
from kornlab.rotational import frame_to_rotation
from kornlab.unimodular import build_P_point

J = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
mat3 = arrays(np.float64, (3, 3), elements=st.floats(-2.0, 2.0, allow_nan=False))
seeds = st.integers(0, 2**32 - 1)


def unit(v):
    return v / np.linalg.norm(v)


@given(vec3, vec3, st.floats(0.1, 10.0))
def test_unimodular_coefficient_maps_gradient_to_skew(a, b, s):
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3)
    g1, g2 = unit(a), unit(b)
    assume(np.linalg.norm(np.cross(g1, g2)) > 1e-3)
    P = build_P_point(g1, g2)
    assert abs(np.linalg.det(P) - 1.0) < 1e-12 * max(1.0, np.linalg.norm(P) ** 3)
    Du = np.stack([s * g1, s * g2, np.zeros(3)])
    assert np.max(np.abs(Du @ P - s * J)) < 1e-12 * s * max(1.0, np.linalg.norm(P))


@given(seeds, st.floats(0.1, 10.0))
def test_rotation_coefficient_maps_frame_to_skew(seed, s):
    Q = Rotation.random(random_state=seed).as_matrix()
    P = frame_to_rotation(Q[:, 0], Q[:, 1])
    assert np.max(np.abs(P.T @ P - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(P) - 1.0) < 1e-12
    Du = np.stack([s * Q[:, 0], s * Q[:, 1], np.zeros(3)])
    assert np.max(np.abs(Du @ P - s * J)) < 1e-12 * s


@given(seeds)
def test_margin_matches_enumeration(seed):
    R = Rotation.random(random_state=seed).as_matrix()
    E = np.eye(3)
    brute = min(np.linalg.norm(R @ E[i] - t * E[j]) for i in range(3) for j in range(3) for t in (1, -1))
    assert abs(rotation_margin(R) - brute) < 1e-7


@given(arrays(np.float64, (50, 3), elements=st.floats(0.0, 1.0)), st.sampled_from([1.0, 0.5, 0.25, 0.2]))
def test_grid_location_is_a_partition(X, edge):
    cov = axis_grid_cover(Box.unit(), edge)
    level, ijk = cov.locate(X)
    assert np.all(level != RESIDUAL)
    lo = ijk * cov.edge(0)
    assert np.all((X >= lo - 1e-12) & (X <= lo + cov.edge(0) + 1e-12))


@given(vec3, vec3, seeds, st.floats(0.05, 0.5), st.floats(0.05, 0.5))
def test_overlap_is_symmetric(c1, c2, seed, h1, h2):
    R = Rotation.random(random_state=seed).as_matrix()
    a, b = OrientedCube(c1, h1, np.eye(3)), OrientedCube(c2, h2, R)
    assert cubes_overlap(a, b) == cubes_overlap(b, a)


@settings(deadline=None, max_examples=40)
@given(mat3, seeds)
def test_rank_one_ratio_never_below_one(P, seed):
    assume(abs(np.linalg.det(P)) > 1e-3)
    assert lh_check(P, samples=500, rng=seed) >= 1 - 1e-9


@settings(deadline=None, max_examples=25)
@given(mat3, seeds)
def test_complex_minimum_above_certified_bound(P, seed):
    assume(abs(np.linalg.det(P)) > 1e-3)
    val = complex_ellipticity_check(P, samples=500, rng=seed, refine=2)
    assert val >= complex_ellipticity_lower_bound(P) - 1e-9
    assert val > 0


@given(arrays(np.complex128, 3, elements=st.complex_numbers(max_magnitude=1.0, allow_nan=False)),
       arrays(np.complex128, 3, elements=st.complex_numbers(max_magnitude=1.0, allow_nan=False)))
def test_symmetric_rank_one_product_of_nonzero_vectors_is_nonzero(a, b):
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3)
    cert = index_certificate(a, b)[0]
    norm = np.linalg.norm(sym_rank_one(a[None], b[None])[0])
    assert cert > 0
    assert cert <= norm * (1 + 1e-12) + 1e-300


@given(arrays(np.float64, (20, 3, 3), elements=st.floats(-5, 5)))
def test_row_convention_is_frobenius_at_two(F):
    assert np.allclose(NormConvention(2.0).pointwise(F), np.sum(F * F, axis=(1, 2)), rtol=1e-12, atol=1e-12)
