import numpy as np
import pytest

from kornlab.analysis.experiments import counterexample_spectrum, kappa_monotone_in_lambda, strictly_decreasing
from kornlab.analysis.fem import Mesh, assemble_forms
from kornlab.analysis.spectrum import dense_min_eig, min_garding_eig, pcg, rayleigh_quotient
from kornlab.exceptions import NoConvergence
from kornlab.unimodular import UnimodularCounterexample


@pytest.fixture(scope="module")
def control6():
    return assemble_forms(Mesh(None, 6))


@pytest.fixture(scope="module")
def twisted4():
    model = UnimodularCounterexample(n=1).fit()
    return assemble_forms(Mesh(None, 4), P=lambda X: model.evaluate(X).P)


def test_identical_forms_give_one(control6):
    _, M, K = control6
    res = min_garding_eig(K, M, K, lam=0.0)
    assert res.kappa == pytest.approx(1.0, abs=1e-10)
    assert res.kappa >= 0


@pytest.mark.parametrize("method", ["amg", "cg"])
def test_matches_dense_solver(control6, method):
    A, M, K = control6
    ref = dense_min_eig(A, M, K)
    res = min_garding_eig(A, M, K, method=method, value_tol=1e-12, window=30)
    assert res.kappa == pytest.approx(ref, abs=1e-8)
    assert res.kappa >= ref - 1e-12  # Ritz values bound from above


def test_matches_dense_solver_with_shift(twisted4):
    A, M, K = twisted4
    ref = dense_min_eig(A, M, K, lam=1.0)
    res = min_garding_eig(A, M, K, lam=1.0, value_tol=1e-12, window=30)
    assert res.kappa == pytest.approx(ref, abs=1e-8)


def test_monotone_in_shift(twisted4):
    A, M, K = twisted4
    ks = kappa_monotone_in_lambda(A, M, K, [0.0, 0.5, 1.0, 4.0], value_tol=1e-12, window=30)
    assert all(b >= a - 1e-10 for a, b in zip(ks, ks[1:]))


def test_dominated_by_any_trial_field(twisted4):
    A, M, K = twisted4
    res = min_garding_eig(A, M, K, lam=1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert res.kappa <= rayleigh_quotient(A, M, K, rng.standard_normal(A.shape[0]), lam=1.0) + 1e-12


def test_iteration_cap_raises_with_diagnostics(control6):
    A, M, K = control6
    with pytest.raises(NoConvergence) as info:
        min_garding_eig(A, M, K, tol=0.0, value_tol=0.0, maxiter=2)
    assert info.value.diagnostics["iterations"] == 2
    assert "kappa" in info.value.diagnostics


def test_negative_shift_rejected(control6):
    A, M, K = control6
    with pytest.raises(ValueError):
        min_garding_eig(A, M, K, lam=-1.0)


def test_block_cg_solves(control6):
    _, _, K = control6
    B = np.random.default_rng(1).standard_normal((K.shape[0], 3))
    X = pcg(K, B, tol=1e-12)
    assert np.linalg.norm(K @ X - B) <= 1e-10 * np.linalg.norm(B)


def test_small_matched_ladder_decreases():
    rows = counterexample_spectrum((1, 2, 3), cells_per_edge=2, lam=1.0)
    ks = [r["kappa"] for r in rows]
    assert strictly_decreasing(ks)
    assert all(r["kappa"] <= r["witness_rq"] for r in rows)
