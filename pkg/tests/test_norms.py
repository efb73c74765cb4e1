import math

import numpy as np
import pytest

from kornlab.analysis.norms import (
    NormConvention,
    fit_power_law,
    korn_quotient,
    lq_norm,
    piecewise_constant_lq,
    stratified_mean,
    witness_quotient,
)
from kornlab.geometry import Box
from kornlab.unimodular import UnimodularCounterexample


def gauss_integral(fn, order=12):
    """Tensor Gauss-Legendre rule on the unit cube (independent of the sampler)."""
    t, w = np.polynomial.legendre.leggauss(order)
    t, w = 0.5 * (t + 1), 0.5 * w
    X = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return float(np.sum(W * fn(X)))


def smooth_matrix(X):
    x, y, z = X.T
    M = np.stack(
        [
            np.stack([np.sin(x + y), x * z, np.cos(z)], axis=1),
            np.stack([y ** 2, np.exp(-x), x * y * z], axis=1),
            np.stack([1 + z, np.sin(3 * y), x - y], axis=1),
        ],
        axis=1,
    )
    return M


def bump_fields(X):
    x, y, z = X.T
    g = x * (1 - x) * y * (1 - y) * z * (1 - z)
    dg = np.stack([(1 - 2 * x) * y * (1 - y) * z * (1 - z),
                   x * (1 - x) * (1 - 2 * y) * z * (1 - z),
                   x * (1 - x) * y * (1 - y) * (1 - 2 * z)], axis=1)
    c = np.stack([np.ones_like(x), 2 * np.ones_like(x), -np.ones_like(x)], axis=1)
    u = g[:, None] * c
    Du = c[:, :, None] * dg[:, None, :]
    # add a rotational component so that sym Du differs from Du
    w = np.stack([g * y, -g * x, np.zeros_like(x)], axis=1)
    Dw = np.zeros_like(Du)
    Dw[:, 0] = y[:, None] * dg
    Dw[:, 0, 1] += g
    Dw[:, 1] = -x[:, None] * dg
    Dw[:, 1, 0] -= g
    return u + w, Du + Dw, np.broadcast_to(np.eye(3), Du.shape)


def test_convention_rejects_bad_q():
    with pytest.raises(ValueError):
        NormConvention(1.0)


def test_constant_rows_norm_squared_is_two():
    est = lq_norm(lambda X: np.broadcast_to(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]]), (len(X), 3, 3)),
                  q=2, n_samples=10_000, rng=0)
    assert est.power == pytest.approx(2.0, abs=1e-14)
    exact = piecewise_constant_lq(np.array([[[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]]]), [1.0], q=2)
    assert exact.exact and exact.power == 2.0


def test_q2_matches_frobenius_on_smooth_field():
    est = lq_norm(smooth_matrix, q=2, n_samples=200_000, rng=1)
    oracle = gauss_integral(lambda X: np.sum(smooth_matrix(X) ** 2, axis=(1, 2)))
    assert abs(est.power - oracle) <= 4 * est.power_sigma
    assert est.value == pytest.approx(math.sqrt(oracle), rel=1e-3)


def test_q2_matches_frobenius_on_piecewise_constant_fields():
    rng = np.random.default_rng(2)
    for _ in range(100):
        vals = rng.standard_normal((5, 3, 3))
        meas = rng.random(5)
        est = piecewise_constant_lq(vals, meas, q=2)
        frob = math.sqrt(sum(m * np.sum(v * v) for v, m in zip(vals, meas)))
        assert est.value == pytest.approx(frob, rel=1e-12)


def test_stratified_mean_of_polynomial():
    val, sigma = stratified_mean(lambda X: X[:, 0] ** 2 + X[:, 1] * X[:, 2], Box.unit(), 100_000, rng=3)
    assert abs(val - (1 / 3 + 1 / 4)) <= 4 * sigma


def test_zero_field_is_degenerate():
    def zero(X):
        n = len(X)
        return np.zeros((n, 3)), np.zeros((n, 3, 3)), np.broadcast_to(np.eye(3), (n, 3, 3))

    rep = korn_quotient(zero, n_samples=5_000, rng=0)
    assert rep.status == "DegenerateWitness"
    assert math.isnan(rep.K)


def test_bump_quotient_respects_divergence_identity():
    rep = korn_quotient(bump_fields, lam=0.0, n_samples=200_000, rng=4)
    assert rep.status == "ok"
    assert rep.K >= 1 / math.sqrt(2) - 0.01
    assert rep.K <= 1.0 + 1e-12


def test_witness_quotient_below_its_bound():
    m = UnimodularCounterexample(n=4, eps=1e-7).fit()
    rep = witness_quotient(m, lam=1.0, n_samples=80_000)
    assert rep.K <= rep.K_bound
    assert rep.K_sup >= rep.K - 1e-12
    assert rep.sym_norm <= 1e-12


def test_power_law_fit_recovers_slope():
    ns = np.array([1, 2, 4, 8])
    alpha, beta = fit_power_law(ns, 3.0 * ns ** -1.0)
    assert alpha == pytest.approx(1.0, abs=1e-12)
    assert beta == pytest.approx(math.log(3.0), abs=1e-12)
