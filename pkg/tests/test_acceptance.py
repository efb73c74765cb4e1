"""Acceptance criteria, each run at its stated tolerance with one pass/fail line."""

import time

import numpy as np
import pytest
import sympy as sym
from scipy.spatial.transform import Rotation

from kornlab.analysis.cosserat import cosserat_energy, lattice_points
from kornlab.analysis.ellipticity import complex_ellipticity_check, lh_check
from kornlab.analysis.experiments import control_spectrum, counterexample_spectrum, quotient_ladder, strictly_decreasing
from kornlab.geometry import Box
from kornlab.rotational import SyntheticFrameMap, frame_to_rotation, rotational_pipeline
from kornlab.unimodular import Tag, UnimodularCounterexample, verify_construction

N_LIST = (1, 2, 4, 8)
Q_LIST = (1.5, 2.0, 3.0)
EPS = 1e-3
J = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


@pytest.fixture(scope="module")
def construction_records():
    out = {}
    for q in Q_LIST:
        for n in N_LIST:
            t0 = time.perf_counter()
            model = UnimodularCounterexample(n=n, q=q, eps=EPS).fit()
            # a few extra samples so that at least 10^5 land on interior points
            rec = verify_construction(model, seed=0, n_samples=102_000, n_sup_samples=1_000_000)
            out[(n, q)] = (rec, time.perf_counter() - t0, model)
    return out


def test_criterion_01_symmetric_part_vanishes(construction_records, record_criterion):
    worst = max(r.sym_residual_max for r, _, _ in construction_records.values())
    fewest = min(r.interior_samples for r, _, _ in construction_records.values())
    slowest = max(t for _, t, _ in construction_records.values())
    ok = worst <= 1e-12 and fewest >= 100_000 and slowest <= 60.0
    record_criterion(1, ok, f"max |DuP + (DuP)^T| = {worst:.2e} over >= {fewest} interior samples, "
                            f"slowest (n, q) {slowest:.1f} s")
    assert ok


def test_criterion_02_gradient_norm(construction_records, record_criterion):
    lo_target = 2 * (1 - EPS - 1e-3)
    bad = []
    for (n, q), (r, _, _) in construction_records.items():
        in_band = lo_target <= r.norm_q_pow_q_lower <= r.norm_q_pow_q_upper <= 2.0 + 1e-12
        mc = r.norm_q_pow_q_lower - 3 * r.norm_q_pow_q_sigma <= r.norm_q_pow_q_mc <= r.norm_q_pow_q_upper + 3 * r.norm_q_pow_q_sigma
        if not (in_band and mc):
            bad.append((n, q))
    lowest = min(r.norm_q_pow_q_lower for r, _, _ in construction_records.values())
    record_criterion(2, not bad, f"certified |Du|_q^q lower bound min {lowest:.6f} >= {lo_target:.6f}; "
                                 f"Monte Carlo within 3 sigma; failures {bad}")
    assert not bad


def test_criterion_03_sup_norm(construction_records, record_criterion):
    bad = [(n, q) for (n, q), (r, _, _) in construction_records.items()
           if not (r.sup_norm_analytic <= 2.0 / n and r.sup_norm_observed <= 2.0 / n)]
    ratios = {n: construction_records[(n, 2.0)][0].sup_norm_observed * n / 2 for n in N_LIST}
    record_criterion(3, not bad, f"observed sup |u_n| / (2/n) at q=2: "
                                 + ", ".join(f"n={n}: {v:.3f}" for n, v in ratios.items()))
    assert not bad


def test_criterion_04_coefficient_fields(construction_records, record_criterion):
    det = max(r.det_residual_max for r, _, _ in construction_records.values())
    op_ok = all(r.op_norm_max <= r.op_norm_bound * (1 + 1e-12) for r, _, _ in construction_records.values())
    bound = construction_records[(1, 2.0)][0].op_norm_bound
    so3 = max(rotational_pipeline(SyntheticFrameMap(seed=0), n, n_samples=100_000, n_sup_samples=20_000)
              .record.extra["so3_residual_max"] for n in N_LIST)
    ok = det <= 1e-12 and op_ok and so3 <= 1e-12
    record_criterion(4, ok, f"max |det P - 1| = {det:.2e}, |P|_op within margin bound {bound:.4f}: {op_ok}, "
                            f"rotation field SO(3) defect {so3:.2e}")
    assert ok


def test_criterion_05_ellipticity(construction_records, record_criterion):
    _, _, model = construction_records[(4, 2.0)]
    b = model.evaluate(Box.unit().sample(2000, np.random.default_rng(0)))
    Ps = [np.eye(3)] + list(b.P[b.tag == Tag.INTERIOR][:10]) + list(Rotation.random(5, random_state=1).as_matrix())
    lh = min(lh_check(P, samples=10_000, rng=k) for k, P in enumerate(Ps))
    cx = min(complex_ellipticity_check(P, samples=10_000, rng=k) for k, P in enumerate(Ps))
    ok = lh >= 1 - 1e-9 and cx > 1e-6
    record_criterion(5, ok, f"min rank-one ratio {lh:.12f} (>= 1 - 1e-9), min complex norm {cx:.4f} (> 1e-6) "
                            f"over {len(Ps)} coefficients")
    assert ok


def test_criterion_06_quotient_collapse(record_criterion):
    reports, fit = quotient_ladder((1, 2, 4, 8, 16), q=2.0, lam=1.0, eps=1e-7, n_samples=400_000)
    ks = [r.K for r in reports]
    ok = 0.9 <= fit["alpha"] <= 1.1 and ks[-1] < 0.1 * ks[0]
    record_criterion(6, ok, f"decay exponent {fit['alpha']:.4f}, K(16)/K(1) = {ks[-1] / ks[0]:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_07_control_case(record_criterion):
    x, y, z = sym.symbols("x y z")
    g = x * (1 - x) * y * (1 - y) * z * (1 - z)
    u = (g * (1 + y), g * x * z, g * (x - y))
    Du = sym.Matrix([[sym.diff(c, v) for v in (x, y, z)] for c in u])
    S = (Du + Du.T) / 2
    lims = [(x, 0, 1), (y, 0, 1), (z, 0, 1)]
    lhs = sym.integrate(sym.expand(sum(e ** 2 for e in S)), *lims)
    rhs = sym.integrate(sym.expand(sum(e ** 2 for e in Du) / 2 + Du.trace() ** 2 / 2), *lims)
    identity_gap = abs(float(lhs - rhs)) / float(rhs)

    results = control_spectrum((8, 16, 24), lam=0.0)
    kappas = [r.kappa for r in results]
    t24 = results[-1].seconds
    ok = identity_gap <= 1e-12 and all(0.45 <= k <= 0.75 for k in kappas) and t24 <= 300.0
    record_criterion(7, ok, "identity coefficient kappa = " + ", ".join(
        f"{r.mesh}^3: {r.kappa:.6f}" for r in results) + f"; 24^3 in {t24:.0f} s; divergence identity gap {identity_gap:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_08_counterexample_spectrum(record_criterion):
    rows = counterexample_spectrum((1, 2, 3, 4, 5, 6), cells_per_edge=4, lam=1.0, eps=EPS)
    ks = [r["kappa"] for r in rows]
    dominated = all(r["kappa"] <= r["witness_rq"] for r in rows)
    ok = strictly_decreasing(ks) and dominated
    record_criterion(8, ok, "kappa(n) = " + ", ".join(f"{k:.5f}" for k in ks)
                     + f"; below witness quotients: {dominated}")
    assert ok


def test_criterion_09_rotation_algebra(record_criterion):
    Q = Rotation.random(10_000, random_state=9).as_matrix()
    d1, d2 = Q[:, :, 0], Q[:, :, 1]
    s = 2.0 ** 0.5
    P = frame_to_rotation(d1, d2)
    Du = np.stack([s * d1, s * d2, np.zeros_like(d1)], axis=1)
    DuP = Du @ P
    err = float(np.max(np.abs(DuP - s * J)))
    sym_err = float(np.max(np.abs(DuP + np.swapaxes(DuP, 1, 2))))
    ok = err <= 1e-12 and sym_err <= 1e-12
    record_criterion(9, ok, f"max |Du P - sJ| = {err:.2e}, max |sym| = {sym_err:.2e} over 10^4 frames")
    assert ok


def test_criterion_10_cosserat_invariance(record_criterion):
    shape, h = (9, 9, 9), (1 / 8,) * 3
    X = lattice_points(shape, h)
    rotvec = 0.4 * np.stack([np.sin(2 * X[..., 1]), X[..., 0] * X[..., 2], np.cos(X[..., 0])], axis=-1)
    R = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(shape + (3, 3))
    phi = X + 0.05 * np.sin(np.pi * X[..., [1, 2, 0]])
    params = dict(mu_e=1.0, lambda_e=1.0, L_c=0.5, q_c=3.0)
    e_id = cosserat_energy(X, np.broadcast_to(np.eye(3), shape + (3, 3)), **params)
    e0 = cosserat_energy(phi, R, **params)
    rel = max(abs(cosserat_energy(phi @ Qm.T, Qm @ R, **params) - e0) / e0
              for Qm in Rotation.random(10, random_state=10).as_matrix())
    ok = rel <= 1e-10 and e_id == 0.0
    record_criterion(10, ok, f"max relative change under 10 rigid rotations {rel:.1e}, identity energy {e_id!r}")
    assert ok
