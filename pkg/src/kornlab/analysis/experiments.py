"""
Ladders of quotients and discrete coercivity constants across construction levels.
"""

import time

import numpy as np

from kornlab.analysis.fem import Mesh, assemble_forms, extend_by_zero
from kornlab.analysis.norms import fit_power_law, witness_quotient
from kornlab.analysis.spectrum import min_garding_eig, rayleigh_quotient
from kornlab.unimodular import UnimodularCounterexample


def quotient_ladder(n_list=(1, 2, 4, 8, 16), q=2.0, lam=1.0, eps=1e-7, seed=0, n_samples=400_000, **params):
    """Korn quotients of the witnesses along ``n_list`` and the fitted decay rate."""
    reports = []
    for n in n_list:
        model = UnimodularCounterexample(n=int(n), q=q, eps=eps, **params).fit()
        reports.append(witness_quotient(model, lam=lam, n_samples=n_samples, seed=seed))
    alpha, beta = fit_power_law([r.n for r in reports], [r.K for r in reports])
    return reports, {"alpha": alpha, "beta": beta}


def control_spectrum(meshes=(8, 16, 24), lam=0.0, box=None, **solver):
    """Discrete coercivity constant for the identity coefficient on each mesh."""
    out = []
    for m in meshes:
        t0 = time.perf_counter()
        mesh = Mesh(box, m)
        A, M, K = assemble_forms(mesh)
        res = min_garding_eig(A, M, K, lam=lam, mesh=m, **solver)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def _matched_mesh(model, cells_per_edge):
    """Mesh with ``cells_per_edge`` cells along each edge of the witness grid cubes."""
    pc = model.witness_part()
    region = model.decomposition_.region
    e = pc.axis_field.covering.edge(0)
    ratio = region.sides / e
    counts = np.rint(ratio).astype(int)
    if not np.allclose(ratio, counts, rtol=0, atol=1e-9) or model.mode != "single":
        raise ValueError("grid cubes must tile the domain for a matched mesh")
    return Mesh(region, tuple(int(c) * int(cells_per_edge) for c in counts))


def counterexample_spectrum(
    n_list=(1, 2, 3, 4, 5, 6), cells_per_edge=4, lam=1.0, eps=1e-3, seed=0, continuation=True, **solver
):
    """Discrete coercivity constant of the determinant-one coefficient along ``n``.

    The mesh has ``cells_per_edge`` cells along every grid cube at each
    level, so the level-``n`` problem is ``n^3`` exact copies of one cell
    problem.  The interpolated witness is placed in the starting block, and
    with ``continuation`` the previous level's eigenvectors, extended by zero
    after rescaling, join it; both are admissible trial fields, so each
    reported value is at most their quotients.

    Returns
    -------
    list of dict
        Per level: ``n``, ``mesh``, ``kappa``, ``witness_rq``, ``result``.
    """
    rows = []
    prev = None
    for n in n_list:
        t0 = time.perf_counter()
        model = UnimodularCounterexample(n=int(n), q=2.0, eps=eps).fit()
        mesh = _matched_mesh(model, cells_per_edge)
        A, M, K = assemble_forms(mesh, P=lambda X: model.evaluate(X).P)
        w = mesh.interpolate(lambda X: model.evaluate(X).u)
        wrq = rayleigh_quotient(A, M, K, w, lam=lam)
        start = [w.reshape(-1, 1)]
        if continuation and prev is not None and all(a <= b for a, b in zip(prev[0].shape, mesh.shape)):
            start.append(extend_by_zero(prev[0], mesh, prev[1]).reshape(mesh.n_dofs, -1))
        res = min_garding_eig(A, M, K, lam=lam, x0=np.hstack(start), mesh=max(mesh.shape), seed=seed,
                              return_vectors=True, **solver)
        prev = (mesh, res.vectors[:, : max(1, res.vectors.shape[1] // 2)])
        res.vectors = None
        res.seconds = time.perf_counter() - t0
        rows.append({"n": int(n), "mesh": list(mesh.shape), "kappa": res.kappa, "witness_rq": wrq, "result": res})
    return rows


def strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def kappa_monotone_in_lambda(A, M, K, lams, **solver):
    """``kappa`` over a grid of mass shifts (nondecreasing in exact arithmetic)."""
    return [min_garding_eig(A, M, K, lam=float(l), **solver).kappa for l in lams]


def ladder_rows(kind, items, q=2.0):
    """Flat rows ``(n, q, lambda, value, budget)`` for CSV output."""
    rows = []
    if kind == "quotient":
        for r in items:
            rows.append((r.n, r.q, r.lam, r.K, r.budget))
    elif kind == "spectrum":
        for r in items:
            rows.append((r["n"], q, r["result"].lam, r["kappa"], r["witness_rq"]))
    return rows


__all__ = [
    "control_spectrum",
    "counterexample_spectrum",
    "kappa_monotone_in_lambda",
    "ladder_rows",
    "quotient_ladder",
    "strictly_decreasing",
]
