"""
Row-wise Lq norms and the Korn-type quotient of a witness field.

For a matrix field with rows ``p_i`` the convention is
``|P|_q^q = int sum_i |p_i|^q dx`` with Euclidean row norms; a vector field
counts as a single row.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from kornlab._random import as_generator, substream
from kornlab.geometry import Box


@dataclass(frozen=True)
class NormConvention:
    q: float = 2.0

    def __post_init__(self):
        if not (1.0 < float(self.q) < math.inf):
            raise ValueError("q must lie in (1, inf)")

    def pointwise(self, F):
        """``sum_i |row_i|^q`` for stacked vectors (N, 3) or matrices (N, r, 3)."""
        F = np.asarray(F, dtype=float)
        if F.ndim == 2:
            return np.linalg.norm(F, axis=1) ** self.q
        return np.sum(np.linalg.norm(F, axis=2) ** self.q, axis=1)


@dataclass
class NormEstimate:
    value: float
    power: float
    power_sigma: float
    error_bound: float
    n_samples: int
    exact: bool = False


def _strata_points(region, strata, per, rng):
    """``per`` uniform points in each cell of a ``strata`` grid over ``region``."""
    s = np.array(strata)
    cells = np.stack(np.meshgrid(*(np.arange(k) for k in s), indexing="ij"), axis=-1).reshape(-1, 3)
    U = rng.random((len(cells), per, 3))
    X = region.lo + (cells[:, None, :] + U) / s * region.sides
    return X


def stratified_mean(fn, region, n_samples=1_000_000, strata=(8, 8, 8), rng=None, chunk_cells=64):
    """Stratified estimate of ``int_region fn`` with its standard error.

    Returns ``(integral, sigma)``.  Strata are equal cells of a grid, each
    receiving the same number of uniform points.
    """
    rng = as_generator(rng, "sampling")
    n_cells = int(np.prod(strata))
    per = max(2, n_samples // n_cells)
    s = np.array(strata)
    cells = np.stack(np.meshgrid(*(np.arange(k) for k in s), indexing="ij"), axis=-1).reshape(-1, 3)
    means = np.empty(n_cells)
    varis = np.empty(n_cells)
    for start in range(0, n_cells, chunk_cells):
        c = cells[start : start + chunk_cells]
        U = rng.random((len(c), per, 3))
        X = (region.lo + (c[:, None, :] + U) / s * region.sides).reshape(-1, 3)
        v = np.asarray(fn(X), dtype=float).reshape(len(c), per)
        means[start : start + len(c)] = v.mean(axis=1)
        varis[start : start + len(c)] = v.var(axis=1, ddof=1)
    vol = region.volume
    integral = vol * means.mean()
    sigma = vol * math.sqrt(varis.sum() / per) / n_cells
    return float(integral), float(sigma)


def lq_norm(field, q=2.0, region=None, n_samples=1_000_000, rng=None, strata=(8, 8, 8)):
    """Row-wise Lq norm of ``field`` over ``region`` by stratified Monte Carlo.

    Parameters
    ----------
    field : callable
        Points (N, 3) to vectors (N, 3) or matrices (N, r, 3).
    q : float
    region : Box
        Defaults to the unit cube.
    n_samples : int
    rng : Generator or int

    Returns
    -------
    NormEstimate
        ``error_bound`` is the change of the norm under a three-sigma change
        of its q-th power.
    """
    conv = NormConvention(q)
    region = region if region is not None else Box.unit()
    power, sigma = stratified_mean(lambda X: conv.pointwise(field(X)), region, n_samples, strata, rng)
    value = max(power, 0.0) ** (1.0 / q)
    hi = (max(power, 0.0) + 3 * sigma) ** (1.0 / q)
    return NormEstimate(value, power, sigma, hi - value, int(n_samples))


def piecewise_constant_lq(values, measures, q=2.0):
    """Exact row-wise norm of a field that is constant on pieces of given measure."""
    conv = NormConvention(q)
    v = np.asarray(values, dtype=float)
    power = float(np.sum(conv.pointwise(v) * np.asarray(measures, dtype=float)))
    return NormEstimate(power ** (1.0 / q), power, 0.0, 0.0, 0, exact=True)


@dataclass
class QuotientReport:
    n: int
    q: float
    lam: float
    sym_norm: float
    u_norm: float
    u_sup: float
    grad_norm: float
    K: float
    K_sup: float
    budget: float
    status: str = "ok"
    K_bound: float = float("nan")
    sigma: float = float("nan")
    n_samples: int = 0

    def to_dict(self):
        return asdict(self)


def korn_quotient(
    fields, region=None, q=2.0, lam=1.0, sup_mode=True, n_samples=400_000, rng=None, budget=0.0, n=0, u_sup=None
):
    """Quotient ``(|sym(Du P)|_q + lam^{1/q} |u|_q) / |Du|_q`` of one field.

    Parameters
    ----------
    fields : callable
        Points (N, 3) to a tuple ``(u, Du, P)``.
    sup_mode : bool
        Also form the variant with ``|u|_inf`` in place of ``|u|_q``.
    budget : float
        Known bound on the quotient error from unresolved sets.
    u_sup : float or None
        Analytic bound on ``|u|_inf``; the sampled maximum is used otherwise.

    Returns
    -------
    QuotientReport
        ``status`` is ``"DegenerateWitness"`` when ``Du`` vanishes.
    """
    region = region if region is not None else Box.unit()
    conv = NormConvention(q)
    rng = as_generator(rng, "sampling")
    sup = [0.0]

    def parts(X):
        u, Du, P = fields(X)
        S = 0.5 * (Du @ P + np.swapaxes(Du @ P, 1, 2))
        sup[0] = max(sup[0], float(np.max(np.linalg.norm(u, axis=1))) if len(u) else 0.0)
        return np.column_stack([conv.pointwise(S), conv.pointwise(u), conv.pointwise(Du)])

    # one stratified sample shared by the three integrands
    s = np.array((8, 8, 8))
    per = max(2, n_samples // int(np.prod(s)))
    X = _strata_points(region, s, per, rng).reshape(-1, 3)
    vals = np.vstack([parts(X[i : i + 200_000]) for i in range(0, len(X), 200_000)])
    means = vals.reshape(int(np.prod(s)), per, 3).mean(axis=1)
    powers = region.volume * means.mean(axis=0)
    var = vals.reshape(int(np.prod(s)), per, 3).var(axis=1, ddof=1).sum(axis=0) / per
    sig = region.volume * np.sqrt(var) / int(np.prod(s))
    sym_n, u_n, g_n = (float(max(p, 0.0)) ** (1.0 / q) for p in powers)
    usup = float(u_sup) if u_sup is not None else sup[0]
    lq = float(lam) ** (1.0 / q)
    if g_n == 0.0:
        return QuotientReport(int(n), float(q), float(lam), sym_n, u_n, usup, 0.0, math.nan, math.nan,
                              float(budget), "DegenerateWitness", n_samples=len(X))
    K = (sym_n + lq * u_n) / g_n
    K_sup = (sym_n + lq * usup) / g_n if sup_mode else math.nan
    return QuotientReport(
        int(n), float(q), float(lam), sym_n, u_n, usup, g_n, K, K_sup, float(budget),
        sigma=float(sig[2]), n_samples=len(X),
    )


def witness_quotient(model, lam=1.0, sup_mode=True, n_samples=400_000, seed=0):
    """Korn quotient of the witness of a fitted construction, with its budget.

    The budget bounds the symmetric part contributed by the uncovered set,
    where the coefficient is the filler: every row of ``sym(Du P)`` there is
    at most ``sqrt(2) s |F|_op`` with ``s`` the witness scale.
    """
    q = float(model.q)
    n = int(model.n)
    pc = model.witness_part()
    region = pc.box
    s = pc.scale(q)
    filler = np.linalg.norm(model.filler_, 2)
    sym_budget = (3.0 * (math.sqrt(2.0) * s * filler) ** q * pc.residual_bound) ** (1.0 / q)

    def fields(X):
        b = model.evaluate(X)
        return b.u, b.Du, b.P

    rep = korn_quotient(
        fields, region, q, lam, sup_mode, n_samples, substream(seed, f"sampling/quotient/n={n}/q={q}"), n=n,
        u_sup=model.sup_norm_bound(),
    )
    grad_lower = float(model.gradient_norm_bounds()[0]) ** (1.0 / q)
    rep.budget = float(sym_budget / grad_lower)
    rep.K_bound = (float(sym_budget) + float(lam) ** (1.0 / q) * model.level_sup_bound() * region.volume ** (1.0 / q)) / grad_lower
    return rep


def fit_power_law(ns, values):
    """Least-squares ``log v = -alpha log n + beta``; returns ``(alpha, beta)``."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, beta = np.polyfit(x, y, 1)
    return float(-slope), float(beta)
