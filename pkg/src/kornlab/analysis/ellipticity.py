"""
Pointwise ellipticity checks for the operator ``F -> sym(F P)``.

For real unit vectors ``|sym(xi (x) b)|^2 = (|b|^2 + (xi . b)^2) / 2`` with
``b = P^T eta``, so the Legendre-Hadamard ratio never drops below one and is
attained when ``eta`` is the weakest direction of ``P P^T`` and ``xi`` is
orthogonal to ``b``.  For complex vectors the same identity holds with the
Hermitian product, which gives the lower bound ``sigma_min(P) / sqrt(2)``.
"""

import numpy as np
from scipy.optimize import minimize

from kornlab._random import as_generator
from kornlab.exceptions import InvalidSample


def _unit(V):
    return V / np.linalg.norm(V, axis=-1, keepdims=True)


def sym_rank_one(a, b):
    """``sym(a (x) b)`` for stacked real or complex vectors (N, 3)."""
    M = a[:, :, None] * b[:, None, :]
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def lh_check(P, samples=10_000, rng=None, adversarial=True, pairs=None):
    """Smallest ``|sym(xi (x) P^T eta)|^2 / (lambda_min(P P^T) / 2)`` over unit pairs.

    Parameters
    ----------
    P : array (3, 3)
    samples : int
        Random pairs drawn uniformly from the product of spheres.
    adversarial : bool
        Include the pair that attains the infimum.
    pairs : tuple of arrays or None
        Explicit ``(xi, eta)`` of shape (N, 3), normalized here; replaces sampling.

    Returns
    -------
    float
    """
    P = np.asarray(P, dtype=float)
    rng = as_generator(rng, "sampling/lh")
    lam, V = np.linalg.eigh(P @ P.T)
    if pairs is not None:
        xi = np.atleast_2d(np.asarray(pairs[0], dtype=float))
        eta = np.atleast_2d(np.asarray(pairs[1], dtype=float))
        if np.any(np.linalg.norm(xi, axis=1) == 0) or np.any(np.linalg.norm(eta, axis=1) == 0):
            raise InvalidSample("xi and eta must be nonzero")
        xi, eta = _unit(xi), _unit(eta)
        adversarial = False
    else:
        xi = _unit(rng.standard_normal((samples, 3)))
        eta = _unit(rng.standard_normal((samples, 3)))
    if adversarial:
        e = V[:, 0]
        b = P.T @ e
        x = np.cross(b, [1.0, 0.0, 0.0])
        if np.linalg.norm(x) < 1e-8 * np.linalg.norm(b):
            x = np.cross(b, [0.0, 1.0, 0.0])
        xi = np.vstack([xi, x / np.linalg.norm(x)])
        eta = np.vstack([eta, e])
    S = sym_rank_one(xi, eta @ P)
    num = np.sum(S * S, axis=(1, 2))
    return float(np.min(num) / (0.5 * lam[0]))


def complex_ellipticity_lower_bound(P):
    """Certified lower bound ``sigma_min(P) / sqrt(2)`` for unit complex pairs."""
    return float(np.linalg.svd(np.asarray(P, dtype=float), compute_uv=False)[-1] / np.sqrt(2.0))


def index_certificate(a, b):
    """Positive lower bound on ``|sym(a (x) b)|`` from a single entry.

    With ``i`` the largest entry of ``a`` and ``j`` that of ``b``, either the
    diagonal entry ``a_i b_i`` or the off-diagonal entry
    ``(a_i b_j + a_j b_i) / 2`` is bounded away from zero; this is the
    argument that a symmetric rank-one product of nonzero vectors cannot vanish.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    r = np.arange(len(a))
    i = np.argmax(np.abs(a), axis=1)
    j = np.argmax(np.abs(b), axis=1)
    diag = np.abs(a[r, i] * b[r, i])
    off = 0.5 * (np.abs(a[r, i] * b[r, j]) - np.abs(a[r, j] * b[r, i]))
    # the off-diagonal bound counts once when i != j and twice (symmetric pair)
    off = np.where(i == j, 0.0, np.sqrt(2.0) * np.maximum(off, 0.0))
    return np.maximum(diag, off)


def _complex_norms(P, xi, eta):
    return np.linalg.norm(sym_rank_one(xi, eta @ P), axis=(1, 2))


def complex_ellipticity_check(P, samples=10_000, rng=None, pairs=None, refine=8):
    """Smallest ``|sym(xi (x) P^T eta)|`` over normalized nonzero complex pairs.

    Parameters
    ----------
    P : array (3, 3)
    samples : int
        Random pairs with independent Gaussian real and imaginary parts.
    pairs : tuple of arrays or None
        Explicit ``(xi, eta)`` of shape (N, 3); used instead of sampling.
    refine : int
        Number of best samples polished by local minimization.

    Raises
    ------
    InvalidSample
        If a supplied vector is zero.
    """
    P = np.asarray(P, dtype=float)
    if pairs is not None:
        xi = np.atleast_2d(np.asarray(pairs[0], dtype=complex))
        eta = np.atleast_2d(np.asarray(pairs[1], dtype=complex))
        if np.any(np.linalg.norm(xi, axis=1) == 0) or np.any(np.linalg.norm(eta, axis=1) == 0):
            raise InvalidSample("xi and eta must be nonzero")
    else:
        rng = as_generator(rng, "sampling/complex")
        xi = rng.standard_normal((samples, 3)) + 1j * rng.standard_normal((samples, 3))
        eta = rng.standard_normal((samples, 3)) + 1j * rng.standard_normal((samples, 3))
    xi = xi / np.linalg.norm(xi, axis=1, keepdims=True)
    eta = eta / np.linalg.norm(eta, axis=1, keepdims=True)
    norms = _complex_norms(P, xi, eta)
    best = float(np.min(norms))
    if pairs is not None or refine <= 0:
        return best

    def objective(z):
        x = z[0:3] + 1j * z[3:6]
        e = z[6:9] + 1j * z[9:12]
        nx, ne = np.linalg.norm(x), np.linalg.norm(e)
        if nx == 0 or ne == 0:
            return np.inf
        return float(_complex_norms(P, (x / nx)[None], (e / ne)[None])[0])

    for k in np.argsort(norms)[:refine]:
        z0 = np.concatenate([xi[k].real, xi[k].imag, eta[k].real, eta[k].imag])
        res = minimize(objective, z0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        best = min(best, float(res.fun))
    return best
