"""
Smallest eigenvalue of the pencil ``(A_P + lam M) x = kappa K x``.

The iteration is a block shift-and-invert scheme with shift zero: search
directions are ``(A_P + lam M)^{-1}`` applied to the current residuals, and a
Rayleigh-Ritz step in the ``K`` inner product over the current block, the new
directions and the previous update (the locally optimal variant of the power
method).  The inverse is applied either exactly by conjugate gradients or
approximately by one algebraic multigrid cycle.

Every reported ``kappa`` is a Rayleigh quotient, hence an upper bound on the
true minimum, and if a trial vector is placed in the starting block the
result can never exceed that vector's quotient.
"""

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from kornlab._random import substream
from kornlab.exceptions import NoConvergence


@dataclass
class SpectrumResult:
    kappa: float
    lam: float
    mesh: int
    iterations: int
    residual: float
    converged_by: str = "residual"
    ritz: list = field(default_factory=list)
    seconds: float = float("nan")
    method: str = "amg"
    history: list = field(default_factory=list)
    vectors: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("vectors")
        return d


def pcg(A, B, tol=1e-10, maxiter=None, precond=None):
    """Preconditioned conjugate gradients for ``A X = B`` with a block of columns.

    Columns are iterated independently but share the matrix products.
    ``precond`` defaults to the inverse diagonal.
    """
    B = np.asarray(B, dtype=float)
    vec = B.ndim == 1
    B = B.reshape(len(B), -1)
    n = A.shape[0]
    maxiter = maxiter or 10 * n
    if precond is None:
        dinv = 1.0 / A.diagonal()
        precond = lambda R: dinv[:, None] * R  # noqa: E731
    X = np.zeros_like(B)
    R = B.copy()
    Z = precond(R)
    Pd = Z.copy()
    rz = np.sum(R * Z, axis=0)
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    for it in range(maxiter):
        if np.all(np.linalg.norm(R, axis=0) <= tol * bnorm):
            break
        AP = A @ Pd
        alpha = rz / np.sum(Pd * AP, axis=0)
        X += alpha * Pd
        R -= alpha * AP
        Z = precond(R)
        rz_new = np.sum(R * Z, axis=0)
        Pd = Z + (rz_new / rz) * Pd
        rz = rz_new
    else:
        raise NoConvergence("inner conjugate gradient hit its cap", {"iterations": maxiter})
    return X[:, 0] if vec else X


def _k_orthonormal(S, K, drop=1e-10):
    """Basis of span(S) that is orthonormal in the ``K`` inner product."""
    G = S.T @ (K @ S)
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    keep = w > drop * w.max()
    return S @ (V[:, keep] / np.sqrt(w[keep]))


def _make_inverse(Al, method, inner_tol, rng):
    if method == "cg":
        dinv = 1.0 / Al.diagonal()
        return lambda R: pcg(Al, R, tol=inner_tol, precond=lambda Z: dinv[:, None] * Z)
    if method == "amg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(Al.tocsr(), symmetry="symmetric")
        M = ml.aspreconditioner(cycle="V")
        return lambda R: np.column_stack([M @ R[:, j] for j in range(R.shape[1])])
    raise ValueError(f"unknown method {method!r}")


def min_garding_eig(
    A,
    M,
    K,
    lam=0.0,
    x0=None,
    block=8,
    tol=1e-8,
    value_tol=1e-6,
    window=20,
    maxiter=10_000,
    method="amg",
    inner_tol=1e-10,
    seed=0,
    mesh=0,
    time_limit=None,
    return_vectors=False,
):
    """Smallest ``kappa`` with ``(A + lam M) x = kappa K x``.

    Parameters
    ----------
    A, M, K : sparse matrices
        Output of ``assemble_forms``.
    lam : float
        Mass shift, nonnegative.
    x0 : array or None
        Trial vectors (n,) or (n, k) placed in the starting block.
    block : int
        Block size.
    tol : float
        Target for the relative residual ``|r| / |(A + lam M) x|``.
    value_tol, window : float, int
        The iteration also stops once the smallest Ritz value changed by less
        than ``value_tol`` (relative) over the last ``window`` steps.
    method : {"amg", "cg"}
        Approximate inverse by one multigrid cycle, or exact inverse by
        conjugate gradients at ``inner_tol``.
    time_limit : float or None
        Wall-clock cap in seconds, treated like the iteration cap.

    Returns
    -------
    SpectrumResult

    Raises
    ------
    NoConvergence
        When neither stopping rule fires within the caps.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    t0 = time.perf_counter()
    Al = (A + lam * M).tocsr() if lam else A.tocsr()
    K = K.tocsr()
    n = Al.shape[0]
    rng = substream(seed, "eigensolver-start")
    b = min(block, n)
    cols = [] if x0 is None else [np.asarray(x0, dtype=float).reshape(n, -1)]
    start = np.hstack(cols + [rng.standard_normal((n, b))])[:, :b] if cols else rng.standard_normal((n, b))
    X = _k_orthonormal(start, K)
    inv = _make_inverse(Al, method, inner_tol, rng)

    theta, Y = sla.eigh(X.T @ (Al @ X))
    X = X @ Y
    Pdir = None
    history = [float(theta[0])]
    res = math.inf
    for it in range(1, maxiter + 1):
        AX = Al @ X
        KX = K @ X
        R = AX - KX * theta
        res = float(np.linalg.norm(R[:, 0]) / np.linalg.norm(AX[:, 0]))
        if res <= tol:
            return _result(theta, lam, mesh, it - 1, res, "residual", t0, method, history, X if return_vectors else None)
        if len(history) > window and abs(history[-window - 1] - history[-1]) <= value_tol * abs(history[-1]):
            return _result(theta, lam, mesh, it - 1, res, "ritz_value", t0, method, history, X if return_vectors else None)
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            break
        W = inv(R)
        S = np.hstack([X, W] if Pdir is None else [X, W, Pdir])
        Q = _k_orthonormal(S, K)
        H = Q.T @ (Al @ Q)
        w, V = sla.eigh(0.5 * (H + H.T))
        Xn = Q @ V[:, : X.shape[1]]
        theta = w[: X.shape[1]]
        Pdir = Xn - X @ (X.T @ (K @ Xn))
        if np.linalg.norm(Pdir) == 0:
            Pdir = None
        X = Xn
        history.append(float(theta[0]))
    raise NoConvergence(
        "eigen-iteration hit its cap",
        {"kappa": float(theta[0]), "residual": res, "history": history, "iterations": len(history) - 1, "seconds": time.perf_counter() - t0},
    )


def _result(theta, lam, mesh, it, res, how, t0, method, history, vectors=None):
    return SpectrumResult(
        kappa=float(theta[0]),
        lam=float(lam),
        mesh=int(mesh),
        iterations=int(it),
        residual=res,
        converged_by=how,
        ritz=[float(t) for t in theta],
        seconds=time.perf_counter() - t0,
        method=method,
        history=history,
        vectors=vectors,
    )


def rayleigh_quotient(A, M, K, x, lam=0.0):
    x = np.asarray(x, dtype=float)
    return float((x @ (A @ x) + lam * (x @ (M @ x))) / (x @ (K @ x)))


def dense_min_eig(A, M, K, lam=0.0):
    """Reference value by a dense generalized eigensolve (small meshes only)."""
    Al = (A + lam * M).toarray() if sp.issparse(A) else A + lam * M
    Kd = K.toarray() if sp.issparse(K) else K
    return float(sla.eigh(Al, Kd, eigvals_only=True, subset_by_index=[0, 0])[0])
