"""
Trilinear hexahedral finite elements for vector fields with zero boundary values.

The three quadratic forms ``a_P(u, u) = int |sym(Du P)|^2``, ``int |u|^2`` and
``int |Du|^2`` are assembled on a uniform grid of a box.  ``P`` is sampled at
the Gauss points, so a discontinuous coefficient is integrated by sampling
rather than resolved exactly.
"""

import numpy as np
import scipy.sparse as sp

from kornlab.exceptions import SingularAssembly
from kornlab.geometry import Box

# local node (a, b, c) in {0, 1}^3, lexicographic
_LOCAL = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])


def _sym_operator():
    """9x9 matrix sending vec(F) to vec((F + F^T) / 2), row-major vec."""
    S = np.zeros((9, 9))
    for i in range(3):
        for k in range(3):
            S[3 * i + k, 3 * i + k] += 0.5
            S[3 * i + k, 3 * k + i] += 0.5
    return S


SYM = _sym_operator()
TRACE = np.eye(3).reshape(1, 9)


class Mesh:
    """Uniform ``m^3`` hexahedral grid on a box with constrained boundary nodes.

    Parameters
    ----------
    box : Box
        Domain.
    m : int or tuple of int
        Cells per axis.
    """

    def __init__(self, box=None, m=8):
        self.box = box if box is not None else Box.unit()
        m = (int(m),) * 3 if np.isscalar(m) else tuple(int(k) for k in m)
        if min(m) < 1:
            raise ValueError("mesh needs at least one cell per axis")
        self.shape = m
        self.h = self.box.sides / np.array(m)
        nodes = np.array(m) + 1
        self.n_nodes = int(np.prod(nodes))
        self.n_cells = int(np.prod(m))

        # interior node numbering; boundary nodes map to -1
        a, b, c = np.meshgrid(*(np.arange(k) for k in nodes), indexing="ij")
        interior = (a > 0) & (a < m[0]) & (b > 0) & (b < m[1]) & (c > 0) & (c < m[2])
        self._node_map = np.full(nodes, -1, dtype=np.int64)
        self._node_map[interior] = np.arange(int(interior.sum()))
        self.n_free_nodes = int(interior.sum())
        self.n_dofs = 3 * self.n_free_nodes

        ci, cj, ck = np.meshgrid(*(np.arange(k) for k in m), indexing="ij")
        corners = np.stack([ci.ravel(), cj.ravel(), ck.ravel()], axis=1)
        self.cell_lo = corners
        idx = corners[:, None, :] + _LOCAL[None, :, :]
        nodes_e = self._node_map[idx[..., 0], idx[..., 1], idx[..., 2]]
        dofs = 3 * nodes_e[:, :, None] + np.arange(3)
        dofs[nodes_e < 0] = -1
        self.cell_dofs = dofs.reshape(self.n_cells, 24)

    def node_coordinates(self):
        """Coordinates of the free nodes, in dof order."""
        nodes = np.array(self.shape) + 1
        a, b, c = np.meshgrid(*(np.arange(k) for k in nodes), indexing="ij")
        free = self._node_map >= 0
        ijk = np.stack([a[free], b[free], c[free]], axis=1)
        order = np.argsort(self._node_map[free])
        return self.box.lo + ijk[order] * self.h

    def quadrature(self, order=2):
        """Gauss points (n_cells * g, 3), weights (g,), shape values and gradients."""
        t, w = np.polynomial.legendre.leggauss(order)
        t = 0.5 * (t + 1.0)
        w = 0.5 * w
        pts = np.array([(x, y, z) for x in t for y in t for z in t])
        wts = np.array([wx * wy * wz for wx in w for wy in w for wz in w]) * np.prod(self.h)
        # N_a(xi) = prod_d (1 - xi_d) or xi_d
        f = np.where(_LOCAL[None, :, :] == 1, pts[:, None, :], 1.0 - pts[:, None, :])
        N = np.prod(f, axis=2)
        dN = np.empty((len(pts), 8, 3))
        sign = np.where(_LOCAL == 1, 1.0, -1.0)
        for d in range(3):
            others = [e for e in range(3) if e != d]
            dN[:, :, d] = sign[None, :, d] * f[:, :, others[0]] * f[:, :, others[1]] / self.h[d]
        X = self.box.lo + (self.cell_lo[:, None, :] + pts[None, :, :]) * self.h
        return X.reshape(-1, 3), wts, N, dN

    def interpolate(self, field):
        """Nodal interpolant of a vector field at the free nodes (dof vector)."""
        X = self.node_coordinates()
        return np.asarray(field(X), dtype=float).reshape(-1)


def _gradient_operator(dN):
    """B[g] with vec(Du) = B[g] @ u_e, element dof order 3 * node + component."""
    g = dN.shape[0]
    B = np.zeros((g, 9, 24))
    for i in range(3):
        for j in range(3):
            B[:, 3 * i + j, i::3] = dN[:, :, j]
    return B


def _scatter(mesh, Ke):
    dofs = mesh.cell_dofs
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    data = Ke.reshape(len(dofs), -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    A = sp.coo_matrix((data[keep], (rows[keep], cols[keep])), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    A.sum_duplicates()
    return A


def assemble_forms(mesh, P=None, order=2, with_divergence=False):
    """Assemble ``(A_P, M, K)`` on the free dofs.

    Parameters
    ----------
    mesh : Mesh
    P : callable or None
        Maps points (N, 3) to matrices (N, 3, 3); ``None`` is the identity.
    order : int
        Gauss points per axis.
    with_divergence : bool
        Also return ``D`` from ``int (div u)^2``.

    Raises
    ------
    SingularAssembly
        If there are no free dofs or ``K`` has a zero diagonal entry.
    """
    if mesh.n_dofs == 0:
        raise SingularAssembly("mesh has no interior nodes")
    X, w, N, dN = mesh.quadrature(order)
    g = len(w)
    B = _gradient_operator(dN)
    E = mesh.n_cells

    if P is None:
        T = np.broadcast_to(SYM, (E, g, 9, 9))
    else:
        Pq = np.asarray(P(X), dtype=float).reshape(E, g, 3, 3)
        # vec(F P) = kron(I, P^T) vec(F)
        right = np.einsum("ab,egjk->egakbj", np.eye(3), Pq).reshape(E, g, 9, 9)
        T = SYM @ right
    C = np.einsum("egki,egkj->egij", T, T) * w[None, :, None, None]
    CB = np.einsum("egij,gjb->egib", C, B)
    Ae = np.einsum("gia,egib->eab", B, CB)

    Kl = np.einsum("g,gia,gib->ab", w, B, B)
    Ml = np.zeros((24, 24))
    NN = np.einsum("g,ga,gb->ab", w, N, N)
    for i in range(3):
        Ml[i::3, i::3] = NN

    A_P = _scatter(mesh, Ae)
    K = _scatter(mesh, np.broadcast_to(Kl, (E, 24, 24)))
    M = _scatter(mesh, np.broadcast_to(Ml, (E, 24, 24)))
    if np.any(K.diagonal() <= 0):
        raise SingularAssembly("gradient form has a zero diagonal entry")
    if with_divergence:
        Dl = np.einsum("g,gia,ij,gjb->ab", w, B, TRACE.T @ TRACE, B)
        return A_P, M, K, _scatter(mesh, np.broadcast_to(Dl, (E, 24, 24)))
    return A_P, M, K


def quadrature_energy(mesh, u_dofs, integrand, order=2):
    """``sum_g w_g f(Du(x_g), x_g)`` for the discrete field ``u_dofs``.

    ``integrand(Du, X)`` receives gradients (N, 3, 3) and points (N, 3).
    """
    X, w, N, dN = mesh.quadrature(order)
    B = _gradient_operator(dN)
    ue = np.where(mesh.cell_dofs >= 0, np.asarray(u_dofs)[np.maximum(mesh.cell_dofs, 0)], 0.0)
    Du = np.einsum("gia,ea->egi", B, ue).reshape(-1, 3, 3)
    vals = np.asarray(integrand(Du, X)).reshape(mesh.n_cells, len(w))
    return float(np.sum(vals * w[None, :]))


def write_coo(matrix, path_or_file):
    """Write a sparse matrix as ``row col value`` lines preceded by ``nrows ncols nnz``."""
    A = sp.coo_matrix(matrix)
    order = np.lexsort((A.col, A.row))
    lines = [f"{A.shape[0]} {A.shape[1]} {A.nnz}"]
    lines += [f"{r} {c} {v!r}" for r, c, v in zip(A.row[order], A.col[order], A.data[order].tolist())]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def read_coo(path_or_file):
    fh = path_or_file if hasattr(path_or_file, "read") else open(path_or_file)
    try:
        n, m, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    finally:
        if fh is not path_or_file:
            fh.close()
    if data.size == 0:
        return sp.csr_matrix((n, m))
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, m)).tocsr()


def extend_by_zero(src, dst, x):
    """Copy nodal values from ``src`` onto the same node indices of ``dst``.

    With both meshes sharing the lower corner and ``src.shape <= dst.shape``
    this is the zero extension of a field after rescaling the domain, and the
    free nodes of ``src`` stay free in ``dst``.
    """
    x = np.asarray(x, dtype=float).reshape(src.n_free_nodes, 3, -1)
    out = np.zeros((dst.n_free_nodes, 3, x.shape[2]))
    free = np.argwhere(src._node_map >= 0)
    if np.any(free >= np.array(dst.shape)):
        raise ValueError("source mesh does not fit inside the target mesh")
    out[dst._node_map[tuple(free.T)]] = x[src._node_map[tuple(free.T)]]
    return out.reshape(dst.n_dofs, -1).squeeze()
