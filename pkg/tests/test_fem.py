import io
import itertools

import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sym

from kornlab.analysis.cosserat import four_a_identity
from kornlab.analysis.fem import Mesh, assemble_forms, extend_by_zero, quadrature_energy, read_coo, write_coo
from kornlab.exceptions import SingularAssembly
from kornlab.geometry import Box
from kornlab.unimodular import UnimodularCounterexample

x, y, z = sym.symbols("x y z")
VARS = (x, y, z)


def sym_energies(u, pieces):
    """Exact ``int |sym Du|^2``, ``int |Du|^2`` and ``int (div u)^2`` over boxes."""
    Du = sym.Matrix([[sym.diff(ui, v) for v in VARS] for ui in u])
    S = (Du + Du.T) / 2
    out = [sym.Integer(0)] * 3
    for (a, b) in pieces:
        lims = [(v, a[i], b[i]) for i, v in enumerate(VARS)]
        for k, f in enumerate([sum(e ** 2 for e in S), sum(e ** 2 for e in Du), Du.trace() ** 2]):
            out[k] += sym.integrate(sym.expand(f), *lims)
    return out


@pytest.mark.parametrize(
    "u",
    [
        (x * (1 - x) * y * (1 - y) * z * (1 - z), 0, 0),
        (x * (1 - x) * y * (1 - y) * z * (1 - z) * (1 + 2 * y),
         x ** 2 * (1 - x) * y * (1 - y) * z * (1 - z),
         x * (1 - x) * y * (1 - y) * z * (1 - z) * (x - z)),
    ],
)
def test_divergence_identity_on_polynomials(u):
    sym_e, grad_e, div_e = sym_energies(u, [((0, 0, 0), (1, 1, 1))])
    assert sym.simplify(sym_e - grad_e / 2 - div_e / 2) == 0
    assert abs(float(sym_e) - 0.5 * float(grad_e) - 0.5 * float(div_e)) <= 1e-12 * float(grad_e)


def test_discrete_forms_satisfy_divergence_identity():
    A, M, K, D = assemble_forms(Mesh(None, 5), with_divergence=True)
    diff = A - 0.5 * K - 0.5 * D
    assert abs(diff).max() <= 1e-12 * abs(K).max()


def test_hat_function_energies_match_exact_integration():
    mesh = Mesh(None, 2)
    assert mesh.n_dofs == 3
    c = (sym.Rational(1), sym.Rational(2), sym.Rational(-1))
    pieces = []
    for corner in itertools.product((0, 1), repeat=3):
        a = tuple(sym.Rational(k, 2) for k in corner)
        pieces.append((a, tuple(v + sym.Rational(1, 2) for v in a)))
    energies = {"sym": 0, "grad": 0, "div": 0}
    for (a, b) in pieces:
        # on each octant the hat is the product of linear factors
        hat = sym.Integer(1)
        for i, v in enumerate(VARS):
            hat *= 2 * v if a[i] == 0 else 2 - 2 * v
        e = sym_energies(tuple(ci * hat for ci in c), [(a, b)])
        for k, name in enumerate(energies):
            energies[name] += e[k]
    A, M, K, D = assemble_forms(mesh, with_divergence=True)
    xv = np.array([float(t) for t in c])
    assert xv @ A @ xv == pytest.approx(float(energies["sym"]), rel=1e-12)
    assert xv @ K @ xv == pytest.approx(float(energies["grad"]), rel=1e-12)
    assert xv @ D @ xv == pytest.approx(float(energies["div"]), rel=1e-12)


def test_forms_are_positive():
    A, M, K = assemble_forms(Mesh(None, 2))
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.standard_normal(A.shape[0])
        assert v @ A @ v >= 0
        assert v @ K @ v > 0
        assert v @ M @ v > 0
    for Mx in (A, M, K):
        assert abs(Mx - Mx.T).max() <= 1e-14


def test_construction_coefficient_assembly_is_semidefinite():
    model = UnimodularCounterexample(n=2, eps=1e-3).fit()
    mesh = Mesh(None, 16)
    A, M, K = assemble_forms(mesh, P=lambda X: model.evaluate(X).P)
    rng = np.random.default_rng(1)
    V = rng.standard_normal((A.shape[0], 30))
    quad = np.einsum("ij,ij->j", V, A @ V)
    assert np.all(quad >= -1e-12 * np.einsum("ij,ij->j", V, K @ V))


def test_no_interior_nodes_is_singular():
    with pytest.raises(SingularAssembly):
        assemble_forms(Mesh(None, 1))


def test_mesh_counts():
    mesh = Mesh(Box((0, 0, 0), (2, 1, 1)), (4, 3, 2))
    assert mesh.n_cells == 24
    assert mesh.n_free_nodes == 3 * 2 * 1
    assert mesh.n_dofs == 18
    assert np.all(mesh.cell_dofs.max(axis=1) < mesh.n_dofs)
    X = mesh.node_coordinates()
    assert np.all((X > 0) & (X < np.array([2, 1, 1])))


def test_quadrature_energy_matches_matrix():
    mesh = Mesh(None, 4)
    A, M, K = assemble_forms(mesh)
    u = np.random.default_rng(2).standard_normal(mesh.n_dofs)
    e = quadrature_energy(mesh, u, lambda Du, X: np.sum(Du * Du, axis=(1, 2)))
    assert e == pytest.approx(u @ K @ u, rel=1e-12)


def test_four_a_identity_on_finite_element_field():
    mesh = Mesh(None, 4)
    Rfix = np.array([[0.36, 0.48, -0.8], [-0.8, 0.6, 0.0], [0.48, 0.64, 0.6]])
    A, M, K = assemble_forms(mesh, P=lambda X: np.broadcast_to(Rfix.T, (len(X), 3, 3)))
    u = np.random.default_rng(3).standard_normal(mesh.n_dofs)
    X, w, N, dN = mesh.quadrature()
    grads = []
    quadrature_energy(mesh, u, lambda Du, X: grads.append(Du) or np.zeros(len(Du)))
    Du = grads[0]
    R = np.broadcast_to(Rfix, Du.shape)
    weights = np.tile(w, mesh.n_cells)
    lhs, rhs = four_a_identity(Du, R, weights)
    assert lhs == pytest.approx(rhs, rel=1e-10)
    # and both equal four times the assembled form with P = Rbar^T
    assert lhs == pytest.approx(4 * (u @ A @ u), rel=1e-10)


def test_coo_round_trip():
    A, _, _ = assemble_forms(Mesh(None, 3))
    buf = io.StringIO()
    write_coo(A, buf)
    buf.seek(0)
    B = read_coo(buf)
    assert B.shape == A.shape
    assert abs(A - B).max() == 0.0


def test_coo_empty_matrix(tmp_path):
    path = tmp_path / "empty.coo"
    write_coo(sp.csr_matrix((3, 3)), path)
    assert read_coo(path).nnz == 0


def test_zero_extension_preserves_energy():
    small, big = Mesh(Box((0, 0, 0), (1, 1, 1)), 3), Mesh(Box((0, 0, 0), (2, 2, 2)), 6)
    u = np.random.default_rng(4).standard_normal(small.n_dofs)
    v = extend_by_zero(small, big, u)
    _, _, Ks = assemble_forms(small)
    _, _, Kb = assemble_forms(big)
    # same cell size, so the extended field carries the same gradient energy
    assert v @ Kb @ v == pytest.approx(u @ Ks @ u, rel=1e-12)
    with pytest.raises(ValueError):
        extend_by_zero(big, small, v)
