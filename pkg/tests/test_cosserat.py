import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from kornlab.analysis.cosserat import cosserat_energy, lattice_points, row_curl
from kornlab.exceptions import InvalidRotationField

SHAPE = (7, 7, 7)
H = (1 / 6, 1 / 6, 1 / 6)


def test_identity_configuration_has_zero_energy():
    X = lattice_points(SHAPE, H)
    assert cosserat_energy(X, np.broadcast_to(np.eye(3), SHAPE + (3, 3))) == 0.0


@pytest.mark.parametrize("Rc", [np.eye(3), Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()])
def test_affine_field_closed_form(Rc):
    A = np.array([[0.01, 0.02, 0.0], [0.0, -0.01, 0.03], [0.02, 0.0, 0.005]])
    X = lattice_points(SHAPE, H)
    phi = X + X @ A.T
    mu, lam = 1.3, 0.7
    E = Rc.T @ (np.eye(3) + A) - np.eye(3)
    S = 0.5 * (E + E.T)
    W = mu * np.sum(S * S) + 0.5 * lam * np.trace(S) ** 2
    got = cosserat_energy(phi, np.broadcast_to(Rc, SHAPE + (3, 3)), mu_e=mu, lambda_e=lam)
    # constant Rbar has no curvature and the unit cube has volume one
    assert got == pytest.approx(W, rel=1e-12)


def test_rigid_rotation_invariance():
    X = lattice_points(SHAPE, H)
    rotvec = 0.3 * np.stack([np.sin(X[..., 1]), X[..., 0] * X[..., 2], np.cos(2 * X[..., 0])], axis=-1)
    R = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(SHAPE + (3, 3))
    phi = X + 0.1 * np.sin(np.pi * X[..., [2, 0, 1]])
    e0 = cosserat_energy(phi, R, L_c=0.5, q_c=3.0)
    for Q in Rotation.random(10, random_state=1).as_matrix():
        e = cosserat_energy(phi @ Q.T, Q @ R, L_c=0.5, q_c=3.0)
        assert abs(e - e0) <= 1e-10 * e0


def test_curl_of_linear_rows():
    X = lattice_points(SHAPE, H)
    # rows (0, 0, y), (z, 0, 0), (0, x, 0): curls (1, 0, 0), (0, 1, 0), (0, 0, 1)
    F = np.zeros(SHAPE + (3, 3))
    F[..., 0, 2] = X[..., 1]
    F[..., 1, 0] = X[..., 2]
    F[..., 2, 1] = X[..., 0]
    C = row_curl(F, H)
    assert np.allclose(C, np.eye(3), atol=1e-12)


def test_rejects_non_rotations():
    X = lattice_points(SHAPE, H)
    with pytest.raises(InvalidRotationField):
        cosserat_energy(X, np.broadcast_to(2 * np.eye(3), SHAPE + (3, 3)))


@pytest.mark.parametrize("mu,lam", [(0.0, 1.0), (1.0, -1.0)])
def test_rejects_bad_moduli(mu, lam):
    X = lattice_points(SHAPE, H)
    with pytest.raises(ValueError):
        cosserat_energy(X, np.broadcast_to(np.eye(3), SHAPE + (3, 3)), mu_e=mu, lambda_e=lam)
