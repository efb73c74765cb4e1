"""
Energy of the geometrically exact Cosserat model on a sample lattice.

``W = mu_e |sym(Rbar^T Dphi - 1)|^2 + lambda_e / 2 tr(sym(Rbar^T Dphi - 1))^2``
plus the curvature term
``mu_e (L_c^2 / 2 |Curl Rbar|^2 + L_c^{q_c} / q_c |Curl Rbar|^{q_c})``.
Derivatives are finite differences on the lattice (central inside,
one-sided on the boundary) and the integral is the product trapezoid rule.
"""

import numpy as np

from kornlab.exceptions import InvalidRotationField


def lattice_points(shape, spacing, lo=(0.0, 0.0, 0.0)):
    """Points of a regular lattice, shape ``shape + (3,)``."""
    axes = [lo[d] + spacing[d] * np.arange(shape[d]) for d in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def trapezoid_weights(shape, spacing):
    w = [np.full(n, h) for n, h in zip(shape, spacing)]
    for v in w:
        v[[0, -1]] *= 0.5
    return w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :]


def lattice_gradient(F, spacing):
    """``D F`` with derivative index last: (..., 3) -> (..., 3, 3)."""
    return np.stack(np.gradient(F, *spacing, axis=(0, 1, 2)), axis=-1)


def row_curl(R, spacing):
    """Curl of each row of a matrix field (n1, n2, n3, 3, 3)."""
    D = lattice_gradient(R, spacing)  # D[..., i, j, k] = d_k R_ij
    C = np.empty_like(R)
    C[..., 0] = D[..., 2, 1] - D[..., 1, 2]
    C[..., 1] = D[..., 0, 2] - D[..., 2, 0]
    C[..., 2] = D[..., 1, 0] - D[..., 0, 1]
    return C


def check_rotations(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    eye = np.eye(3)
    orth = np.max(np.abs(np.einsum("...ji,...jk->...ik", R, R) - eye))
    det = np.max(np.abs(np.linalg.det(R) - 1.0))
    if not (orth <= tol and det <= tol):
        raise InvalidRotationField(f"rotation field off SO(3): orthogonality {orth:.2e}, det {det:.2e}")


def cosserat_energy(phi, Rbar, spacing=None, mu_e=1.0, lambda_e=1.0, L_c=1.0, q_c=2.0, lo=(0.0, 0.0, 0.0)):
    """Elastic plus curvature energy of ``(phi, Rbar)`` sampled on a lattice.

    Parameters
    ----------
    phi : array (n1, n2, n3, 3)
        Deformation at the lattice points.
    Rbar : array (n1, n2, n3, 3, 3)
        Microrotation at the lattice points.
    spacing : tuple of float
        Lattice spacing; defaults to a unit-cube lattice.
    lo : tuple of float
        Lattice origin; the strain is formed against the identity map there.

    Raises
    ------
    InvalidRotationField
        If ``Rbar`` leaves SO(3) by more than 1e-9.
    ValueError
        If the moduli violate ``mu_e > 0`` and ``3 lambda_e + 2 mu_e > 0``.
    """
    phi = np.asarray(phi, dtype=float)
    Rbar = np.asarray(Rbar, dtype=float)
    shape = phi.shape[:3]
    if spacing is None:
        spacing = tuple(1.0 / (n - 1) for n in shape)
    if not (mu_e > 0 and 3 * lambda_e + 2 * mu_e > 0):
        raise ValueError("moduli must satisfy mu_e > 0 and 3 lambda_e + 2 mu_e > 0")
    check_rotations(Rbar)
    # Rbar^T Dphi - 1 = Rbar^T D(phi - id) + (Rbar^T - 1), exact zero at the identity
    disp = phi - lattice_points(shape, spacing, lo)
    Du = lattice_gradient(disp, spacing)
    Rt = np.swapaxes(Rbar, -1, -2)
    E = Rt @ Du + (Rt - np.eye(3))
    S = 0.5 * (E + np.swapaxes(E, -1, -2))
    tr = np.trace(S, axis1=-2, axis2=-1)
    W = mu_e * np.sum(S * S, axis=(-2, -1)) + 0.5 * lambda_e * tr**2
    c = np.sqrt(np.sum(row_curl(Rbar, spacing) ** 2, axis=(-2, -1)))
    W_curv = mu_e * (0.5 * L_c**2 * c**2 + L_c**q_c / q_c * c**q_c)
    return float(np.sum(trapezoid_weights(shape, spacing) * (W + W_curv)))


def four_a_identity(Dphi, Rbar, weights):
    """Both sides of ``int |Rbar^T Dphi + Dphi^T Rbar|^2 = 4 int |sym(Dphi Rbar^T)|^2``.

    Inputs are samples at quadrature points with their weights.
    """
    Rt = np.swapaxes(Rbar, -1, -2)
    L = Rt @ Dphi
    lhs = np.sum(weights * np.sum((L + np.swapaxes(L, -1, -2)) ** 2, axis=(-2, -1)))
    F = Dphi @ Rt
    S = 0.5 * (F + np.swapaxes(F, -1, -2))
    rhs = 4.0 * np.sum(weights * np.sum(S * S, axis=(-2, -1)))
    return float(lhs), float(rhs)
