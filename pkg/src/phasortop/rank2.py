"""Rank-2 laminate material model.

Element-wise constitutive matrices for a plane-stress Rank-2 laminate with
an isotropic background stiffness, the rotation to a global frame, and the
map between single-scale relative layer widths and the multi-scale widths
entering the constitutive law.  All operations are vectorised over elements
and return analytic derivatives alongside the values.

Symmetric 3x3 matrices are passed around as their six lower-triangle
entries in the order (11, 21, 31, 22, 32, 33).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOWER_TRI_ROWS = np.array([0, 1, 2, 1, 2, 2])
LOWER_TRI_COLS = np.array([0, 0, 0, 1, 1, 2])


@dataclass(frozen=True)
class MaterialConstants:
    """Solid/background moduli and Poisson ratio shared by both phases."""

    E: float = 1.0
    E_min: float = 1e-9
    nu: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.E > self.E_min > 0.0:
            raise ValueError("require E > E_min > 0")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("require 0 <= nu < 0.5")


def rho_n(widths):
    """Relative density 1 - prod(1 - w_i) of a laminate with the given widths.

    ``widths`` is a sequence of arrays (or scalars), one per layer.
    """
    out = None
    for w in widths:
        w = np.asarray(w, dtype=float)
        out = (1.0 - w) if out is None else out * (1.0 - w)
    return 1.0 - out


def mu_from_w(w1, w2):
    """Map single-scale widths to multi-scale widths with the 2x2 Jacobian.

    Returns ``(mu1, mu2, dmu)`` where ``dmu[i][j]`` is d(mu_{i+1})/d(w_{j+1}).
    The map preserves the relative density: rho_n((mu1, mu2)) equals
    rho_n((w1, w2)).  Zero total width maps to zero with zero derivatives.
    """
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    wsum = w1 + w2
    rho = w1 + w2 - w1 * w2

    ok = wsum > 0.0
    safe = np.where(ok, wsum, 1.0)
    mu1 = np.where(ok, w1 * rho / safe, 0.0)

    drho1 = 1.0 - w2
    drho2 = 1.0 - w1
    # d(w1*rho/wsum)
    dmu1_1 = np.where(ok, (rho + w1 * drho1) / safe - w1 * rho / safe**2, 0.0)
    dmu1_2 = np.where(ok, w1 * drho2 / safe - w1 * rho / safe**2, 0.0)

    # mu2 = (rho - mu1)/(1 - mu1); at mu1 -> 1 continue with mu2 = w2
    denom = 1.0 - mu1
    full = denom <= 1e-12
    denom = np.where(full, 1.0, denom)
    mu2 = np.where(ok, np.where(full, w2, (rho - mu1) / denom), 0.0)
    dmu2_1 = np.where(ok & ~full, (drho1 * denom - dmu1_1 * (1.0 - rho)) / denom**2, 0.0)
    dmu2_2 = np.where(ok & ~full, (drho2 * denom - dmu1_2 * (1.0 - rho)) / denom**2, 0.0)
    dmu1_1 = np.where(full, 0.0, dmu1_1)
    dmu1_2 = np.where(full, 0.0, dmu1_2)

    return mu1, mu2, ((dmu1_1, dmu1_2), (dmu2_1, dmu2_2))


def isotropic_constitutive(E, nu):
    """Plane-stress isotropic constitutive matrix as a dense 3x3 array."""
    return E / (1.0 - nu**2) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    )


def tri_from_full(C):
    """Extract lower triangles (..., 3, 3) -> (..., 6)."""
    return C[..., LOWER_TRI_ROWS, LOWER_TRI_COLS]


def full_from_tri(C6):
    """Rebuild symmetric (..., 3, 3) matrices from lower triangles (..., 6)."""
    C6 = np.asarray(C6)
    C = np.zeros(C6.shape[:-1] + (3, 3))
    C[..., LOWER_TRI_ROWS, LOWER_TRI_COLS] = C6
    C[..., LOWER_TRI_COLS, LOWER_TRI_ROWS] = C6
    return C


def _rotation(a):
    """Basis-transformation matrices T(a) and dT/da, shape (..., 3, 3)."""
    c, s = np.cos(a), np.sin(a)
    c2, s2, cs = c * c, s * s, c * s
    T = np.stack(
        [
            np.stack([c2, s2, cs], axis=-1),
            np.stack([s2, c2, -cs], axis=-1),
            np.stack([-2 * cs, 2 * cs, c2 - s2], axis=-1),
        ],
        axis=-2,
    )
    dc2, ds2, dcs = -2 * cs, 2 * cs, c2 - s2
    dT = np.stack(
        [
            np.stack([dc2, ds2, dcs], axis=-1),
            np.stack([ds2, dc2, -dcs], axis=-1),
            np.stack([-2 * dcs, 2 * dcs, dc2 - ds2], axis=-1),
        ],
        axis=-2,
    )
    return T, dT


def constitutive_rank2(mu1, mu2, a, constants: MaterialConstants = MaterialConstants()):
    """Rotated Rank-2 constitutive lower triangles and their derivatives.

    Returns ``(CT, dCT_dmu1, dCT_dmu2, dCT_da)``, each of shape (..., 6).
    The unrotated matrix combines the laminate contribution with an
    isotropic background of modulus ``E_min`` keeping the matrix positive
    definite for vanishing widths.
    """
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    a = np.asarray(a, dtype=float)
    E, EMin, nu = constants.E, constants.E_min, constants.nu

    shape = np.broadcast_shapes(mu1.shape, mu2.shape, a.shape)
    C = np.zeros(shape + (3, 3))
    dC1 = np.zeros_like(C)
    dC2 = np.zeros_like(C)

    D = 1.0 - mu2 + mu1 * mu2 * (1.0 - nu**2)
    dD1 = mu2 * (1.0 - nu**2)
    dD2 = -1.0 + mu1 * (1.0 - nu**2)

    # laminate numerators
    n11 = mu1
    n12 = mu1 * mu2 * nu
    n22 = mu2 * (1.0 - mu2 + mu1 * mu2)

    def _fill(M, v11, v12, v22):
        M[..., 0, 0] = v11
        M[..., 0, 1] = M[..., 1, 0] = v12
        M[..., 1, 1] = v22

    _fill(C, E * n11 / D, E * n12 / D, E * n22 / D)
    C[..., 0, 0] += EMin / (1.0 - nu**2)
    C[..., 1, 1] += EMin / (1.0 - nu**2)
    C[..., 0, 1] += EMin * nu / (1.0 - nu**2)
    C[..., 1, 0] += EMin * nu / (1.0 - nu**2)
    C[..., 2, 2] = EMin * (1.0 - nu) / (2.0 * (1.0 - nu**2))

    # quotient rule for the laminate term
    _fill(
        dC1,
        E * (1.0 * D - n11 * dD1) / D**2,
        E * (mu2 * nu * D - n12 * dD1) / D**2,
        E * (mu2**2 * D - n22 * dD1) / D**2,
    )
    _fill(
        dC2,
        E * (-n11 * dD2) / D**2,
        E * (mu1 * nu * D - n12 * dD2) / D**2,
        E * ((1.0 - 2.0 * mu2 + 2.0 * mu1 * mu2) * D - n22 * dD2) / D**2,
    )

    T, dT = _rotation(a)
    Tt = np.swapaxes(T, -1, -2)
    dTt = np.swapaxes(dT, -1, -2)

    CT = Tt @ C @ T
    dCT1 = Tt @ dC1 @ T
    dCT2 = Tt @ dC2 @ T
    dCTa = dTt @ C @ T + Tt @ C @ dT

    return tri_from_full(CT), tri_from_full(dCT1), tri_from_full(dCT2), tri_from_full(dCTa)
