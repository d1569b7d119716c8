"""Q4 plane-stress finite element analysis on a regular grid.

The stiffness matrix is assembled from six base element matrices, one per
lower-triangle entry of the symmetric constitutive matrix, so that any
element-wise anisotropic material enters the assembly as a plain linear
combination.  Supports are realised through a penalty coupling matrix plus
a single fixed dof; the reduced system is solved with a sparse direct
factorisation.

Conventions: nodes and elements are counted y-major (index runs fastest
along y), local element nodes are ordered (0,0), (h,0), (h,h), (0,h) with
dofs [u1, v1, ..., u4, v4].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rank2

_GAUSS = 1.0 / np.sqrt(3.0)
_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


def _bmat(xi, eta, h):
    """Strain-displacement matrix (3x8) of the square Q4 element at (xi, eta)."""
    dN_dxi = 0.25 * _CORNERS[:, 0] * (1.0 + eta * _CORNERS[:, 1])
    dN_deta = 0.25 * _CORNERS[:, 1] * (1.0 + xi * _CORNERS[:, 0])
    dN_dx = dN_dxi * 2.0 / h
    dN_dy = dN_deta * 2.0 / h
    B = np.zeros((3, 8))
    B[0, 0::2] = dN_dx
    B[1, 1::2] = dN_dy
    B[2, 0::2] = dN_dy
    B[2, 1::2] = dN_dx
    return B


def element_base_matrices(h_c=1.0):
    """Six 8x8 base matrices KE0 with KE(C) = sum_k C_k * KE0[k].

    C_k runs over the lower triangle (11, 21, 31, 22, 32, 33); 2x2 Gauss
    quadrature is exact for the bilinear element.  The result is
    independent of h_c for unit thickness (2D scale invariance).
    """
    if not h_c > 0.0:
        raise ValueError("h_c must be positive")
    KE0 = np.zeros((6, 8, 8))
    for k, (i, j) in enumerate(zip(rank2.LOWER_TRI_ROWS, rank2.LOWER_TRI_COLS)):
        Ek = np.zeros((3, 3))
        Ek[i, j] = Ek[j, i] = 1.0
        acc = np.zeros((8, 8))
        for xi in (-_GAUSS, _GAUSS):
            for eta in (-_GAUSS, _GAUSS):
                B = _bmat(xi, eta, h_c)
                acc += B.T @ Ek @ B * (h_c**2 / 4.0)
        KE0[k] = acc
    return KE0


@dataclass
class FEModel:
    """Mesh topology, loads and boundary conditions of one analysis grid."""

    nelX: int
    nelY: int
    h: float
    edofMat: np.ndarray          # (Ne, 8) global dof indices
    F: np.ndarray                # (numDof,) load vector, sum(|F|) == 1
    Kp: sp.csr_matrix            # penalty coupling pattern, base weight included
    fixedDofs: np.ndarray        # dofs eliminated from the system
    KE0: np.ndarray = field(default_factory=element_base_matrices)

    def __post_init__(self):
        self.numDof = 2 * (self.nelX + 1) * (self.nelY + 1)
        self.numElm = self.nelX * self.nelY
        free = np.ones(self.numDof, dtype=bool)
        free[self.fixedDofs] = False
        self.freeDofs = np.flatnonzero(free)
        self._iK = None
        self._jK = None

    def assemble(self, C6):
        """Global stiffness from per-element constitutive triangles (Ne, 6)."""
        if self._iK is None:
            self._iK = np.repeat(self.edofMat, 8, axis=1).ravel().astype(np.int32)
            self._jK = np.tile(self.edofMat, (1, 8)).ravel().astype(np.int32)
        KE = np.einsum("ek,kab->eab", np.asarray(C6), self.KE0)
        K = sp.coo_matrix(
            (KE.ravel(), (self._iK, self._jK)), shape=(self.numDof, self.numDof)
        ).tocsc()
        return K


def node_grid(nelX, nelY):
    """Node index array of shape (nelY+1, nelX+1), y-major numbering."""
    return (np.arange(nelX + 1)[None, :] * (nelY + 1)) + np.arange(nelY + 1)[:, None]


def build_edof(nelX, nelY):
    """Element dof matrix (Ne, 8), elements counted y-major."""
    nodes = node_grid(nelX, nelY)
    n1 = nodes[:-1, :-1].ravel(order="F")
    n2 = nodes[:-1, 1:].ravel(order="F")
    n3 = nodes[1:, 1:].ravel(order="F")
    n4 = nodes[1:, :-1].ravel(order="F")
    edof = np.empty((nelX * nelY, 8), dtype=np.int64)
    for i, n in enumerate((n1, n2, n3, n4)):
        edof[:, 2 * i] = 2 * n
        edof[:, 2 * i + 1] = 2 * n + 1
    return edof


def _amg_cg(K, f):
    """Algebraic-multigrid preconditioned CG for large systems."""
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(K.tocsr())
    x, info = spla.cg(K, f, rtol=1e-10, maxiter=2000, M=ml.aspreconditioner())
    if info != 0:
        raise RuntimeError("iterative solve did not converge")
    return x


def _solve_spd(K, f):
    """Sparse solve of an SPD system: direct factorisation with iterative
    refinement for moderate sizes, AMG-preconditioned CG for large ones
    (the direct factor would not fit in memory)."""
    if K.shape[0] > 600_000:
        return _amg_cg(K, f)
    try:
        lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        x = lu.solve(f)
        if K.shape[0] <= 200_000:
            # extended-precision residuals push the forward error down to
            # working precision even when the penalty supports make the
            # system ill-conditioned (plain refinement stalls at eps*cond)
            Kl = K.astype(np.longdouble)
            fl = f.astype(np.longdouble)
            for _ in range(3):
                r = np.asarray(fl - Kl @ x.astype(np.longdouble), dtype=float)
                x = x + lu.solve(r)
        else:
            x += lu.solve(f - K @ x)
        return x
    except MemoryError:
        return _amg_cg(K, f)


def assemble_solve(model: FEModel, C6):
    """Solve K(C) u = F with penalty supports; returns the full dof vector."""
    K = model.assemble(C6)
    K = K + model.Kp * K.diagonal().max()
    free = model.freeDofs
    U = np.zeros(model.numDof)
    U[free] = _solve_spd(K[free][:, free], model.F[free])
    return U


def assemble_solve_subset(model: FEModel, C6, elems):
    """Solve K u = F assembling only the listed elements.

    Intended for solid-void fields at fine resolution: the near-void
    background would contribute nothing but memory and conditioning
    trouble, so dofs touched by no listed element are simply held at zero.
    """
    elems = np.asarray(elems)
    edof = model.edofMat[elems]
    KE = np.einsum("ek,kab->eab", np.asarray(C6)[elems], model.KE0)
    iK = np.repeat(edof, 8, axis=1).ravel().astype(np.int32)
    jK = np.tile(edof, (1, 8)).ravel().astype(np.int32)
    K = sp.coo_matrix(
        (KE.ravel(), (iK, jK)), shape=(model.numDof, model.numDof)
    ).tocsr()
    del KE, iK, jK
    K = K + model.Kp * K.diagonal().max()
    keep = np.zeros(model.numDof, dtype=bool)
    keep[edof.ravel()] = True
    keep[model.fixedDofs] = False
    kd = np.flatnonzero(keep)
    U = np.zeros(model.numDof)
    U[kd] = _solve_spd(K[kd][:, kd].tocsc(), model.F[kd])
    return U


def compliance(F, U):
    """Load-displacement inner product."""
    return float(np.dot(F, U))


def element_strains(model: FEModel, U):
    """Strains (Ne, 3) evaluated at element midpoints."""
    B0 = _bmat(0.0, 0.0, model.h)
    return U[model.edofMat] @ B0.T


def strain_energy_density(model: FEModel, C6, U):
    """Per-element strain energy density 0.5 * eps' C eps at the midpoint."""
    eps = element_strains(model, U)
    sig = np.einsum("eij,ej->ei", rank2.full_from_tri(C6), eps)
    return 0.5 * np.sum(sig * eps, axis=1)


def principal_directions(model: FEModel, C6, U):
    """First principal stress angle per element; negatives shifted by +pi.

    Degenerate (hydrostatic) stress states return angle 0 before the shift.
    """
    eps = element_strains(model, U)
    sig = np.einsum("eij,ej->ei", rank2.full_from_tri(C6), eps)
    a = 0.5 * np.arctan2(2.0 * sig[:, 2], sig[:, 0] - sig[:, 1])
    a[a < 0.0] += np.pi
    return a
