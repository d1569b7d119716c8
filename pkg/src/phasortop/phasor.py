"""Phasor-noise machinery: kernels, orientation correction, phase alignment
and filtered complex-field sampling.

Each coarse element with intermediate density carries a phasor kernel: a
Gaussian-windowed plane wave with a position, unit normal, frequency and
phase shift.  Summing the kernels yields a complex field whose argument is
a sawtooth wave following the orientation field; thresholding its
triangular conversion at the local layer width produces the fine-scale
layers.  Sampling uses the filtered formulation: the product of the kernel
Gaussian and a sampling-filter Gaussian is folded into a single closed-form
complex exponential, which suppresses kernels whose orientation disagrees
with the locally interpolated one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Grid2D, GridHierarchy

SEED_PHASE = 0.25 * np.pi     # phase fixed on boundary-aligned kernels


@dataclass
class PhasorKernelSet:
    """Kernels of one lamination layer, one per coarse element (flat y-major).

    Inactive kernels (void or near-solid elements) carry no signal but keep
    their slots so indexing matches the design arrays.
    """

    pos: np.ndarray                # (Ne, 2) centres, physical coords
    normal: np.ndarray             # (Ne, 2) unit normals
    width: np.ndarray              # (Ne,) physical layer widths
    active: np.ndarray             # (Ne,) bool
    phase: np.ndarray = None       # (Ne,)
    bnd_aligned: np.ndarray = None  # (Ne,) bool, seeds for alignment
    bdist: np.ndarray = None       # (Ne,) squared distance to seeds, capped at 1

    def __post_init__(self):
        n = self.pos.shape[0]
        if self.phase is None:
            self.phase = np.zeros(n)
        if self.bnd_aligned is None:
            self.bnd_aligned = np.zeros(n, dtype=bool)
        if self.bdist is None:
            self.bdist = np.ones(n)


def kernel_positions(grid: GridHierarchy):
    """Coarse cell-centre coordinates, flat y-major, shape (Ne, 2)."""
    Y, X = np.meshgrid(grid.coarse.y, grid.coarse.x, indexing="ij")
    return np.stack([X.ravel(order="F"), Y.ravel(order="F")], axis=1)


def filter_vector_field(Nx, Ny, active, perp_margin=0.5):
    """Greedy orientation correction of a pi-ambiguous kernel normal field.

    One raster sweep over the (nelY, nelX) grid; each active kernel picks,
    among {n, -n, n_perp, -n_perp}, the candidate with the largest summed
    dot product against its already-visited active 8-neighbours.  The
    perpendicular candidates repair localised quarter-turn patches, but in
    a smoothly fanning field they must not win marginal comparisons and
    then self-propagate, so they only take over when they beat the sign
    flips by the relative ``perp_margin``.  Returns corrected (Nx, Ny).
    """
    Nx = np.array(Nx, dtype=float)
    Ny = np.array(Ny, dtype=float)
    act = np.asarray(active, dtype=bool)
    ny, nx = Nx.shape
    done = np.zeros_like(act)
    for r in range(ny):
        for c in range(nx):
            if not act[r, c]:
                continue
            sx = sy = 0.0
            found = False
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < ny and 0 <= cc < nx and done[rr, cc]:
                        sx += Nx[rr, cc]
                        sy += Ny[rr, cc]
                        found = True
            if found:
                vx, vy = Nx[r, c], Ny[r, c]
                straight = abs(vx * sx + vy * sy)
                if vx * sx + vy * sy < 0.0:
                    Nx[r, c], Ny[r, c] = -vx, -vy
                perp = abs(vy * sx - vx * sy)
                if perp > (1.0 + perp_margin) * straight:
                    if -vy * sx + vx * sy >= 0.0:
                        Nx[r, c], Ny[r, c] = -vy, vx
                    else:
                        Nx[r, c], Ny[r, c] = vy, -vx
            done[r, c] = True
    return Nx, Ny


def _neighbour_lists(pos, active, normal, r1, r2, radius):
    """Per active kernel: indices of active kernels within the anisotropic
    squared distance radius**2, excluding itself, plus Gaussian weights."""
    idx = np.flatnonzero(active)
    nbrs = {}
    if idx.size == 0:
        return nbrs
    P = pos[idx]
    for e in idx:
        d = P - pos[e]
        n = normal[e]
        cross = d[:, 0] * n[1] - d[:, 1] * n[0]
        dot = d[:, 0] * n[0] + d[:, 1] * n[1]
        aniso = r1 * cross**2 + r2 * dot**2
        sel = aniso <= radius**2
        cand = idx[sel]
        cand = cand[cand != e]
        if cand.size:
            dist2 = np.sum((pos[cand] - pos[e]) ** 2, axis=1)
            nbrs[e] = (cand, np.exp(-dist2 / radius))
    return nbrs


def phase_alignment(kernels: PhasorKernelSet, grid: GridHierarchy, omega=None,
                    align_itr=20):
    """Choose kernel phase shifts for constructive interference.

    Kernels are visited in order of increasing boundary distance (ties:
    decreasing width) for ``align_itr`` sequential sweeps.  Each update sets
    the phase to the argument of the weighted sum of neighbouring kernel
    signals evaluated at the kernel centre; a neighbour with an opposing
    normal contributes with phase pi - phi_f and flipped normal, which
    leaves the real sine field invariant.  Boundary-aligned kernels are
    fixed seeds at ``SEED_PHASE`` so the outermost stripe registers with
    the boundary shell.  Kernels without neighbours keep their phase.
    """
    if omega is None:
        omega = grid.omega
    phase = kernels.phase
    phase[kernels.bnd_aligned] = SEED_PHASE
    nbrs = _neighbour_lists(kernels.pos, kernels.active, kernels.normal,
                            grid.r1, grid.r2, grid.align_radius)
    order = np.flatnonzero(kernels.active & ~kernels.bnd_aligned)
    key = np.lexsort((-kernels.width[order], kernels.bdist[order]))
    order = order[key]
    pos, normal = kernels.pos, kernels.normal
    for _ in range(align_itr):
        for e in order:
            if e not in nbrs:
                continue
            f, wgt = nbrs[e]
            d = pos[e] - pos[f]
            ndot = normal[f, 0] * normal[e, 0] + normal[f, 1] * normal[e, 1]
            nf = np.where(ndot[:, None] < 0.0, -normal[f], normal[f])
            phi = np.where(ndot < 0.0, np.pi - phase[f], phase[f])
            travel = 2.0 * np.pi * omega * (nf[:, 0] * d[:, 0] + nf[:, 1] * d[:, 1])
            total = np.sum(wgt * np.exp(1j * (phi + travel)))
            if np.abs(total) > 0.0:
                phase[e] = np.angle(total)
    return phase


def sample_phasor(kernels: PhasorKernelSet, grid: GridHierarchy, nx_i, ny_i,
                  mask, omega=None, dst: Grid2D = None):
    """Sample the filtered complex phasor field on the intermediate grid.

    ``nx_i, ny_i`` is the interpolated orientation field on the destination
    grid and ``mask`` the region to populate.  Each kernel contributes

        exp(-D*bab - pi^2 |L|^2 * b + i(2 pi w n.d + 2 (L.d) ab + phi))

    inside its truncation window, where D is the anisotropic squared
    distance, L = w (n_e - n(x)) the frequency mismatch against the local
    orientation and bab, b, ab combine the kernel and filter bandwidths.
    Kernels are accumulated in index order, so results are deterministic.
    """
    if dst is None:
        dst = grid.inter
    if omega is None:
        omega = grid.omega
    bt, at = grid.kernel_bandwidth, grid.filter_bandwidth
    bab = bt * at / (at + bt)
    b_inv = 1.0 / (at + bt)
    ab = at / (at + bt)
    G = np.zeros(dst.shape, dtype=complex)
    mask = np.asarray(mask, dtype=bool)
    halfwidth = np.sqrt(grid.cutoff / min(grid.r1, grid.r2))
    h = dst.h
    x0, y0 = dst.x[0], dst.y[0]
    for e in np.flatnonzero(kernels.active):
        px, py = kernels.pos[e]
        c0 = max(0, int(np.floor((px - halfwidth - x0) / h)))
        c1 = min(dst.nx, int(np.ceil((px + halfwidth - x0) / h)) + 1)
        r0 = max(0, int(np.floor((py - halfwidth - y0) / h)))
        r1_ = min(dst.ny, int(np.ceil((py + halfwidth - y0) / h)) + 1)
        if c0 >= c1 or r0 >= r1_:
            continue
        sub = mask[r0:r1_, c0:c1]
        if not sub.any():
            continue
        dx = dst.x[c0:c1][None, :] - px
        dy = dst.y[r0:r1_][:, None] - py
        nex, ney = kernels.normal[e]
        cross = dx * ney - dy * nex
        dot = dx * nex + dy * ney
        aniso = grid.r1 * cross**2 + grid.r2 * dot**2
        sel = sub & (aniso < grid.cutoff)
        if not sel.any():
            continue
        nxw = nx_i[r0:r1_, c0:c1]
        nyw = ny_i[r0:r1_, c0:c1]
        # the interpolated orientation is pi-ambiguous; fold it onto the
        # kernel's halfspace so the mismatch ignores the sign convention
        sgn = np.where(nex * nxw + ney * nyw < 0.0, -1.0, 1.0)
        lx = omega * (nex - sgn * nxw)
        ly = omega * (ney - sgn * nyw)
        l2 = lx**2 + ly**2
        ld = lx * dx + ly * dy
        expo = (-aniso * bab - np.pi**2 * l2 * b_inv
                + 1j * (2.0 * np.pi * omega * dot + 2.0 * ld * ab
                        + kernels.phase[e]))
        contrib = np.where(sel, np.exp(expo), 0.0)
        G[r0:r1_, c0:c1] += contrib
    G[~mask] = 0.0
    return G


def triangular(G):
    """Sawtooth, sine and normalised triangular wave of a complex field."""
    phi = np.angle(G)
    psi = np.sin(phi)
    tau = np.arcsin(np.clip(psi, -1.0, 1.0)) / np.pi + 0.5
    return phi, psi, tau
