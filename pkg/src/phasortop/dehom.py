"""Dehomogenisation: from a multi-scale design to a fine solid-void field.

The pipeline per lamination layer: build material indicators, correct the
kernel orientation field, align kernel phases, sample the phasor field on
the intermediate grid, upsample it, repair wave bifurcations (solidify +
pinch), then threshold the triangular wave at the local layer width on the
fine grid.  The layers are unioned, clipped by a smoothed structural-domain
indicator with a varying-thickness boundary shell, and cleaned of floating
islands.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import phasor
from .grids import Grid2D, GridHierarchy, interp_orientation, interp_scalar, remove_islands

SOLID_TOL = 1.0e-3          # widths above 1 - SOLID_TOL count as solid
NEAR_SOLID_SEED = 0.99      # fine cells at least this thick start solid
SAMPLE_CUT = 0.01           # minimum interpolated indicator to sample at
BRANCH_MAG_FACTOR = 0.1
BND_PHASE_OFFSET = -np.pi / 6.0   # registers the shell crest on the outermost stripe     # |G| threshold relative to the region median

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0
_SOBEL_Y = _SOBEL_X.T


@dataclass
class BranchPoint:
    """A wave bifurcation: location, disconnection degree and closure data."""

    gamma: np.ndarray        # (2,) physical coords
    rho: float               # degree of disconnection in [0, 1]
    direction: np.ndarray    # (2,) closure unit vector
    gamma_dot: np.ndarray = field(init=False)
    gamma_ddot: np.ndarray = field(init=False)
    wavelength: float = 1.0

    def __post_init__(self):
        step = self.wavelength / 3.0 * self.rho * self.direction
        self.gamma_dot = self.gamma + step
        self.gamma_ddot = self.gamma + 2.0 * step


@dataclass
class DehomResult:
    rho: np.ndarray            # (ny_f, nx_f) 0/1 density
    fs: float
    indicator: np.ndarray      # structural-domain mask on the fine grid
    shell: np.ndarray          # boundary-shell mask on the fine grid
    tau: list                  # per-layer triangular fields on T^if
    branches: list             # per-layer lists of BranchPoint


def _bilinear(f, grid: Grid2D, pts):
    """Sample a 2D field at physical points (K, 2), clamped at the border."""
    pts = np.atleast_2d(pts)
    rows = np.clip((pts[:, 1] - grid.y[0]) / grid.h, 0, grid.ny - 1)
    cols = np.clip((pts[:, 0] - grid.x[0]) / grid.h, 0, grid.nx - 1)
    return ndimage.map_coordinates(f, [rows, cols], order=1, mode="nearest")


def layer_indicators(w_layers, wMin):
    """Per-layer and combined material indicators on the coarse grid.

    A layer exists where its width reaches wMin (with a small tolerance for
    filtered round-off); kernels are active only where the layer also is not
    yet solid.
    """
    ind = [(w >= wMin * (1.0 - 1e-6)).astype(float) for w in w_layers]
    nonsolid = [i * (w < 1.0 - SOLID_TOL) for i, w in zip(ind, w_layers)]
    combined = np.maximum.reduce(ind)
    return ind, nonsolid, combined


def interp_thickness(w, ind, wMin, src: Grid2D, dst: Grid2D):
    """Layer width resampled to a finer grid: clamped to wMin inside the
    layer's region, zero outside, then linearly interpolated."""
    fld = np.where(ind > 0.5, np.clip(w, wMin, 1.0), 0.0)
    return interp_scalar(fld, src, dst, method="linear")


def locate_branch_points(G, region, grid: GridHierarchy, G_if):
    """Find wave bifurcations: strict local minima of |G| on the intermediate
    grid inside the region, well below the typical magnitude, deduplicated
    within a quarter wavelength and refined on the finer grid."""
    region = np.asarray(region, dtype=bool)
    if not region.any():
        return []
    mag = np.abs(G)
    med = np.median(mag[region])
    big = np.where(region, mag, np.inf)
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neigh_min = ndimage.minimum_filter(big, footprint=footprint, mode="constant",
                                       cval=np.inf)
    cand = region & (mag < neigh_min) & (mag < BRANCH_MAG_FACTOR * med)
    rr, cc = np.nonzero(cand)
    if rr.size == 0:
        return []
    order = np.argsort(mag[rr, cc], kind="stable")
    src, fine = grid.inter, grid.interfine
    pts = []
    min_d2 = (grid.wavelength / 4.0) ** 2
    mag_if = np.abs(G_if)
    for k in order:
        p = np.array([src.x[cc[k]], src.y[rr[k]]])
        if any(np.sum((p - q) ** 2) < min_d2 for q in pts):
            continue
        # refine to the nearest magnitude minimum on the finer grid
        r = int(round((p[1] - fine.y[0]) / fine.h))
        c = int(round((p[0] - fine.x[0]) / fine.h))
        half = max(1, int(round(src.h / fine.h)))
        r0, r1 = max(0, r - half), min(fine.ny, r + half + 1)
        c0, c1 = max(0, c - half), min(fine.nx, c + half + 1)
        win = mag_if[r0:r1, c0:c1]
        dr, dc = np.unravel_index(np.argmin(win), win.shape)
        # the finer grid may disagree near masked edges; keep the point only
        # if it still looks like a singularity there
        if win[dr, dc] >= BRANCH_MAG_FACTOR * med:
            continue
        pts.append(np.array([fine.x[c0 + dc], fine.y[r0 + dr]]))
    return pts


def disconnection_and_direction(gamma, psi, src: Grid2D, n_gamma, wavelength):
    """Disconnection degree and closure direction of a branch point.

    The degree is one minus the mean normalised sine wave over a disc of
    radius half a wavelength; the closure direction is the layer normal
    (or its negation) pointing towards the weaker side, probed with
    single-point samples a third of a wavelength away.
    """
    rad = 0.5 * wavelength
    r0 = max(0, int(np.floor((gamma[1] - rad - src.y[0]) / src.h)))
    r1 = min(src.ny, int(np.ceil((gamma[1] + rad - src.y[0]) / src.h)) + 1)
    c0 = max(0, int(np.floor((gamma[0] - rad - src.x[0]) / src.h)))
    c1 = min(src.nx, int(np.ceil((gamma[0] + rad - src.x[0]) / src.h)) + 1)
    dx = src.x[c0:c1][None, :] - gamma[0]
    dy = src.y[r0:r1][:, None] - gamma[1]
    disc = dx**2 + dy**2 <= rad**2
    vals = (psi[r0:r1, c0:c1][disc] + 1.0) * 0.5
    rho = float(1.0 - vals.mean()) if vals.size else 0.0

    probe = wavelength / 3.0 * np.asarray(n_gamma)
    up = 0.5 * (_bilinear(psi, src, gamma + probe)[0] + 1.0)
    dn = 0.5 * (_bilinear(psi, src, gamma - probe)[0] + 1.0)
    direction = np.asarray(n_gamma) if (1.0 - up) <= (1.0 - dn) else -np.asarray(n_gamma)
    return rho, direction


def _window(grid: Grid2D, centre, radius):
    r0 = max(0, int(np.floor((centre[1] - radius - grid.y[0]) / grid.h)))
    r1 = min(grid.ny, int(np.ceil((centre[1] + radius - grid.y[0]) / grid.h)) + 1)
    c0 = max(0, int(np.floor((centre[0] - radius - grid.x[0]) / grid.h)))
    c1 = min(grid.nx, int(np.ceil((centre[0] + radius - grid.x[0]) / grid.h)) + 1)
    return r0, r1, c0, c1


def _aniso(dx, dy, n, s):
    cross = dx * n[1] - dy * n[0]
    dot = dx * n[0] + dy * n[1]
    return s[0] * cross**2 + s[1] * dot**2


def close_branches(G_if, w_if, nx_if, ny_if, branches, grid: GridHierarchy):
    """Repair bifurcation disconnections on the T^if triangular wave.

    Solidify: a smoothstepped anisotropic Gaussian around each perturbed
    branch centre locally shifts the wave phase both ways and keeps the
    maximum, filling the gap.  Pinch (three passes): the filled region is
    re-shaped by displacing sample positions along the normalised gradient
    of a branch-centred Gaussian, with the displacement magnitude vanishing
    where the structure is already solid.
    """
    fine = grid.interfine
    omega, lam = grid.omega, grid.wavelength
    phi = np.angle(G_if)
    psi = np.sin(phi)
    tau = np.arcsin(np.clip(psi, -1.0, 1.0)) / np.pi + 0.5
    if not branches:
        return tau
    win_rad = 2.0 * lam

    def normal_at(p):
        nx = _bilinear(nx_if, fine, p)[0]
        ny = _bilinear(ny_if, fine, p)[0]
        z = complex(nx, ny) ** 2
        ang = 0.5 * np.angle(z) if abs(z) > 1e-12 else 0.0
        return np.array([np.cos(ang), np.sin(ang)])

    # solidification, sequential so overlapping branches take the union
    for b in branches:
        r0, r1, c0, c1 = _window(fine, b.gamma_dot, win_rad)
        if r0 >= r1 or c0 >= c1:
            continue
        dx = fine.x[c0:c1][None, :] - b.gamma_dot[0]
        dy = fine.y[r0:r1][:, None] - b.gamma_dot[1]
        n = normal_at(b.gamma_dot)
        psi_w = psi[r0:r1, c0:c1]
        tau_w = tau[r0:r1, c0:c1]
        phi_w = phi[r0:r1, c0:c1]
        P = np.exp(-4.0 * omega**2 * _aniso(dx, dy, n, (1.0 / (2.0 * np.pi), 1.0))
                   * (1.0 - 0.5 * psi_w))
        Phat = 3.0 * P**2 - 2.0 * P**3
        pihat = Phat * np.pi * (1.0 - tau_w)
        psi_hat = np.maximum(psi_w, np.maximum(np.sin(phi_w + pihat),
                                               np.sin(phi_w - pihat)))
        psi[r0:r1, c0:c1] = psi_hat
        tau[r0:r1, c0:c1] = np.arcsin(np.clip(psi_hat, -1.0, 1.0)) / np.pi + 0.5

    # pinch passes
    for k in (1, 2, 3):
        s_tilde = (1.0 / (2.0 * np.pi), 1.0)
        s_k = (3.0 / (4.0 * np.pi) * (1.0 - (k - 1) / 2.0), 1.0)
        for b in branches:
            dk = float(np.clip((1.0 - b.rho) * (k - 1) / 2.0, 0.0, 1.0))
            g_k = (1.0 - dk) * b.gamma_dot + dk * b.gamma_ddot
            g_tk = (1.0 - dk**2) * b.gamma_dot + dk**2 * b.gamma_ddot
            r0, r1, c0, c1 = _window(fine, b.gamma_dot, win_rad)
            if r1 - r0 < 3 or c1 - c0 < 3:
                continue
            X = fine.x[c0:c1][None, :]
            Y = fine.y[r0:r1][:, None]
            n_b = normal_at(b.gamma_dot)
            Pt = np.exp(-(omega**2) * _aniso(X - g_k[0], Y - g_k[1], n_b, s_tilde))
            # correlate, not convolve: convolution would flip the stencil and
            # negate the gradient, pushing material outwards instead of in
            gx = ndimage.correlate(Pt, _SOBEL_X, mode="nearest")
            gy = ndimage.correlate(Pt, _SOBEL_Y, mode="nearest")
            norm = np.sqrt(gx**2 + gy**2).max()
            if norm <= 0.0:
                continue
            gx /= norm
            gy /= norm
            w_w = w_if[r0:r1, c0:c1]
            nxw = nx_if[r0:r1, c0:c1]
            nyw = ny_if[r0:r1, c0:c1]
            delta_t = (2.0 * omega / (2.0 - w_w)
                       * np.abs(nxw * (X - g_k[0]) + nyw * (Y - g_k[1])))
            Pb = np.exp(-2.0 * omega**2
                        * _aniso(X - g_tk[0], Y - g_tk[1], n_b, s_k) - delta_t)
            mag = lam / 3.0 * (1.0 - w_w) * Pb
            px = mag * gx
            py = mag * gy
            rows = np.clip((Y - py - fine.y[0]) / fine.h, 0, fine.ny - 1)
            cols = np.clip((X - px - fine.x[0]) / fine.h, 0, fine.nx - 1)
            rows, cols = np.broadcast_arrays(rows, cols)
            tau[r0:r1, c0:c1] = ndimage.map_coordinates(
                tau, [rows, cols], order=1, mode="nearest")
    return tau


def _align_boundary_angles(theta, weightmask, pos, radius, iters=10):
    """Align boundary-normal angles by weighted circular averaging.

    Near-orthogonal neighbours are damped by |cos| of the angular difference
    so the boundary wave can still wrap around small holes.
    """
    idx = np.flatnonzero(weightmask)
    if idx.size == 0:
        return theta
    order = idx[np.argsort(-weightmask[idx], kind="stable")]
    nbrs = {}
    P = pos[idx]
    for e in order:
        d2 = np.sum((P - pos[e]) ** 2, axis=1)
        sel = (d2 <= radius**2) & (idx != e)
        if sel.any():
            nbrs[e] = (idx[sel], np.exp(-d2[sel] / radius))
    th = theta.copy()
    for _ in range(iters):
        for e in order:
            if e not in nbrs:
                continue
            f, wgt = nbrs[e]
            damp = np.abs(np.cos(th[f] - th[e]))
            total = np.sum(wgt * damp * np.exp(1j * th[f]))
            if np.abs(total) > 0.0:
                th[e] = np.angle(total)
    return th


def add_boundary(w_layers, ind_layers, Nx_layers, Ny_layers, grid: GridHierarchy,
                 wMin, w_fine_layers, passive_fine=None, align_itr=10):
    """Synthesise the smoothed structural domain and its boundary shell.

    Returns (domain indicator on T^f, shell mask on T^f, per-layer
    boundary-aligned kernel flags, per-layer squared kernel distances to
    those flags, capped at one).
    """
    ny, nx = ind_layers[0].shape
    L = len(ind_layers)
    combined = np.maximum.reduce(ind_layers)
    thr = (combined > 0.5).astype(float)
    # zero padding on purpose: structure touching the domain edge still needs
    # a boundary wave there, so the edge must register as an indicator jump
    idsp = ndimage.gaussian_filter(thr, sigma=1.0, mode="constant", cval=0.0)
    vx = ndimage.gaussian_filter(thr, sigma=1.0, order=(0, 1), mode="constant",
                                 cval=0.0)
    vy = ndimage.gaussian_filter(thr, sigma=1.0, order=(1, 0), mode="constant",
                                 cval=0.0)
    vmag = vx**2 + vy**2
    peak = vmag.max()
    flags_none = [np.zeros(ny * nx, dtype=bool) for _ in range(L)]
    bdist_none = [np.ones(ny * nx) for _ in range(L)]
    indicator_i = interp_scalar(combined, grid.coarse, grid.inter, "linear")
    if peak <= 0.0:
        ind_f = interp_scalar(combined, grid.coarse, grid.fine, "linear") > 0.5
        return ind_f, np.zeros(grid.fine.shape, dtype=bool), flags_none, bdist_none
    vmagn = vmag / peak
    potential = vmagn > 1e-3
    # outward normals: the wave crest must fall on the material side so the
    # shell and the indicator smoothing line up with the structural edge
    vdir = np.arctan2(-vy, -vx)

    pos = phasor.kernel_positions(grid)
    theta = _align_boundary_angles(vdir.reshape(-1, order="F"),
                                   vmagn.reshape(-1, order="F")
                                   * potential.reshape(-1, order="F"),
                                   pos, grid.align_radius, align_itr)
    bvec = np.stack([np.cos(theta), np.sin(theta)], axis=1)

    idbnd = potential & (vmagn >= 0.25)
    new_omg = min(1.0 / (8.0 * grid.h_c), grid.omega / 2.0)
    omg_rat = new_omg / grid.omega
    pshift = (np.pi * ((1.0 - idsp.reshape(-1, order="F")) * 0.5 + 1.0 / 3.0)
              + BND_PHASE_OFFSET)

    # upscaled boundary orientation for the sampling filter
    z = np.exp(1j * theta.reshape((ny, nx), order="F"))
    zi = interp_scalar(z, grid.coarse, grid.inter, "linear")
    va = np.angle(np.where(np.abs(zi) > 1e-12, zi, 1.0))

    bregion = interp_scalar(potential.astype(float), grid.coarse, grid.inter,
                            "linear") >= SAMPLE_CUT
    bker = phasor.PhasorKernelSet(
        pos=pos, normal=bvec, width=np.ones(ny * nx),
        active=idbnd.reshape(-1, order="F"), phase=pshift,
    )
    bphasor = phasor.sample_phasor(bker, grid, np.cos(va), np.sin(va), bregion,
                                   omega=new_omg)

    bsaw = np.angle(bphasor)
    ind_cl = np.clip(indicator_i, 0.0, 1.0)
    positive = (np.sin(bsaw) > 0.1) * np.sqrt(ind_cl * (1.0 - ind_cl))
    cutfi = 10.0 * positive * np.sin(bsaw + 0.5 * np.pi) + indicator_i
    fi_f = interp_scalar(cutfi, grid.inter, grid.fine, "linear")
    ind_f = remove_islands((fi_f > 0.5).astype(float), 0.1, passive_fine) > 0.5

    bphasor_f = interp_scalar(bphasor, grid.inter, grid.fine, "linear")
    shellwave = 2.0 / np.pi * np.arcsin(np.sin(np.angle(bphasor_f)))
    # ridge along the 0.5-contour of the smoothed domain: ties the shell to
    # the structural edge even where the boundary wave crest drifts inward
    fic = np.clip(fi_f, 0.0, 1.0)
    outline = 2.0 * np.sqrt(fic * (1.0 - fic))
    wmax_f = np.maximum.reduce(w_fine_layers)
    shellth = 2.0 * omg_rat * np.clip(wmax_f, wMin, 0.99)
    shell = ind_f & (np.maximum(shellwave, outline) >= 1.0 - shellth)

    # layer kernels best aligned with the boundary seed the phase alignment
    bvx = bvec[:, 0].reshape((ny, nx), order="F")
    bvy = bvec[:, 1].reshape((ny, nx), order="F")
    adot = np.stack([np.abs(Nx * bvx + Ny * bvy)
                     for Nx, Ny in zip(Nx_layers, Ny_layers)])
    nd = adot.max(axis=0)
    global_best = nd.max()
    flags, bdist = [], []
    for l in range(L):
        fl = idbnd & (adot[l] >= nd) & (adot[l] > 0.95 * global_best)
        fl &= ind_layers[l] > 0.5
        fl_flat = fl.reshape(-1, order="F")
        if fl_flat.any():
            d2 = np.sum((pos[:, None, :] - pos[None, fl_flat, :]) ** 2, axis=2)
            bd = np.minimum(d2.min(axis=1), 1.0)
        else:
            bd = np.ones(ny * nx)
        flags.append(fl_flat)
        bdist.append(bd)
    return ind_f, shell, flags, bdist


def dehomogenise(w, N, wMin, grid: GridHierarchy, align_itr=20,
                 passive_fine=None, with_boundary=True):
    """Realise a multi-scale design as a fine-scale solid-void structure.

    ``w`` is (Ne, L) physical layer widths and ``N`` (Ne, 2, L) layer
    normals, flat y-major on the coarse grid; any layer count L >= 1 is
    accepted.
    """
    ny, nx = grid.nelY, grid.nelX
    Ne, L = w.shape
    if Ne != nx * ny:
        raise ValueError("design size does not match the grid")
    to2d = lambda v: v.reshape((ny, nx), order="F")
    w_layers = [to2d(w[:, l]) for l in range(L)]
    ind_layers, nonsolid, combined = layer_indicators(w_layers, wMin)

    Nx_layers, Ny_layers = [], []
    for l in range(L):
        Nxl, Nyl = phasor.filter_vector_field(
            to2d(N[:, 0, l]), to2d(N[:, 1, l]), ind_layers[l] > 0.5)
        Nx_layers.append(Nxl)
        Ny_layers.append(Nyl)

    w_fine = [interp_thickness(w_layers[l], ind_layers[l], wMin,
                               grid.coarse, grid.fine) for l in range(L)]

    if with_boundary:
        ind_f, shell, flags, bdist = add_boundary(
            w_layers, ind_layers, Nx_layers, Ny_layers, grid, wMin, w_fine,
            passive_fine)
    else:
        ind_f = interp_scalar(combined, grid.coarse, grid.fine, "linear") > 0.5
        shell = np.zeros(grid.fine.shape, dtype=bool)
        flags = [np.zeros(Ne, dtype=bool) for _ in range(L)]
        bdist = [np.ones(Ne) for _ in range(L)]

    pos = phasor.kernel_positions(grid)
    rho = np.zeros(grid.fine.shape, dtype=bool)
    taus, branch_lists = [], []
    for l in range(L):
        wl = w_layers[l]
        active = ((wl >= wMin * (1.0 - 1e-6)) & (wl < 1.0 - SOLID_TOL))
        kern = phasor.PhasorKernelSet(
            pos=pos,
            normal=np.stack([Nx_layers[l].reshape(-1, order="F"),
                             Ny_layers[l].reshape(-1, order="F")], axis=1),
            width=wl.reshape(-1, order="F"),
            active=active.reshape(-1, order="F"),
            bnd_aligned=flags[l], bdist=bdist[l],
        )
        phasor.phase_alignment(kern, grid, align_itr=align_itr)
        nx_i, ny_i = interp_orientation(Nx_layers[l], Ny_layers[l],
                                        grid.coarse, grid.inter)
        mask_i = interp_scalar(nonsolid[l], grid.coarse, grid.inter,
                               "linear") >= SAMPLE_CUT
        G = phasor.sample_phasor(kern, grid, nx_i, ny_i, mask_i)
        G_if = interp_scalar(G, grid.inter, grid.interfine, "cubic")

        nx_if, ny_if = interp_orientation(Nx_layers[l], Ny_layers[l],
                                          grid.coarse, grid.interfine)
        w_if = interp_thickness(wl, ind_layers[l], wMin, grid.coarse,
                                grid.interfine)
        region = interp_scalar(nonsolid[l], grid.coarse, grid.inter,
                               "linear") >= 0.5
        psi_i = np.sin(np.angle(G))
        branches = []
        for p in locate_branch_points(G, region, grid, G_if):
            nxg = _bilinear(nx_if, grid.interfine, p)[0]
            nyg = _bilinear(ny_if, grid.interfine, p)[0]
            z = complex(nxg, nyg) ** 2
            ang = 0.5 * np.angle(z) if abs(z) > 1e-12 else 0.0
            ng = np.array([np.cos(ang), np.sin(ang)])
            rho_b, direction = disconnection_and_direction(
                p, psi_i, grid.inter, ng, grid.wavelength)
            branches.append(BranchPoint(gamma=p, rho=rho_b, direction=direction,
                                        wavelength=grid.wavelength))
        tau = close_branches(G_if, w_if, nx_if, ny_if, branches, grid)
        taus.append(tau)
        branch_lists.append(branches)

        tau_f = interp_scalar(tau, grid.interfine, grid.fine, "linear")
        rho |= (tau_f >= 1.0 - w_fine[l]) & (w_fine[l] > 1e-3)

    wmax_f = np.maximum.reduce(w_fine) if w_fine else np.zeros(grid.fine.shape)
    rho |= wmax_f >= NEAR_SOLID_SEED
    dens = np.minimum(rho.astype(float) * ind_f + shell, 1.0)
    if passive_fine is not None:
        dens = np.maximum(dens, np.asarray(passive_fine, dtype=float))
    dens = remove_islands(dens, 0.1, passive_fine)
    return DehomResult(rho=dens, fs=float(dens.mean()), indicator=np.asarray(ind_f),
                       shell=shell, tau=taus, branches=branch_lists)
