"""Grid hierarchy and inter-grid interpolation.

Four regular cell-centred grids share one physical domain of nelX x nelY
units: the coarse design/analysis grid (spacing 1), two intermediate grids
used while smoothing and resampling wave fields, and the fine output grid
on which the solid-void structure lives.  The fine spacing resolves one
wave period with 40 cells.

Fields are stored as (ny, nx) arrays indexed [row, col] with
x = (col + 0.5) h and y = (row + 0.5) h.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

FINE_CELLS_PER_WAVE = 40


@dataclass(frozen=True)
class Grid2D:
    """One regular cell-centred grid."""

    h: float
    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self):
        return (self.y.size, self.x.size)

    @property
    def nx(self):
        return self.x.size

    @property
    def ny(self):
        return self.y.size


def _make_grid(extent_x, extent_y, h_target):
    nx = max(1, round(extent_x / h_target))
    ny = max(1, round(extent_y / h_target))
    hx = extent_x / nx
    hy = extent_y / ny
    x = (np.arange(nx) + 0.5) * hx
    y = (np.arange(ny) + 0.5) * hy
    return Grid2D(h=hx, x=x, y=y)


@dataclass(frozen=True)
class GridHierarchy:
    """The four grids plus the wave/kernel parameters tied to their spacing."""

    nelX: int
    nelY: int
    dMin: float
    wMin: float
    wavelength: float
    omega: float
    coarse: Grid2D
    inter: Grid2D
    interfine: Grid2D
    fine: Grid2D
    # anisotropic kernel shape and Gaussian bandwidths
    r1: float
    r2: float
    kernel_bandwidth: float
    filter_bandwidth: float
    cutoff: float
    align_radius: float

    @property
    def h_c(self):
        return self.coarse.h

    @property
    def h_i(self):
        return self.inter.h

    @property
    def h_if(self):
        return self.interfine.h

    @property
    def h_f(self):
        return self.fine.h

    @property
    def fine_scale(self):
        """Fine cells per coarse cell along x."""
        return self.fine.nx // self.nelX


def build_grid_hierarchy(nelX, nelY, dMin, wMin):
    """Construct the grid hierarchy for a given minimum feature size.

    The wave period is dMin / wMin so that a layer of relative width wMin
    thresholded from the triangular wave has physical width dMin; the fine
    grid resolves it with 40 cells, the intermediate grids with 10 and 20.
    """
    if nelX < 2 or nelY < 2:
        raise ValueError("need at least a 2x2 coarse grid")
    if not 0.0 < wMin <= 1.0:
        raise ValueError("wMin must lie in (0, 1]")
    if not dMin > 0.0:
        raise ValueError("dMin must be positive")
    lam = dMin / wMin
    if lam > min(nelX, nelY):
        raise ValueError("wavelength dMin/wMin exceeds the domain")

    btilde = 2.0 / lam**2
    atilde = btilde
    # truncate the sampled Gaussian where the combined decay reaches 1e-3
    decay = btilde * atilde / (btilde + atilde)
    cutoff = np.log(1e3) / decay

    return GridHierarchy(
        nelX=nelX,
        nelY=nelY,
        dMin=dMin,
        wMin=wMin,
        wavelength=lam,
        omega=1.0 / lam,
        coarse=_make_grid(nelX, nelY, 1.0),
        inter=_make_grid(nelX, nelY, lam / 10.0),
        interfine=_make_grid(nelX, nelY, lam / 20.0),
        fine=_make_grid(nelX, nelY, lam / FINE_CELLS_PER_WAVE),
        r1=0.5,
        r2=2.0,
        kernel_bandwidth=btilde,
        filter_bandwidth=atilde,
        cutoff=cutoff,
        align_radius=1.5 * lam,
    )


def _interpolator(field, src: Grid2D, method):
    return RegularGridInterpolator(
        (src.y, src.x), field, method=method, bounds_error=False, fill_value=None
    )


def _dst_points(src: Grid2D, dst: Grid2D):
    """Query points of dst clamped to the src cell-centre range."""
    xq = np.clip(dst.x, src.x[0], src.x[-1])
    yq = np.clip(dst.y, src.y[0], src.y[-1])
    Y, X = np.meshgrid(yq, xq, indexing="ij")
    return np.stack([Y.ravel(), X.ravel()], axis=1)

def interp_scalar(field, src: Grid2D, dst: Grid2D, method="linear"):
    """Resample a (possibly complex) scalar field between grids.

    Extrapolation is clamped at the boundary cell centres.
    """
    pts = _dst_points(src, dst)
    if np.iscomplexobj(field):
        re = _interpolator(field.real, src, method)(pts)
        im = _interpolator(field.imag, src, method)(pts)
        out = re + 1j * im
    else:
        out = _interpolator(np.asarray(field, dtype=float), src, method)(pts)
    return out.reshape(dst.shape)


def interp_orientation(Nx, Ny, src: Grid2D, dst: Grid2D):
    """Resample a pi-invariant unit-vector field between grids.

    The angle-doubled complex field (Nx + i Ny)^2 is interpolated linearly,
    its argument halved and the result renormalised, so antipodal inputs
    agree up to sign.  Exactly cancelling neighbours fall back to the
    nearest source value.
    """
    z = (np.asarray(Nx, dtype=float) + 1j * np.asarray(Ny, dtype=float)) ** 2
    zi = interp_scalar(z, src, dst, method="linear")
    dead = np.abs(zi) < 1e-12
    if np.any(dead):
        zi[dead] = interp_scalar(z, src, dst, method="nearest")[dead]
    ang = 0.5 * np.angle(zi)
    return np.cos(ang), np.sin(ang)


def remove_islands(field, threshold, passive=None):
    """Binarise and drop 8-connected components that are not load-bearing.

    Keeps the largest component and any component overlapping the optional
    passive-solid mask; everything else becomes void.  Returns a float 0/1
    array; idempotent for already-binary input.
    """
    solid = np.asarray(field) > threshold
    labels, num = ndimage.label(solid, structure=np.ones((3, 3), dtype=int))
    if num == 0:
        return np.zeros_like(field, dtype=float)
    counts = np.bincount(labels.ravel())[1:]
    keep = np.zeros(num + 1, dtype=bool)
    keep[1 + int(np.argmax(counts))] = True
    if passive is not None:
        keep[np.unique(labels[np.asarray(passive, dtype=bool)])] = True
        keep[0] = False
    return (keep[labels]).astype(float)
