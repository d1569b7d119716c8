"""Density filtering and robust three-field projection.

The width and indicator fields are smoothed by normalised cone-kernel
convolutions (a cheap approximation of a Gaussian) before the indicator is
passed through the smoothed-Heaviside projection at three thresholds
(eroded / intermediate / dilated).  The adjoint of the filter is needed for
the sensitivity chain rule; because the kernel is symmetric it is the same
convolution applied to the normalised input.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

ETAS = {"eroded": 0.6, "intermediate": 0.5, "dilated": 0.4}


def _cone_kernel(rmin):
    """Linearly decaying kernel of radius rmin (coarse-element units)."""
    r = int(np.ceil(rmin)) - 1
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    k = np.maximum(0.0, rmin - np.sqrt(dx**2 + dy**2))
    return k


class FilterSpec:
    """Normalised convolution filters for widths and the indicator field.

    The indicator filter footprint is ``alpha_rsc`` times larger so that the
    existence of material is decided on a coarser length scale than the
    layer widths.
    """

    def __init__(self, nelX, nelY, rMin, alpha_rsc=2.0):
        if rMin <= 0:
            raise ValueError("rMin must be positive")
        if alpha_rsc < 1.0:
            raise ValueError("alpha_rsc must be >= 1")
        self.rMin = float(rMin)
        self.alpha_rsc = float(alpha_rsc)
        self.shape = (nelY, nelX)
        self._kw = _cone_kernel(self.rMin)
        self._ks = _cone_kernel(self.alpha_rsc * self.rMin)
        ones = np.ones(self.shape)
        self._norm_w = self._conv(ones, self._kw)
        self._norm_s = self._conv(ones, self._ks)

    @staticmethod
    def _conv(x, k):
        return ndimage.convolve(x, k, mode="constant", cval=0.0)

    def filter_widths(self, x):
        return self._conv(x, self._kw) / self._norm_w

    def filter_indicator(self, x):
        return self._conv(x, self._ks) / self._norm_s

    def adjoint_widths(self, y):
        return self._conv(y / self._norm_w, self._kw)

    def adjoint_indicator(self, y):
        return self._conv(y / self._norm_s, self._ks)


def project(s_tilde, beta, eta):
    """Smoothed Heaviside threshold; returns the value and d(value)/d(s_tilde)."""
    s_tilde = np.asarray(s_tilde, dtype=float)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    t = np.tanh(beta * (s_tilde - eta))
    val = (np.tanh(beta * eta) + t) / denom
    dval = beta * (1.0 - t**2) / denom
    return val, dval


def physical_widths(w_tilde, sbar):
    """Physical layer width: filtered width gated by the projected indicator."""
    return w_tilde * sbar


def chain_rule_back(filt: FilterSpec, w_tilde_layers, sbar, dsbar, d_dwbar_layers,
                    d_dsbar_direct=None, passive_w=None, passive_s=None):
    """Pull derivatives w.r.t. physical widths back to raw design variables.

    ``d_dwbar_layers`` holds the derivative of some functional w.r.t. the
    physical widths of one projection stage (one array per layer); ``sbar``
    and ``dsbar`` are the projected indicator and its derivative at that same
    stage.  ``d_dsbar_direct`` adds any derivative acting on the projected
    indicator itself.  Prescribed elements are re-imposed after filtering, so
    no derivative flows through them: ``passive_w`` (mask per layer) and
    ``passive_s`` cut those paths before the transpose convolution.
    Returns (grads per raw width layer, grad w.r.t. raw s).
    """
    grads_w = []
    for l, d in enumerate(d_dwbar_layers):
        dw = d * sbar
        if passive_w is not None and passive_w[l] is not None:
            dw = np.where(passive_w[l], 0.0, dw)
        grads_w.append(filt.adjoint_widths(dw))
    inner = sum(d * wt for d, wt in zip(d_dwbar_layers, w_tilde_layers))
    if d_dsbar_direct is not None:
        inner = inner + d_dsbar_direct
    ds = inner * dsbar
    if passive_s is not None:
        ds = np.where(passive_s, 0.0, ds)
    grad_s = filt.adjoint_indicator(ds)
    return grads_w, grad_s
