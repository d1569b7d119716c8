"""Benchmark problem definitions: loads, supports and passive regions.

Four problems are provided: a simply supported bridge (the default), a
cantilever with a mid-edge tip load, an MBB beam with inset supports and a
double-clamped beam.  Each definition can be instantiated at the coarse
design resolution or at an integer multiple of it (the fine verification
grid), with loads, penalty supports and passive solid blocks placed on the
same physical regions at every scale.

Conventions: the domain spans nelX x nelY units, y axis up, elements and
nodes counted y-major from the bottom-left corner.  Forces are distributed
surface tractions on passive solid blocks (point loads on a void-capable
design create artificial stress raisers).  Simple supports are multipoint
constraints realised as all-ones penalty blocks over the support nodes'
vertical dofs; clamped edges use diagonal penalties on every edge dof.  One
horizontal dof is fixed outright to remove the remaining rigid translation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem

PENALTY = 1.0e4

# local dof index pairs of each element edge, in edofMat ordering
EDGE_BOTTOM = (1, 3)   # v1, v2
EDGE_RIGHT = (3, 5)    # v2, v3
EDGE_TOP = (5, 7)      # v3, v4


@dataclass
class ModelDefinition:
    """A problem instance at one resolution plus its passive design data."""

    name: str
    nelX: int
    nelY: int
    sc: int
    fe: fem.FEModel
    passive_solid: np.ndarray                 # bool (nelY, nelX)
    passive: dict = field(default_factory=dict)  # var -> (flat idx, values)

    def __post_init__(self):
        _check_passive(self.passive)

    def passive_mask(self, var):
        """Boolean (nelY, nelX) mask of elements with `var` prescribed."""
        mask = np.zeros(self.nelY * self.nelX, dtype=bool)
        if var in self.passive:
            mask[self.passive[var][0]] = True
        return mask.reshape((self.nelY, self.nelX), order="F")

    def impose(self, var, arr2d):
        """Write prescribed values of `var` into a (nelY, nelX) field in place."""
        if var in self.passive:
            idx, vals = self.passive[var]
            flat = arr2d.reshape(-1, order="F")
            flat[idx] = vals
            arr2d[...] = flat.reshape(arr2d.shape, order="F")
        return arr2d

    def zero_passive(self, var, arr2d):
        """Zero sensitivity entries of prescribed elements in place."""
        if var in self.passive:
            flat = arr2d.reshape(-1, order="F")
            flat[self.passive[var][0]] = 0.0
            arr2d[...] = flat.reshape(arr2d.shape, order="F")
        return arr2d


def _check_passive(passive):
    """Reject prescriptions making the shared indicator ill-posed."""
    if "w1" not in passive or "w2" not in passive:
        return
    i1, v1 = passive["w1"]
    i2, v2 = passive["w2"]
    common, c1, c2 = np.intersect1d(i1, i2, return_indices=True)
    bad = ((np.asarray(v1)[c1] >= 1.0) & (np.asarray(v2)[c2] <= 0.0)) | (
        (np.asarray(v1)[c1] <= 0.0) & (np.asarray(v2)[c2] >= 1.0)
    )
    if np.any(bad):
        raise ValueError(
            "elements %s prescribe one layer solid and the other void"
            % common[bad]
        )


def _flat(ex, ey, nelY):
    return np.asarray(ex) * nelY + np.asarray(ey)


def _block_elems(cols, rows, nelY):
    ex, ey = np.meshgrid(np.asarray(cols), np.asarray(rows), indexing="ij")
    return _flat(ex.ravel(), ey.ravel(), nelY)


def _traction(edof, elems, local_dofs, numDof):
    F = np.zeros(numDof)
    for ld in local_dofs:
        np.add.at(F, edof[elems, ld], -1.0)
    return F / np.abs(F).sum()


def _penalty_block(dofs, numDof):
    """All-ones coupling over a dof set: a distributed simple support."""
    dofs = np.asarray(dofs)
    i = np.repeat(dofs, dofs.size)
    j = np.tile(dofs, dofs.size)
    return sp.csr_matrix((np.full(i.size, PENALTY), (i, j)), shape=(numDof, numDof))


def _penalty_diag(dofs, numDof):
    """Diagonal penalty pinning each dof individually: a clamped region."""
    dofs = np.asarray(dofs)
    return sp.csr_matrix(
        (np.full(dofs.size, PENALTY), (dofs, dofs)), shape=(numDof, numDof)
    )


def _block_sizes(nelX, nelY, sc):
    px = int(np.ceil(nelX / (15 * sc))) * sc
    py = int(np.ceil(nelY / (30 * sc))) * sc
    return px, py


def _centre_cols(nelX, px):
    """Columns of a centred load band, ceil(px/2) wide on each side."""
    k = np.arange(int(np.ceil(0.5 * px)))
    return np.concatenate([nelX // 2 - 1 - k, nelX // 2 + k])


def _centre_rows(nelY, py):
    k = np.arange(int(np.ceil(0.5 * py)))
    return np.concatenate([nelY // 2 - 1 - k, nelY // 2 + k])


def _solid_passive(nelY, nelX, blocks):
    mask = np.zeros((nelY, nelX), dtype=bool)
    for cols, rows in blocks:
        mask[np.ix_(np.asarray(rows), np.asarray(cols))] = True
    return mask


def _finish(name, nelX, nelY, sc, F, Kp, fixedDofs, passive_solid, extra_passive=None):
    edof = fem.build_edof(nelX, nelY)
    model = fem.FEModel(
        nelX=nelX, nelY=nelY, h=1.0 / sc, edofMat=edof, F=F, Kp=Kp,
        fixedDofs=np.atleast_1d(fixedDofs),
    )
    idx = np.flatnonzero(passive_solid.reshape(-1, order="F"))
    passive = {
        "w1": (idx, np.ones(idx.size)),
        "w2": (idx, np.ones(idx.size)),
        "s": (idx, np.ones(idx.size)),
    }
    if extra_passive:
        for var, (i, v) in extra_passive.items():
            if var in passive:
                i = np.concatenate([passive[var][0], i])
                v = np.concatenate([passive[var][1], v])
            passive[var] = (i, v)
    return ModelDefinition(
        name=name, nelX=nelX, nelY=nelY, sc=sc, fe=model,
        passive_solid=passive_solid, passive=passive,
    )


def bridge_model(nelX, nelY, sc=1):
    """Simply supported bridge: deck along the bottom, load band at mid-span,
    distributed supports inset one block width from the bottom corners
    (supports on the grid boundary cause undesirable mesh effects)."""
    px, py = _block_sizes(nelX, nelY, sc)
    if nelX < 4 * px + 2 or nelY <= py:
        raise ValueError("domain too small for the support/load blocks")
    nodes = fem.node_grid(nelX, nelY)
    edof = fem.build_edof(nelX, nelY)
    numDof = 2 * (nelX + 1) * (nelY + 1)

    force_cols = _centre_cols(nelX, px)
    force_elems = _flat(force_cols, 0, nelY)
    F = _traction(edof, force_elems, EDGE_BOTTOM, numDof)

    cols_l = np.arange(px, 2 * px)
    cols_r = np.arange(nelX - 2 * px, nelX - px)
    vdofs_l = 2 * nodes[0, px : 2 * px + 1] + 1
    vdofs_r = 2 * nodes[0, nelX - 2 * px : nelX - px + 1] + 1
    Kp = _penalty_block(vdofs_l, numDof) + _penalty_block(vdofs_r, numDof)
    fixedDofs = vdofs_l[0] - 1  # the matching horizontal dof

    rows = np.arange(py)
    passive = _solid_passive(
        nelY, nelX, [(force_cols, rows), (cols_l, rows), (cols_r, rows)],
    )
    return _finish("bridge", nelX, nelY, sc, F, Kp, fixedDofs, passive)


def cantilever_model(nelX, nelY, sc=1):
    """Cantilever: left edge clamped, downward load band at mid-right edge."""
    px, py = _block_sizes(nelX, nelY, sc)
    nodes = fem.node_grid(nelX, nelY)
    edof = fem.build_edof(nelX, nelY)
    numDof = 2 * (nelX + 1) * (nelY + 1)

    load_rows = _centre_rows(nelY, py)
    load_elems = _flat(nelX - 1, load_rows, nelY)
    F = _traction(edof, load_elems, EDGE_RIGHT, numDof)

    edge = nodes[:, 0]
    Kp = _penalty_diag(np.concatenate([2 * edge, 2 * edge + 1]), numDof)
    fixedDofs = 2 * edge[0]

    passive = _solid_passive(nelY, nelX, [(np.arange(nelX - px, nelX), load_rows)])
    return _finish("cantilever", nelX, nelY, sc, F, Kp, fixedDofs, passive)


def mbb_model(nelX, nelY, sc=1):
    """MBB beam: top-centre load band, simple supports inset from the
    bottom corners by one block width."""
    px, py = _block_sizes(nelX, nelY, sc)
    if nelX < 4 * px + 2:
        raise ValueError("domain too small for inset supports")
    nodes = fem.node_grid(nelX, nelY)
    edof = fem.build_edof(nelX, nelY)
    numDof = 2 * (nelX + 1) * (nelY + 1)

    force_cols = _centre_cols(nelX, px)
    force_elems = _flat(force_cols, nelY - 1, nelY)
    F = _traction(edof, force_elems, EDGE_TOP, numDof)

    cols_l = np.arange(px, 2 * px)
    cols_r = np.arange(nelX - 2 * px, nelX - px)
    vdofs_l = 2 * nodes[0, px : 2 * px + 1] + 1
    vdofs_r = 2 * nodes[0, nelX - 2 * px : nelX - px + 1] + 1
    Kp = _penalty_block(vdofs_l, numDof) + _penalty_block(vdofs_r, numDof)
    fixedDofs = vdofs_l[0] - 1

    passive = _solid_passive(
        nelY, nelX,
        [
            (force_cols, np.arange(nelY - py, nelY)),
            (cols_l, np.arange(py)),
            (cols_r, np.arange(py)),
        ],
    )
    return _finish("mbb", nelX, nelY, sc, F, Kp, fixedDofs, passive)


def db_model(nelX, nelY, sc=1):
    """Double-clamped beam: both vertical edges clamped, bottom-centre load."""
    px, py = _block_sizes(nelX, nelY, sc)
    nodes = fem.node_grid(nelX, nelY)
    edof = fem.build_edof(nelX, nelY)
    numDof = 2 * (nelX + 1) * (nelY + 1)

    force_cols = _centre_cols(nelX, px)
    force_elems = _flat(force_cols, 0, nelY)
    F = _traction(edof, force_elems, EDGE_BOTTOM, numDof)

    edges = np.concatenate([nodes[:, 0], nodes[:, -1]])
    Kp = _penalty_diag(np.concatenate([2 * edges, 2 * edges + 1]), numDof)
    fixedDofs = 2 * nodes[0, 0]

    passive = _solid_passive(nelY, nelX, [(force_cols, np.arange(py))])
    return _finish("db", nelX, nelY, sc, F, Kp, fixedDofs, passive)


MODELS = {
    "bridge": bridge_model,
    "cantilever": cantilever_model,
    "mbb": mbb_model,
    "db": db_model,
}


def load_passive_file(path, nelX, nelY):
    """Read extra passive prescriptions: lines of `element variable value`.

    Element indices are flat y-major (column-major) 0-based indices.
    """
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if not line:
                continue
            e, var, val = line.split()
            if var not in ("w1", "w2", "s", "a"):
                raise ValueError("unknown design variable %r" % var)
            e = int(e)
            if not 0 <= e < nelX * nelY:
                raise ValueError("element index %d out of range" % e)
            entries.setdefault(var, []).append((e, float(val)))
    out = {}
    for var, pairs in entries.items():
        idx = np.array([p[0] for p in pairs], dtype=int)
        vals = np.array([p[1] for p in pairs])
        out[var] = (idx, vals)
    return out


def build_model(name, nelX, nelY, sc=1, extra_passive=None):
    try:
        builder = MODELS[name]
    except KeyError:
        raise ValueError("unknown model %r" % name) from None
    model = builder(nelX, nelY, sc)
    if extra_passive:
        merged = dict(model.passive)
        for var, (i, v) in extra_passive.items():
            if var in merged:
                i = np.concatenate([merged[var][0], i])
                v = np.concatenate([merged[var][1], v])
            merged[var] = (i, v)
        # any prescribed width implies the indicator is solid there
        widx = [merged[v][0][merged[v][1] > 0] for v in ("w1", "w2") if v in merged]
        if widx:
            sidx = np.unique(np.concatenate(widx))
            si, sv = merged.get("s", (np.empty(0, dtype=int), np.empty(0)))
            keep = ~np.isin(si, sidx)
            merged["s"] = (
                np.concatenate([si[keep], sidx]),
                np.concatenate([sv[keep], np.ones(sidx.size)]),
            )
        _check_passive(merged)
        model = ModelDefinition(
            name=model.name, nelX=nelX, nelY=nelY, sc=sc, fe=model.fe,
            passive_solid=model.passive_solid, passive=merged,
        )
    return model
