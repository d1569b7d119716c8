"""Command-line entry point, fine-grid verification and file outputs.

A run has three phases: initialisation, optimisation (skipped when a
checkpoint is supplied) and dehomogenisation with optional finite element
verification of the fine structure.  Outputs are plain files: PGM images
for the density and strain energy, a CSV iteration log and a versioned
text checkpoint of the multi-scale design.
"""
from __future__ import annotations

import argparse
import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import dehom, fem, models, optimize, rank2
from .grids import build_grid_hierarchy

CHECKPOINT_MAGIC = "PHASORTOP-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class RunConfig:
    nelX: int
    nelY: int
    volFrac: float
    rMin: float
    wMin: float
    wMax: float
    dMin: float
    deHomFrq: int = 0
    eval: bool = False
    model: str = "bridge"
    checkpoint: str = None
    out: str = None
    passive: str = None
    maxIter: int = 300
    nu: float = 1.0 / 3.0
    with_boundary: bool = True

    def __post_init__(self):
        if self.nelX < 2 or self.nelY < 2:
            raise ValueError("need at least a 2x2 coarse grid")
        if not 0.0 <= self.volFrac <= 1.0:
            raise ValueError("volFrac must lie in [0, 1]")
        if not 0.0 < self.wMin <= self.wMax <= 1.0:
            raise ValueError("require 0 < wMin <= wMax <= 1")
        if self.dMin <= 0.0 or self.rMin <= 0.0:
            raise ValueError("dMin and rMin must be positive")
        if self.deHomFrq < 0:
            raise ValueError("deHomFrq must be non-negative")


@dataclass
class EvalReport:
    fs: float
    f0: float
    eps_f: float
    J0: float
    Js: float = np.nan
    eps_S: float = np.nan
    fine_shape: tuple = ()
    scale: int = 0
    times: dict = field(default_factory=dict)


def write_checkpoint(path, result: optimize.MultiScaleResult):
    """Versioned text checkpoint; 17 significant digits round-trip exactly."""
    Ne, L = result.w.shape
    with open(path, "w") as fh:
        fh.write("%s %d\n" % (CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
        fh.write("%d %d %d %.17g %.17g\n"
                 % (result.nelX, result.nelY, L, result.f, result.J))
        for v in result.w.ravel(order="F"):
            fh.write("%.17g\n" % v)
        for v in result.N.ravel(order="F"):
            fh.write("%.17g\n" % v)


def read_checkpoint(path):
    try:
        with open(path) as fh:
            header = fh.readline().split()
            if header[:1] != [CHECKPOINT_MAGIC]:
                raise ValueError("not a checkpoint file: %s" % path)
            if int(header[1]) != CHECKPOINT_VERSION:
                raise ValueError("unsupported checkpoint version in %s" % path)
            nelX, nelY, L, f, J = fh.readline().split()
            nelX, nelY, L = int(nelX), int(nelY), int(L)
            Ne = nelX * nelY
            vals = np.array([float(fh.readline()) for _ in range(Ne * L + Ne * 2 * L)])
    except OSError as exc:
        raise FileNotFoundError("cannot read checkpoint %s: %s" % (path, exc))
    w = vals[: Ne * L].reshape((Ne, L), order="F")
    N = vals[Ne * L :].reshape((Ne, 2, L), order="F")
    return optimize.MultiScaleResult(w=w, N=N, f=float(f), J=float(J),
                                     nelX=nelX, nelY=nelY)


def write_pgm(path, values, flip=True):
    """8-bit binary PGM; 255 = solid.  Rows are written top-to-bottom, so a
    field stored with y increasing upward is flipped."""
    img = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    if flip:
        data = data[::-1]
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def write_energy_pgm(path, energy):
    e = np.asarray(energy, dtype=float)
    scaled = np.log10(e / max(e.max(), 1e-300) + 1e-12)
    lo, hi = scaled.min(), scaled.max()
    rng = hi - lo if hi > lo else 1.0
    write_pgm(path, (scaled - lo) / rng)


def write_log_csv(path, history):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["itr", "obj", "J", "S", "vol", "ch", "time",
                     "dehom_vol", "dehom_time"])
        for h in history:
            wr.writerow([h["itr"], h["obj"], h["J"], h["S"], h["vol"], h["ch"],
                         h["time"], h["dehom_vol"], h["dehom_time"]])


def fine_model(config: RunConfig, grid):
    sc = grid.fine_scale
    if grid.fine.nx != config.nelX * sc or grid.fine.ny != config.nelY * sc:
        raise ValueError("fine grid is not an integer multiple of the coarse grid")
    return models.build_model(config.model, config.nelX * sc, config.nelY * sc, sc)


def evaluate_fine(rho, model: models.ModelDefinition, constants):
    """Compliance of the fine solid-void structure; each element takes the
    solid modulus scaled by its density plus the background for the rest."""
    flat = rho.reshape(-1, order="F")
    modulus = constants.E * flat + constants.E_min * (1.0 - flat)
    C_iso = rank2.tri_from_full(rank2.isotropic_constitutive(1.0, constants.nu))
    C6f = modulus[:, None] * C_iso[None, :]
    solid = np.flatnonzero(flat > 0.5)
    if solid.size:
        U = fem.assemble_solve_subset(model.fe, C6f, solid)
    else:
        U = fem.assemble_solve(model.fe, C6f)
    return fem.compliance(model.fe.F, U), U, C6f


def run(config: RunConfig, log=print):
    """Execute the three phases; returns (density, EvalReport, result, history)."""
    constants = rank2.MaterialConstants(nu=config.nu)
    grid = build_grid_hierarchy(config.nelX, config.nelY, config.dMin, config.wMin)
    extra = None
    if config.passive:
        extra = models.load_passive_file(config.passive, config.nelX, config.nelY)
    model = models.build_model(config.model, config.nelX, config.nelY, 1, extra)
    fmodel = fine_model(config, grid)
    passive_fine = fmodel.passive_solid
    times = {}

    if config.checkpoint:
        result = read_checkpoint(config.checkpoint)
        if (result.nelX, result.nelY) != (config.nelX, config.nelY):
            raise ValueError("checkpoint grid %dx%d does not match the request"
                             % (result.nelX, result.nelY))
        history = []
    else:
        params = optimize.OptParams(
            volFrac=config.volFrac, rMin=config.rMin, wMin=config.wMin,
            wMax=config.wMax, maxIter=config.maxIter, deHomFrq=config.deHomFrq,
        )
        hook = None
        if config.deHomFrq > 0:
            def hook(res):
                out = dehom.dehomogenise(res.w, res.N, config.wMin, grid,
                                         passive_fine=passive_fine,
                                         with_boundary=config.with_boundary)
                return out.fs
        t0 = time.perf_counter()
        result, history = optimize.run_optimization(model, params, constants,
                                                    dehom_hook=hook, log=log)
        times["optimise"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dres = dehom.dehomogenise(result.w, result.N, config.wMin, grid,
                              passive_fine=passive_fine,
                              with_boundary=config.with_boundary)
    times["dehomogenise"] = time.perf_counter() - t0

    report = EvalReport(
        fs=dres.fs, f0=result.f, eps_f=(dres.fs - result.f) / result.f,
        J0=result.J, fine_shape=grid.fine.shape, scale=grid.fine_scale,
        times=times,
    )
    energy = None
    if config.eval:
        t0 = time.perf_counter()
        Js, U, C6f = evaluate_fine(dres.rho, fmodel, constants)
        times["evaluate"] = time.perf_counter() - t0
        report.Js = Js
        S0 = result.J * result.f
        report.eps_S = (Js * dres.fs - S0) / S0
        energy = fem.strain_energy_density(fmodel.fe, C6f, U).reshape(
            dres.rho.shape, order="F")

    if log is not None:
        log("Vol: %.3f err: %5.2f%%" % (dres.fs, 100.0 * report.eps_f))
        if config.eval:
            log("J: %.2f err: %5.2f%%" % (report.Js, 100.0 * report.eps_S))
        log("Evaluated on %dx%d grid (x%d scaled)"
            % (grid.fine.nx, grid.fine.ny, grid.fine_scale))

    if config.out:
        os.makedirs(config.out, exist_ok=True)
        write_pgm(os.path.join(config.out, "density.pgm"), dres.rho)
        if energy is not None:
            write_energy_pgm(os.path.join(config.out, "energy.pgm"), energy)
        write_log_csv(os.path.join(config.out, "log.csv"), history)
        write_checkpoint(os.path.join(config.out, "checkpoint.txt"), result)

    return dres.rho, report, result, history


def build_parser():
    p = argparse.ArgumentParser(
        prog="phasortop",
        description="Multi-scale topology optimisation with Rank-2 laminates "
                    "and phasor-based dehomogenisation.",
    )
    p.add_argument("--model", choices=sorted(models.MODELS), default="bridge")
    p.add_argument("--nelx", type=int, default=60)
    p.add_argument("--nely", type=int, default=30)
    p.add_argument("--volfrac", type=float, default=0.3)
    p.add_argument("--rmin", type=float, default=2.0)
    p.add_argument("--wmin", type=float, default=0.1)
    p.add_argument("--wmax", type=float, default=1.0)
    p.add_argument("--dmin", type=float, default=0.2)
    p.add_argument("--dehom-frq", type=int, default=0)
    p.add_argument("--eval", action="store_true",
                   help="verify the fine structure by finite element analysis")
    p.add_argument("--checkpoint", help="reuse a stored multi-scale design")
    p.add_argument("--out", help="output directory for images/log/checkpoint")
    p.add_argument("--passive", help="extra passive prescriptions file")
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--nu", type=float, default=1.0 / 3.0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    nthreads = os.environ.get("PHASORTOP_THREADS")
    if nthreads:
        os.environ.setdefault("OMP_NUM_THREADS", nthreads)
    try:
        config = RunConfig(
            nelX=args.nelx, nelY=args.nely, volFrac=args.volfrac,
            rMin=args.rmin, wMin=args.wmin, wMax=args.wmax, dMin=args.dmin,
            deHomFrq=args.dehom_frq, eval=args.eval, model=args.model,
            checkpoint=args.checkpoint, out=args.out, passive=args.passive,
            maxIter=args.max_iter, nu=args.nu,
        )
    except ValueError as exc:
        build_parser().error(str(exc))
    run(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
