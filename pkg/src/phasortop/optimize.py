"""Multi-scale minimum-compliance optimisation driver.

Design variables per coarse element: two layer widths w1, w2, an existence
indicator s and a layer orientation a.  Each iteration filters the fields,
projects the indicator at three thresholds (robust design), evaluates
compliance on the eroded interpretation and volume on the dilated one,
forms adjoint sensitivities and applies an optimality-criteria update with
dual bisection on the dilated volume bound.  Orientations, which do not
enter the volume constraint, take a move-limited gradient step instead.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fem, models, rank2, regularize

GAMMA_S = 1.0 / 20.0
STAGES = ("eroded", "intermediate", "dilated")


@dataclass
class OptParams:
    volFrac: float
    rMin: float
    wMin: float
    wMax: float = 1.0
    maxIter: int = 300
    stopCrit: float = 0.01
    move: float = 0.2
    amove: float = 0.05 * 2.0 * np.pi
    betaMax: float = 32.0
    betaInterval: int = 25
    alpha_rsc: float = 2.0
    deHomFrq: int = 0

    def __post_init__(self):
        if not 0.0 < self.volFrac <= 1.0:
            raise ValueError("volFrac must lie in (0, 1]")
        if not 0.0 < self.wMin <= self.wMax <= 1.0:
            raise ValueError("require 0 < wMin <= wMax <= 1")


@dataclass
class Design:
    w1: np.ndarray
    w2: np.ndarray
    s: np.ndarray
    a: np.ndarray

    def copy(self):
        return Design(self.w1.copy(), self.w2.copy(), self.s.copy(), self.a.copy())


@dataclass
class Evaluation:
    """All intermediate fields of one design evaluation."""

    w_tilde: list                 # filtered widths per layer
    s_tilde: np.ndarray
    sbar: dict                    # stage -> projected indicator
    dsbar: dict
    wbar: dict                    # stage -> (w1bar, w2bar)
    mu: tuple                     # eroded (mu1, mu2, dmu)
    C6: np.ndarray
    dC6: tuple                    # (dmu1, dmu2, da) lower triangles
    U: np.ndarray
    J: float
    S: float
    f_int: float
    f_dil: float
    phi: float = 0.0


@dataclass
class Sensitivities:
    dphi_w1: np.ndarray
    dphi_w2: np.ndarray
    dphi_s: np.ndarray
    dphi_a: np.ndarray
    df_w1: np.ndarray
    df_w2: np.ndarray
    df_s: np.ndarray


@dataclass
class MultiScaleResult:
    """Checkpointable multi-scale design: widths, normals, volume, compliance."""

    w: np.ndarray       # (Ne, L) physical intermediate widths, flat y-major
    N: np.ndarray       # (Ne, 2, L) layer normals
    f: float
    J: float
    nelX: int = 0
    nelY: int = 0


def beta_at(itr, params: OptParams):
    """Projection sharpness schedule: 1, doubling every betaInterval iterations."""
    return float(min(2.0 ** ((itr - 1) // params.betaInterval), params.betaMax))


def layer_normals(a):
    """Unit normals of the two laminate layers for orientation angle a."""
    n1 = np.stack([-np.sin(a), np.cos(a)], axis=-1)
    n2 = np.stack([np.cos(a), np.sin(a)], axis=-1)
    return n1, n2


def filtered_stages(model: models.ModelDefinition, filt, design: Design, beta):
    """Filter and project the design; passive values re-imposed at each stage."""
    w1 = model.impose("w1", design.w1.copy())
    w2 = model.impose("w2", design.w2.copy())
    s = model.impose("s", design.s.copy())
    w_tilde = [model.impose("w1", filt.filter_widths(w1)),
               model.impose("w2", filt.filter_widths(w2))]
    s_tilde = model.impose("s", filt.filter_indicator(s))
    sbar, dsbar, wbar = {}, {}, {}
    for m in STAGES:
        sb, dsb = regularize.project(s_tilde, beta, regularize.ETAS[m])
        sbar[m], dsbar[m] = sb, dsb
        wbar[m] = (regularize.physical_widths(w_tilde[0], sb),
                   regularize.physical_widths(w_tilde[1], sb))
    return w_tilde, s_tilde, sbar, dsbar, wbar


def evaluate_design(model: models.ModelDefinition, filt, design: Design, beta,
                    constants=rank2.MaterialConstants(), solve=True):
    """Evaluate compliance (eroded), volume (intermediate + dilated) and the
    indicator volume S (dilated)."""
    w_tilde, s_tilde, sbar, dsbar, wbar = filtered_stages(model, filt, design, beta)
    mu1, mu2, dmu = rank2.mu_from_w(*wbar["eroded"])
    a = design.a
    C6, dC1, dC2, dCa = rank2.constitutive_rank2(mu1, mu2, a, constants)
    flat = lambda x: x.reshape(-1, order="F")
    U = None
    J = np.nan
    if solve:
        C6f = np.stack([flat(C6[..., k]) for k in range(6)], axis=1)
        U = fem.assemble_solve(model.fe, C6f)
        J = fem.compliance(model.fe.F, U)
    S = float(np.mean(sbar["dilated"]))
    f_int = float(np.mean(rank2.rho_n(wbar["intermediate"])))
    f_dil = float(np.mean(rank2.rho_n(wbar["dilated"])))
    return Evaluation(
        w_tilde=w_tilde, s_tilde=s_tilde, sbar=sbar, dsbar=dsbar, wbar=wbar,
        mu=(mu1, mu2, dmu), C6=C6, dC6=(dC1, dC2, dCa), U=U, J=J, S=S,
        f_int=f_int, f_dil=f_dil,
    )


def _element_energies(model: models.ModelDefinition, U):
    """q_ek = Ue' KE0_k Ue for each element and base matrix."""
    Ue = U[model.fe.edofMat]
    return np.einsum("ea,kab,eb->ek", Ue, model.fe.KE0, Ue, optimize=True)


def adjoint_sensitivities(model: models.ModelDefinition, filt, ev: Evaluation,
                          gamma0, gamma_s=GAMMA_S):
    """Gradients of the objective and the dilated volume w.r.t. raw variables.

    Compliance is self-adjoint: dJ/dxi_e = -Ue' dKe/dxi Ue.
    """
    ny, nx = ev.s_tilde.shape
    Ne = ny * nx
    unflat = lambda v: v.reshape((ny, nx), order="F")
    q = _element_energies(model, ev.U)
    # the support penalty is scaled by max(diag(K)), which itself depends on
    # the design: d(K + Kp*m)/dxi contributes (U' Kp U) * dm/dxi through the
    # elements touching the dof where the diagonal maximum is attained
    C6f = np.stack([ev.C6[..., k].reshape(-1, order="F") for k in range(6)], axis=1)
    diag = model.fe.assemble(C6f).diagonal()
    istar = int(np.argmax(diag))
    pen = float(ev.U @ (model.fe.Kp @ ev.U))
    eidx, lidx = np.nonzero(model.fe.edofMat == istar)
    np.add.at(q, eidx, pen * model.fe.KE0[:, lidx, lidx].T)
    dC1, dC2, dCa = ev.dC6
    tri = lambda dC: np.stack([dC[..., k].reshape(-1, order="F") for k in range(6)], 1)
    dJ_mu1 = unflat(-np.sum(tri(dC1) * q, axis=1))
    dJ_mu2 = unflat(-np.sum(tri(dC2) * q, axis=1))
    dJ_a = unflat(-np.sum(tri(dCa) * q, axis=1))

    (d11, d12), (d21, d22) = ev.mu[2]
    dJ_wbar = [dJ_mu1 * d11 + dJ_mu2 * d21, dJ_mu1 * d12 + dJ_mu2 * d22]

    pas_w = [model.passive_mask("w1"), model.passive_mask("w2")]
    pas_s = model.passive_mask("s")
    dphi_w, dphi_s = regularize.chain_rule_back(
        filt, ev.w_tilde, ev.sbar["eroded"], ev.dsbar["eroded"],
        [gamma0 * g for g in dJ_wbar], passive_w=pas_w, passive_s=pas_s,
    )
    # indicator-volume penalty acts on the dilated projection
    dphi_s = dphi_s + filt.adjoint_indicator(
        np.where(pas_s, 0.0, gamma_s / Ne * ev.dsbar["dilated"])
    )
    dphi_a = gamma0 * dJ_a

    w1d, w2d = ev.wbar["dilated"]
    drho = [(1.0 - w2d) / Ne, (1.0 - w1d) / Ne]
    df_w, df_s = regularize.chain_rule_back(
        filt, ev.w_tilde, ev.sbar["dilated"], ev.dsbar["dilated"], drho,
        passive_w=pas_w, passive_s=pas_s,
    )

    sens = Sensitivities(dphi_w[0], dphi_w[1], dphi_s, dphi_a,
                         df_w[0], df_w[1], df_s)
    for var, arrs in (("w1", (sens.dphi_w1, sens.df_w1)),
                      ("w2", (sens.dphi_w2, sens.df_w2)),
                      ("s", (sens.dphi_s, sens.df_s)),
                      ("a", (sens.dphi_a,))):
        for arr in arrs:
            model.zero_passive(var, arr)
    return sens


def dilated_volume(model, filt, design: Design, beta):
    """Dilated volume fraction of a candidate design (no FE solve)."""
    _, _, _, _, wbar = filtered_stages(model, filt, design, beta)
    return float(np.mean(rank2.rho_n(wbar["dilated"])))


def oc_update(model, filt, design: Design, sens: Sensitivities, params: OptParams,
              beta, f_target, a_scale):
    """One design update; returns (new design, max design change).

    Widths and indicator take the classical multiplicative update with dual
    bisection until the dilated volume matches ``f_target`` to 1e-4; the
    orientation takes a clamped gradient step.
    """
    move = params.move
    lo = {"w1": params.wMin, "w2": params.wMin, "s": 0.0}
    hi = {"w1": params.wMax, "w2": params.wMax, "s": 1.0}
    x = {"w1": design.w1, "w2": design.w2, "s": design.s}
    dphi = {"w1": sens.dphi_w1, "w2": sens.dphi_w2, "s": sens.dphi_s}
    df = {"w1": sens.df_w1, "w2": sens.df_w2, "s": sens.df_s}

    def candidate(lam):
        new = {}
        for v in x:
            B = np.maximum(-dphi[v], 0.0) / np.maximum(lam * df[v], 1e-30)
            xc = x[v] * np.sqrt(B)
            xc = np.clip(xc, x[v] - move, x[v] + move)
            new[v] = np.clip(xc, lo[v], hi[v])
        d = Design(new["w1"], new["w2"], new["s"], design.a)
        return d

    # slack check: the unconstrained ascent may already satisfy the bound
    d_free = candidate(1e-30)
    if dilated_volume(model, filt, d_free, beta) <= f_target + 1e-4:
        new = d_free
    else:
        l1, l2 = 1e-12, 1.0
        while dilated_volume(model, filt, candidate(l2), beta) > f_target:
            l1, l2 = l2, l2 * 10.0
            if l2 > 1e12:
                break
        new = None
        for _ in range(100):
            lmid = 0.5 * (l1 + l2)
            new = candidate(lmid)
            fd = dilated_volume(model, filt, new, beta)
            if abs(fd - f_target) <= 1e-4:
                break
            if fd > f_target:
                l1 = lmid
            else:
                l2 = lmid

    step = np.clip(a_scale * sens.dphi_a, -params.amove, params.amove)
    new.a = np.clip(design.a - step, -4.0 * np.pi, 4.0 * np.pi)
    model.impose("a", new.a)
    model.impose("w1", new.w1)
    model.impose("w2", new.w2)
    model.impose("s", new.s)

    ch = max(
        np.max(np.abs(new.w1 - design.w1)),
        np.max(np.abs(new.w2 - design.w2)),
        np.max(np.abs(new.s - design.s)),
        np.max(np.abs(new.a - design.a)),
    )
    return new, float(ch)


def initial_design(model: models.ModelDefinition, params: OptParams,
                   constants=rank2.MaterialConstants()):
    """Uniform widths meeting the volume bound, full indicator, orientations
    from the principal stress directions of the solid isotropic domain."""
    ny, nx = model.nelY, model.nelX
    w0 = 1.0 - np.sqrt(1.0 - params.volFrac)
    w0 = float(np.clip(w0, params.wMin, params.wMax))
    C_iso = rank2.tri_from_full(rank2.isotropic_constitutive(constants.E, constants.nu))
    C6f = np.tile(C_iso, (ny * nx, 1))
    U = fem.assemble_solve(model.fe, C6f)
    a = fem.principal_directions(model.fe, C6f, U).reshape((ny, nx), order="F")
    design = Design(
        w1=np.full((ny, nx), w0), w2=np.full((ny, nx), w0),
        s=np.ones((ny, nx)), a=a,
    )
    for var, arr in (("w1", design.w1), ("w2", design.w2),
                     ("s", design.s), ("a", design.a)):
        model.impose(var, arr)
    J_solid = fem.compliance(model.fe.F, U)
    return design, J_solid


def mnd(sbar):
    """Measure of non-discreteness of the projected indicator."""
    return float(np.mean(4.0 * sbar * (1.0 - sbar)))


def run_optimization(model: models.ModelDefinition, params: OptParams,
                     constants=rank2.MaterialConstants(), dehom_hook=None,
                     log=None):
    """Run the optimisation loop; returns (MultiScaleResult, history).

    ``dehom_hook(result) -> volume`` is invoked every ``deHomFrq``-th
    iteration with the current intermediate design.  ``history`` is a list
    of per-iteration dicts mirroring the printed log line.
    """
    filt = regularize.FilterSpec(model.nelX, model.nelY, params.rMin,
                                 params.alpha_rsc)
    design, J_solid = initial_design(model, params, constants)
    gamma0 = 1.0 / (J_solid * params.volFrac)
    a_scale = None
    history = []

    itr = 0
    while itr < params.maxIter:
        itr += 1
        t0 = time.perf_counter()
        beta = beta_at(itr, params)
        ev = evaluate_design(model, filt, design, beta, constants)
        ev.phi = gamma0 * ev.J + GAMMA_S * ev.S
        # rescale the dilated bound so the intermediate design meets the user's
        f_target = params.volFrac * (ev.f_dil / max(ev.f_int, 1e-12))
        sens = adjoint_sensitivities(model, filt, ev, gamma0)
        if a_scale is None:
            # calibrate the orientation step once so the largest initial
            # gradient maps to a quarter of the angle move limit; the damping
            # keeps early steps from saturating the clamp everywhere
            amax = float(np.max(np.abs(sens.dphi_a)))
            a_scale = 0.25 * params.amove / amax if amax > 0 else 0.0
        design, ch = oc_update(model, filt, design, sens, params, beta,
                               f_target, a_scale)
        entry = {
            "itr": itr, "obj": ev.phi, "J": ev.J, "S": ev.S, "vol": ev.f_int,
            "ch": ch, "time": time.perf_counter() - t0,
            "dehom_vol": np.nan, "dehom_time": np.nan,
        }
        if dehom_hook is not None and params.deHomFrq > 0 and itr % params.deHomFrq == 0:
            td = time.perf_counter()
            entry["dehom_vol"] = dehom_hook(pack_result(model, filt, design, beta,
                                                        constants, solve=False))
            entry["dehom_time"] = time.perf_counter() - td
        history.append(entry)
        if log is not None:
            log("Itr: %3d Obj: %8.4f J: %8.4f S: %6.4f Vol: %6.4f ch: %6.4f "
                "time: %5.2fs" % (itr, ev.phi, ev.J, ev.S, ev.f_int, ch,
                                  entry["time"]))
        if ch < params.stopCrit and beta >= params.betaMax:
            break

    result = pack_result(model, filt, design, beta_at(itr, params), constants)
    if log is not None:
        log("Final (intermediate design): J: %8.4f Vol: %6.4f" % (result.J, result.f))
    return result, history


def pack_result(model: models.ModelDefinition, filt, design: Design, beta,
                constants=rank2.MaterialConstants(), solve=True):
    """Re-evaluate the intermediate interpretation and pack it for output."""
    w_tilde, s_tilde, sbar, dsbar, wbar = filtered_stages(model, filt, design, beta)
    w1i, w2i = wbar["intermediate"]
    mu1, mu2, _ = rank2.mu_from_w(w1i, w2i)
    J = np.nan
    if solve:
        C6, _, _, _ = rank2.constitutive_rank2(mu1, mu2, design.a, constants)
        C6f = np.stack([C6[..., k].reshape(-1, order="F") for k in range(6)], axis=1)
        U = fem.assemble_solve(model.fe, C6f)
        J = fem.compliance(model.fe.F, U)
    f = float(np.mean(rank2.rho_n((w1i, w2i))))
    n1, n2 = layer_normals(design.a)
    flat = lambda v: v.reshape(-1, order="F")
    Ne = model.nelX * model.nelY
    w = np.stack([flat(w1i), flat(w2i)], axis=1)
    N = np.empty((Ne, 2, 2))
    N[:, 0, 0] = flat(n1[..., 0]); N[:, 1, 0] = flat(n1[..., 1])
    N[:, 0, 1] = flat(n2[..., 0]); N[:, 1, 1] = flat(n2[..., 1])
    return MultiScaleResult(w=w, N=N, f=f, J=float(J),
                            nelX=model.nelX, nelY=model.nelY)
