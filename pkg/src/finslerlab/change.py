"""The beta-conformal change L -> exp(sigma(x)) L + b_i(x) y^i.

Given the unbarred frame of L and the jets of sigma and b on the same batch of
points, this module builds every barred object in closed form, the three-step
difference tensor (D^r_00, then D^r_0j, then D^r_jk), the special cases of
the change, and the barred spray/nonlinear connection/torsions.  Each closed
form is paired with a direct recomputation from a jet of the changed metric
so the two can be compared.

Index conventions follow :mod:`finslerlab.geometry`: a leading point axis
``p``, then tensor axes in the written order; ``D0j[p, r, j] = D^r_0j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import jets
from .catalog import FieldSpec, MetricSpec
from .errors import (
    CompatibilityViolated,
    DegenerateMetric,
    HypothesisViolated,
    InsufficientSamples,
    InvalidChange,
    SingularValuePart,
)
from .geometry import (
    Seeds,
    UnbarredFrame,
    compute_frame,
    eval_metric_jet,
    h_cov,
    outer,
    points_arrays,
    scal,
)
from .jets import Jet, einsum

COMPAT_TOL = 1e-8


def _rel_max(residual: Jet | np.ndarray, reference=None) -> float:
    r = residual.value if isinstance(residual, Jet) else np.asarray(residual)
    if reference is None:
        return float(np.max(np.abs(r))) if r.size else 0.0
    ref = reference.value if isinstance(reference, Jet) else np.asarray(reference)
    return float(np.max(np.abs(r)) / (1.0 + np.max(np.abs(ref))))


@dataclass
class ChangeInputs:
    """Jets of the change constituents on a batch of points."""

    sigma: Jet          # (p,)
    b: Jet              # (p, n)

    @classmethod
    def build(cls, chg: FieldSpec, seeds: Seeds) -> "ChangeInputs":
        s = chg.sigma_function()(seeds.xs)
        b = jets.stack(chg.b_function()(seeds.xs), axis=-1)
        return cls(s, b)


@dataclass
class ChangeFrame:
    """Barred objects and the auxiliary tensors of the difference-tensor pipeline."""

    Lbar: Jet = None
    Lbar_i: Jet = None
    Lbar_ij: Jet = None
    e_sigma: Jet = None
    tau: Jet = None
    mu: Jet = None
    mu_printed: Jet = None
    b: Jet = None
    b2: Jet = None
    beta: Jet = None
    b_up: Jet = None
    m: Jet = None
    gbar: Jet = None
    gbar_inv: Jet = None
    gbar_inv_formula: Jet = None
    h3: Jet = None
    Cbar: Jet = None
    Cbar_up: Jet = None
    A: Jet = None
    b_cov: Jet = None
    E: Jet = None
    F: Jet = None
    sigma: Jet = None
    sigma_i: Jet = None
    sigma0: Jet = None
    sigma_up: Jet = None
    sigma_beta: Jet = None
    sigma_pair: Jet = None
    mu_pair: Jet = None
    B_i: Jet = None
    B: Jet = None
    E00: Jet = None
    F_i0: Jet = None
    F_beta0: Jet = None
    D00: Jet = None
    G_mat: Jet = None
    G_mat_free: Jet = None
    G_vec: Jet = None
    G_vec_closed: Jet = None
    G_vec_printed: Jet = None
    D0j: Jet = None
    H3: Jet = None
    H2: Jet = None
    D: Jet = None
    residuals: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {f.name: getattr(self, f.name).value for f in fields(self)
                if isinstance(getattr(self, f.name), Jet)}


# -- barred metric and Cartan tensor ---------------------------------------------------
def barred_metric(frame: UnbarredFrame, inputs: ChangeInputs, cf: ChangeFrame | None = None) -> ChangeFrame:
    """Lbar, Lbar_i, Lbar_ij, tau, mu, b^2, beta, gbar, gbar^-1 and m_i."""
    cf = cf or ChangeFrame()
    L, y = frame.L, frame.y
    es = inputs.sigma.exp()
    b = inputs.b
    beta = einsum("pi,pi->p", b, y)
    Lbar = es * L + beta
    if np.any(Lbar.value <= 0):
        raise InvalidChange("Lbar <= 0 at a sample point")
    Lbar_i = frame.L_i * scal(es, 1) + b
    Lbar_ij = frame.L_ij * scal(es, 2)
    tau = es * Lbar / L
    b_up = einsum("pij,pj->pi", frame.g_inv, b)
    b2 = einsum("pi,pi->p", b, b_up)
    # the printed coefficients; exact only when sigma = 0
    mu_printed = (es * L * b2 + beta) / (Lbar * tau * tau)
    mu = es * (L * b2 + es * beta) / (Lbar * tau * tau)
    gbar = frame.h * scal(tau, 2) + outer(Lbar_i, Lbar_i)
    l_up = frame.l_up
    itau = 1.0 / tau
    ll = outer(l_up, l_up)
    lb = outer(l_up, b_up) + outer(b_up, l_up)
    gbar_inv_formula = (frame.g_inv * scal(itau, 2) + ll * scal(mu, 2)
                        - lb * scal(es * itau * itau, 2))
    gbar_inv_printed = (frame.g_inv * scal(itau, 2) + ll * scal(mu_printed, 2)
                        - lb * scal(itau * itau, 2))
    try:
        gbar_inv = jets.jet_inverse(gbar)
    except SingularValuePart as exc:
        raise InvalidChange(f"gbar degenerate: {exc}") from exc
    gbar_inv = 0.5 * (gbar_inv + gbar_inv.swapaxes(-1, -2))
    m = b - frame.L_i * scal(beta / L, 1)
    cf.Lbar, cf.Lbar_i, cf.Lbar_ij = Lbar, Lbar_i, Lbar_ij
    cf.e_sigma, cf.tau, cf.mu, cf.b, cf.b2, cf.beta, cf.b_up, cf.m = es, tau, mu, b, b2, beta, b_up, m
    cf.gbar, cf.gbar_inv, cf.gbar_inv_formula = gbar, gbar_inv, gbar_inv_formula
    cf.sigma = inputs.sigma
    cf.mu_printed = mu_printed
    cf.residuals["barred.gbar_inv"] = _rel_max(gbar_inv_formula - gbar_inv, gbar_inv)
    cf.residuals["barred.gbar_inv_printed"] = _rel_max(gbar_inv_printed - gbar_inv, gbar_inv)
    cf.residuals["m0"] = _rel_max(einsum("pi,pi->p", m, y))
    return cf


def _cyclic3(T: Jet, extra: str = "") -> Jet:
    """Sum of T over cyclic permutations of its first three tensor indices."""
    return (T + einsum(f"pjki{extra}->pijk{extra}", T)
            + einsum(f"pkij{extra}->pijk{extra}", T))


def barred_cartan(frame: UnbarredFrame, cf: ChangeFrame) -> ChangeFrame:
    """Cbar_ijk by the closed form; A = Cbar^i_jk - C^i_jk by difference."""
    h, m = frame.h, cf.m
    cf.h3 = _cyclic3(einsum("pij,pk->pijk", h, m))
    cf.Cbar = (frame.C + cf.h3 * scal(1.0 / (2.0 * cf.Lbar), 3)) * scal(cf.tau, 3)
    cf.Cbar_up = einsum("pir,prjk->pijk", cf.gbar_inv, cf.Cbar)
    cf.A = cf.Cbar_up - frame.C_up
    return cf


A_READINGS = ("printed", "symmetric", "exact")


def a_tensor(frame: UnbarredFrame, cf: ChangeFrame, reading: str = "exact") -> Jet:
    """Closed form of A^i_jk = Cbar^i_jk - C^i_jk.

    ``'printed'`` repeats h_j^i m_k in the first bracket and weights the
    l^i terms by 1/tau; ``'symmetric'`` uses h_j^i m_k + h_k^i m_j with the
    same weights; ``'exact'`` is the symmetric bracket with the l^i terms
    weighted by exp(sigma)/tau, which is what raising with gbar^-1 gives.
    The three agree when sigma = 0 and b makes m vanish.
    """
    if reading not in A_READINGS:
        raise ValueError(f"unknown reading {reading!r}")
    g_inv, h, m, l_up = frame.g_inv, frame.h, cf.m, frame.l_up
    m_up = einsum("pik,pk->pi", g_inv, m)
    h_mixed = einsum("pik,pjk->pji", g_inv, h)          # h_j^i stored [p, j, i]
    t1 = einsum("pjk,pi->pijk", h, m_up) + einsum("pji,pk->pijk", h_mixed, m)
    if reading == "printed":
        t1 = t1 + einsum("pji,pk->pijk", h_mixed, m)
    else:
        t1 = t1 + einsum("pki,pj->pijk", h_mixed, m)
    weight = 1.0 / cf.tau
    if reading == "exact":
        weight = weight * cf.e_sigma
    m2 = einsum("pi,pi->p", m, m_up)
    t2 = einsum("pjks,ps,pi->pijk", frame.C, cf.b_up, l_up) * scal(weight, 3)
    bracket = 2.0 * outer(m, m) + h * scal(m2, 2)
    t3 = einsum("pjk,pi->pijk", bracket, l_up) * scal(weight / (2.0 * cf.Lbar), 3)
    return t1 * scal(1.0 / (2.0 * cf.Lbar), 3) - t2 - t3


def dC_bar(frame: UnbarredFrame, cf: ChangeFrame) -> Jet:
    """y-derivative of Cbar_ijk from the closed form; index order [p,i,j,k,r]."""
    L, es, beta = frame.L, cf.e_sigma, cf.beta
    C, h, m, Ll = frame.C, frame.h, cf.m, frame.L_i
    dC = frame.C.grad_y()
    n_rk = outer(m, Ll) + outer(Ll, m)
    e_over_L = es / L
    first = dC * scal(cf.tau, 4) + einsum("pijk,pr->pijkr", C, m) * scal(e_over_L, 4)
    inner = einsum("pijr,pk->pijkr", C, m) * scal(e_over_L, 4)
    bracket = (einsum("pij,prk->pijkr", h, n_rk + h * scal(beta / L, 2))
               + einsum("pir,pjk->pijkr", h, n_rk))
    inner = inner - bracket * scal(es / (2.0 * L * L), 4)
    return first + _cyclic3(inner, "r")


# -- auxiliary tensors -----------------------------------------------------------------
def ef_tensors(frame: UnbarredFrame, cf: ChangeFrame) -> ChangeFrame:
    """b_{i|j}, its symmetric/antisymmetric parts E, F, and sigma tensors."""
    cf.b_cov = h_cov(cf.b, "d", frame.N, frame.Gamma)
    bt = cf.b_cov.swapaxes(-1, -2)
    cf.E = 0.5 * (cf.b_cov + bt)
    cf.F = 0.5 * (cf.b_cov - bt)
    s_i = cf.sigma.grad_x()
    cf.sigma_i = s_i
    cf.sigma0 = einsum("pi,pi->p", s_i, frame.y)
    cf.sigma_up = einsum("pij,pj->pi", frame.g_inv, s_i)
    cf.sigma_beta = einsum("pi,pi->p", s_i, cf.b_up)
    cf.sigma_pair = outer(s_i, frame.L_i) + outer(frame.L_i, s_i)
    cf.mu_pair = outer(s_i, frame.L_i) - outer(frame.L_i, s_i)
    return cf


def matsumoto_solve(level: str, rhs_small: Jet, rhs_big: Jet, frame: UnbarredFrame,
                    cf: ChangeFrame, *, expect: dict | None = None,
                    tol: float = COMPAT_TOL) -> Jet:
    """Unique solution X of  L_ir X^r... = rhs_small_i...,  Lbar_r X^r... = rhs_big...

    ``level`` is ``'vector'``, ``'one-index'`` or ``'two-index'``; the free
    trailing indices of the right-hand sides are carried through.  The
    compatibility condition rhs_small_i y^i = 0 and any extra identities in
    ``expect`` (name -> (lhs, rhs) jets) are checked first.
    """
    rank = {"vector": 0, "one-index": 1, "two-index": 2}[level]
    if rhs_small.ndim != rank + 2 or rhs_big.ndim != rank + 1:
        raise ValueError(f"right-hand sides do not match level {level!r}")
    t = "jk"[:rank]
    y, L, Lbar = frame.y, frame.L, cf.Lbar
    checks = {"y.small": (einsum(f"pi{t},pi->p{t}", rhs_small, y), None)}
    checks.update(expect or {})
    for name, (lhs, rhs) in checks.items():
        diff = lhs if rhs is None else lhs - rhs
        scale = 1.0 + max(rhs_small.abs_max(), rhs_big.abs_max())
        if diff.abs_max() > tol * scale:
            raise CompatibilityViolated(
                f"{level} system: {name} residual {diff.abs_max():.3e} exceeds {tol:g}")
    up = einsum(f"pri,pi{t}->pr{t}", frame.g_inv, rhs_small)
    small_beta = einsum(f"pi,pi{t}->p{t}", cf.b_up, rhs_small)
    coef = (rhs_big - small_beta * scal(L, rank)) * scal(L / Lbar, rank)
    X = up * scal(L, rank + 1) + einsum(f"p{t},pr->pr{t}", coef, frame.l_up)
    return X


def plug_back(X: Jet, rhs_small: Jet, rhs_big: Jet, frame: UnbarredFrame,
              cf: ChangeFrame) -> tuple[float, float]:
    rank = X.ndim - 2
    t = "jk"[:rank]
    r1 = einsum(f"pir,pr{t}->pi{t}", frame.L_ij, X) - rhs_small
    r2 = einsum(f"pr,pr{t}->p{t}", cf.Lbar_i, X) - rhs_big
    return _rel_max(r1, rhs_small), _rel_max(r2, rhs_big)


def d00(frame: UnbarredFrame, cf: ChangeFrame) -> ChangeFrame:
    """B_i, B and the closed form of D^r_00."""
    L, y, es = frame.L, frame.y, cf.e_sigma
    ies = 1.0 / es
    F_i0 = einsum("pij,pj->pi", cf.F, y)
    E00 = einsum("pij,pi,pj->p", cf.E, y, y)
    cf.B_i = (F_i0 * scal(2.0 * ies, 1) + frame.L_i * scal(cf.sigma0, 1)
              - cf.sigma_i * scal(L, 1))
    cf.B = E00 + es * cf.sigma0 * L
    F_up0 = einsum("pri,pi->pr", frame.g_inv, F_i0)
    F_b0 = einsum("pi,pi->p", F_i0, cf.b_up)
    l_up = frame.l_up
    ratio = L / cf.Lbar
    cf.D00 = (F_up0 * scal(2.0 * L * ies, 1)
              + l_up * scal(ratio * (E00 - 2.0 * L * ies * F_b0), 1)
              - cf.sigma_up * scal(L * L, 1)
              + l_up * scal(ratio * (2.0 * L * es * cf.sigma0 + L * L * cf.sigma_beta), 1))
    cf.residuals["B_i.y"] = _rel_max(einsum("pi,pi->p", cf.B_i, y), cf.B_i)
    D00_solved = matsumoto_solve("vector", cf.B_i, cf.B, frame, cf)
    cf.residuals["solve.vector.vs_closed"] = _rel_max(D00_solved - cf.D00, cf.D00)
    r1, r2 = plug_back(cf.D00, cf.B_i, cf.B, frame, cf)
    cf.residuals["solve.vector.plugback.i"] = r1
    cf.residuals["solve.vector.plugback.ii"] = r2
    cf.E00, cf.F_i0, cf.F_beta0 = E00, F_i0, F_b0
    return cf


def g_terms(frame: UnbarredFrame, cf: ChangeFrame) -> ChangeFrame:
    """G_ij and G_j, each by two routes."""
    L, es, y = frame.L, cf.e_sigma, frame.y
    ies = 1.0 / es
    L_ij, L_ijk, L_i = frame.L_ij, frame.L_ijk, frame.L_i
    half_sig = (L_ij * scal(cf.sigma0, 2) - cf.mu_pair) * 0.5
    # defining expression with the computed D^r_00 substituted
    G_def = (cf.F * scal(ies, 2) - 0.5 * einsum("pijr,pr->pij", L_ijk, cf.D00) + half_sig)
    # form free from the difference tensor
    F_i0, E00, F_b0 = cf.F_i0, cf.E00, cf.F_beta0
    Gs = (E00 - 2.0 * L * ies * F_b0) / (2.0 * L * cf.Lbar)
    ratio = L / cf.Lbar
    sigma_block = (einsum("pijr,pr->pij", L_ijk, cf.sigma_up) * scal(0.5 * L * L, 2)
                   + L_ij * scal(0.5 * L * L / cf.Lbar * cf.sigma_beta, 2) + half_sig
                   + L_ij * scal(ratio * es * cf.sigma0, 2))
    G_free = (cf.F * scal(ies, 2)
              + (outer(L_i, F_i0) + outer(F_i0, L_i)) * scal(ies / L, 2)
              - einsum("pkij,pk->pij", frame.C_up, F_i0) * scal(2.0 * ies, 2)
              + frame.h * scal(Gs, 2) + sigma_block)
    G_vec_def = (einsum("pij,pi->pj", cf.E, y)
                 - einsum("pjr,pr->pj", L_ij, cf.D00) * scal(0.5 * es, 1)
                 + (L_i * scal(cf.sigma0, 1) + cf.sigma_i * scal(L, 1)) * scal(0.5 * es, 1))
    E_j0 = einsum("pji,pi->pj", cf.E, y)
    G_vec_closed = E_j0 - F_i0 + cf.sigma_i * scal(es * L, 1)
    G_vec_printed = E_j0 + F_i0 + cf.sigma_i * scal(es * L, 1)
    cf.G_mat, cf.G_vec = G_def, G_vec_def
    cf.G_mat_free = G_free
    cf.G_vec_closed = G_vec_closed
    cf.G_vec_printed = G_vec_printed
    cf.residuals["derived.G_free_vs_def"] = _rel_max(G_free - G_def, G_def)
    cf.residuals["gterms.G_vec_closed"] = _rel_max(G_vec_closed - G_vec_def, G_vec_def)
    cf.residuals["gterms.G_vec_printed"] = _rel_max(G_vec_printed - G_vec_def, G_vec_def)
    cf.residuals["solve.one_index.Gy_i"] = _rel_max(einsum("pij,pi->pj", G_def, y), G_def)
    cf.residuals["solve.one_index.Gy_j"] = _rel_max(einsum("pij,pj->pi", G_def, y) - cf.B_i, G_def)
    cf.residuals["solve.one_index.G_vec_y"] = _rel_max(einsum("pj,pj->p", G_vec_def, y) - cf.B, cf.B)
    return cf


def d0j(frame: UnbarredFrame, cf: ChangeFrame) -> ChangeFrame:
    """D^r_0j from the one-index system."""
    y = frame.y
    expect = {
        "G_ij y^j = B_i": (einsum("pij,pj->pi", cf.G_mat, y), cf.B_i),
        "G_j y^j = B": (einsum("pj,pj->p", cf.G_vec, y), cf.B),
    }
    cf.D0j = matsumoto_solve("one-index", cf.G_mat, cf.G_vec, frame, cf, expect=expect)
    r1, r2 = plug_back(cf.D0j, cf.G_mat, cf.G_vec, frame, cf)
    cf.residuals["solve.one_index.plugback.i"] = r1
    cf.residuals["solve.one_index.plugback.ii"] = r2
    cf.residuals["D0j.y_vs_D00"] = _rel_max(einsum("prj,pj->pr", cf.D0j, y) - cf.D00, cf.D00)
    return cf


def djk(frame: UnbarredFrame, cf: ChangeFrame) -> ChangeFrame:
    """H_ijk, H_jk and the difference tensor D^i_jk."""
    L_ij, L_ijk, es, s = frame.L_ij, frame.L_ijk, cf.e_sigma, cf.sigma_i
    D0 = cf.D0j                                          # D0[p, r, i] = D^r_0i
    H3 = 0.5 * (einsum("pjkr,pri->pijk", L_ijk, D0)
                - einsum("pijr,prk->pijk", L_ijk, D0)
                - einsum("pikr,prj->pijk", L_ijk, D0)
                + einsum("pj,pik->pijk", s, L_ij)
                + einsum("pk,pij->pijk", s, L_ij)
                - einsum("pi,pjk->pijk", s, L_ij))
    LD = einsum("pjr,prk->pjk", L_ij, D0)                # L_jr D^r_0k = G_jk
    H2 = cf.E - (LD + LD.swapaxes(-1, -2) - cf.sigma_pair) * scal(0.5 * es, 2)
    y = frame.y
    expect = {
        "H_ijk = H_ikj": (H3, H3.swapaxes(-1, -2)),
        "H_ijk y^j = G_ik": (einsum("pijk,pj->pik", H3, y), cf.G_mat),
        "H_jk y^j = G_k": (einsum("pjk,pj->pk", H2, y), cf.G_vec),
    }
    cf.residuals["solve.two_index.H_sym"] = _rel_max(H3 - H3.swapaxes(-1, -2), H3)
    cf.residuals["solve.two_index.Hy_i"] = _rel_max(einsum("pijk,pi->pjk", H3, y), H3)
    cf.residuals["solve.two_index.Hy_j"] = _rel_max(einsum("pijk,pj->pik", H3, y) - cf.G_mat, H3)
    cf.residuals["solve.two_index.H2y"] = _rel_max(einsum("pjk,pj->pk", H2, y) - cf.G_vec, H2)
    cf.H3, cf.H2 = H3, H2
    cf.D = matsumoto_solve("two-index", H3, H2, frame, cf, expect=expect)
    r1, r2 = plug_back(cf.D, H3, H2, frame, cf)
    cf.residuals["solve.two_index.plugback.i"] = r1
    cf.residuals["solve.two_index.plugback.ii"] = r2
    cf.residuals["D.sym"] = _rel_max(cf.D - cf.D.swapaxes(-1, -2), cf.D)
    cf.residuals["D.y_vs_D0j"] = _rel_max(einsum("pijk,pk->pij", cf.D, y) - cf.D0j, cf.D0j)
    cf.residuals["D.yy_vs_D00"] = _rel_max(einsum("pijk,pj,pk->pi", cf.D, y, y) - cf.D00, cf.D00)
    return cf


def change_frame(frame: UnbarredFrame, inputs: ChangeInputs) -> ChangeFrame:
    """Run the complete closed-form pipeline."""
    cf = barred_metric(frame, inputs)
    barred_cartan(frame, cf)
    ef_tensors(frame, cf)
    d00(frame, cf)
    g_terms(frame, cf)
    d0j(frame, cf)
    djk(frame, cf)
    return cf


# -- special cases ---------------------------------------------------------------------
SPECIAL_CASES = ("conformal", "c_conformal", "h_conformal", "randers", "beta_change")


def contracted_torsion(frame: UnbarredFrame) -> Jet:
    """C^i = g^jk C^i_jk."""
    return einsum("pjk,pijk->pi", frame.g_inv, frame.C_up)


def _jet_is_zero(j: Jet, tol: float) -> bool:
    return float(np.max(np.abs(j.c))) <= tol if j.c.size else True


def check_hypothesis(case: str, frame: UnbarredFrame, cf: ChangeFrame, tol: float = 1e-8):
    """Raise :class:`HypothesisViolated` unless the case's hypothesis holds."""
    if case not in SPECIAL_CASES:
        raise ValueError(f"unknown special case {case!r}")
    if case in ("conformal", "c_conformal", "h_conformal"):
        if not _jet_is_zero(cf.b, tol):
            raise HypothesisViolated(f"{case}: b is not identically zero")
    if case in ("randers", "beta_change"):
        if not _jet_is_zero(cf.sigma, tol):
            raise HypothesisViolated(f"{case}: sigma is not identically zero")
    if case == "randers" and frame.C.abs_max() > tol:
        raise HypothesisViolated("randers: base metric is not Riemannian (C != 0)")
    if case == "c_conformal":
        r = einsum("prjk,pj->prk", frame.C_up, cf.sigma_up).abs_max()
        if r > tol:
            raise HypothesisViolated(f"c_conformal: C^r_jk sigma^j = {r:.3e}")
    if case == "h_conformal":
        n = frame.n
        lhs = einsum("prjk,pr->pjk", frame.C_up, cf.sigma_i)
        coef = einsum("pi,pi->p", contracted_torsion(frame), cf.sigma_i) / (n - 1)
        r = (lhs - frame.h * scal(coef, 2)).abs_max()
        if r > tol * (1.0 + lhs.abs_max()):
            raise HypothesisViolated(f"h_conformal: condition residual {r:.3e}")


def _delta_sigma_terms(frame: UnbarredFrame, s_low: Jet, s_up: Jet) -> Jet:
    n = frame.n
    eye = frame.g.ctx.constant(np.broadcast_to(np.eye(n), frame.g.shape))
    return (einsum("prk,pj->prjk", eye, s_low) + einsum("prj,pk->prjk", eye, s_low)
            - einsum("pjk,pr->prjk", frame.g, s_up))


def special_case_d(case: str, frame: UnbarredFrame, cf: ChangeFrame, *,
                   check: bool = True, tol: float = 1e-8) -> Jet:
    """Closed-form difference tensor of one of the special cases."""
    if check:
        check_hypothesis(case, frame, cf, tol)
    L, y, C_up = frame.L, frame.y, frame.C_up
    if case == "conformal":
        s_low, s_up = cf.sigma_i, cf.sigma_up
        C_k = einsum("prkj,pj->prk", C_up, s_up)        # C^r_k = C^r_kj sigma^j
        C_low = einsum("pjrk,pj->prk", C_up, s_low)     # C_rk = C^j_rk sigma_j
        y_low = einsum("pjr,pr->pj", frame.g, y)
        cc = (einsum("pmjk,prm->prjk", C_up, C_k) - einsum("prjm,pmk->prjk", C_up, C_k)
              - einsum("prkm,pmj->prjk", C_up, C_k))
        lin = (C_up * scal(cf.sigma0, 3) - einsum("prk,pj->prjk", C_k, y_low)
               - einsum("prj,pk->prjk", C_k, y_low) + einsum("pjk,pr->prjk", C_low, y))
        return cc * scal(L * L, 3) - lin + _delta_sigma_terms(frame, s_low, s_up)
    if case == "c_conformal":
        return (_delta_sigma_terms(frame, cf.sigma_i, cf.sigma_up)
                - C_up * scal(cf.sigma0, 3))
    if case == "h_conformal":
        n = frame.n
        coef = einsum("pi,pi->p", contracted_torsion(frame), cf.sigma_i) / (n - 1)
        rho = cf.sigma_i + frame.L_i * scal(L * coef, 1)
        rho_up = einsum("pij,pj->pi", frame.g_inv, rho)
        rho0 = einsum("pi,pi->p", rho, y)
        last = einsum("pr,pj,pk->prjk", frame.l_up, frame.L_i, frame.L_i) * scal(coef * L, 3)
        return _delta_sigma_terms(frame, rho, rho_up) - C_up * scal(rho0, 3) - last
    # randers / beta_change: sigma = 0 blocks built from the Matsumoto-type G tensors
    F_i0 = einsum("pij,pj->pi", cf.F, y)
    E00 = einsum("pij,pi,pj->p", cf.E, y, y)
    F_b0 = einsum("pi,pi->p", F_i0, cf.b_up)
    K = (E00 - 2.0 * L * F_b0) / (2.0 * L * cf.Lbar)
    G = (cf.F + (outer(frame.L_i, F_i0) + outer(F_i0, frame.L_i)) * scal(1.0 / L, 2)
         + frame.h * scal(K, 2))
    if case == "beta_change":
        G = G - 2.0 * einsum("pkij,pk->pij", C_up, F_i0)
    G_vec = einsum("pji,pj->pi", cf.E, y) - F_i0
    up = einsum("pri,pij->prj", frame.g_inv, G)
    G_beta = einsum("pi,pij->pj", cf.b_up, G)
    D0 = (up * scal(L, 2)
          + einsum("pj,pr->prj", (G_vec - G_beta * scal(L, 1)) * scal(L / cf.Lbar, 1), frame.l_up))
    L_ijk = frame.L_ijk
    H3 = 0.5 * (einsum("pjkr,pri->pijk", L_ijk, D0) - einsum("pijr,prk->pijk", L_ijk, D0)
                - einsum("pikr,prj->pijk", L_ijk, D0))
    H2 = cf.E - 0.5 * (G + G.swapaxes(-1, -2))
    H_up = einsum("pir,prjk->pijk", frame.g_inv, H3)
    H_beta = einsum("pi,pijk->pjk", cf.b_up, H3)
    return (H_up * scal(L, 3)
            + einsum("pjk,pi->pijk", (H2 - H_beta * scal(L, 2)) * scal(L / cf.Lbar, 2),
                     frame.l_up))


# -- barred spray, connection and torsions ---------------------------------------------
@dataclass
class BarredDerived:
    S: Jet
    N: Jet
    Gamma: Jet
    C_up: Jet
    B: Jet
    P: Jet
    R_readings: dict
    P_low: Jet


def barred_derived(frame: UnbarredFrame, cf: ChangeFrame) -> BarredDerived:
    """Barred spray, nonlinear connection, connection and torsions from D."""
    S = frame.S + cf.D00
    N = frame.N + cf.D0j
    Gamma = frame.Gamma + cf.D
    C_up = frame.C_up + cf.A
    B = cf.D0j.grad_y()                                  # B[p,i,j,k] = dy_k D^i_0j
    P = frame.P - cf.D + B
    readings = {}
    for deriv_name, (Nc, Gc) in {"unbarred": (frame.N, frame.Gamma),
                                 "barred": (N, Gamma)}.items():
        D0_cov = h_cov(cf.D0j, "ud", Nc, Gc)             # [p,i,j,k] = D^i_0j|k
        Q = D0_cov - einsum("pijr,prk->pijk", B + frame.P, cf.D0j)
        U = Q - Q.swapaxes(-1, -2)
        readings[f"+{deriv_name}"] = frame.R + U
        readings[f"-{deriv_name}"] = frame.R - U
    L, tau = frame.L, cf.tau
    D0 = cf.D0j
    bracket = (einsum("phjkr,pr->phjk", frame.L_ijkl, cf.D00)
               + einsum("phjr,prk->phjk", frame.L_ijk, D0)
               + einsum("phkr,prj->phjk", frame.L_ijk, D0)
               + einsum("pjkr,prh->phjk", frame.L_ijk, D0)
               - frame.L_ijk * scal(cf.sigma0, 3))
    P_low_unbarred = einsum("pih,pijk->phjk", frame.g, frame.P)
    P_low = P_low_unbarred * scal(tau, 3) - bracket * scal(0.5 * tau * L, 3)
    return BarredDerived(S, N, Gamma, C_up, B, P, readings, P_low)


# -- direct recomputation on the changed metric ----------------------------------------
def barred_function(metric: MetricSpec | Callable, chg: FieldSpec) -> Callable:
    f = metric.function() if isinstance(metric, MetricSpec) else metric
    s = chg.sigma_function()
    bf = chg.b_function()
    n = chg.n

    def fbar(xs, ys):
        bx = bf(xs)
        return jets.exp(s(xs)) * f(xs, ys) + sum(bx[i] * ys[i] for i in range(n))

    return fbar


@dataclass
class Evaluation:
    """Everything computed for one (metric, change) pair on a batch of points."""

    seeds: Seeds
    frame: UnbarredFrame
    inputs: ChangeInputs
    cf: ChangeFrame
    direct: UnbarredFrame

    @property
    def derived(self) -> BarredDerived:
        if not hasattr(self, "_derived"):
            self._derived = barred_derived(self.frame, self.cf)
        return self._derived


def evaluate_change(metric: MetricSpec | Callable, chg: FieldSpec, points, ctx, *,
                    direct: bool = True) -> Evaluation:
    """Frames of L and Lbar plus the closed-form change pipeline on ``points``.

    With ``direct=False`` the frame of Lbar is skipped (``Evaluation.direct``
    is None).
    """
    x, y = points_arrays(points)
    seeds = Seeds.at(ctx, x, y)
    L = eval_metric_jet(metric, seeds)
    frame = compute_frame(L, seeds.y)
    inputs = ChangeInputs.build(chg, seeds)
    cf = change_frame(frame, inputs)
    if not direct:
        return Evaluation(seeds, frame, inputs, cf, None)
    try:
        Lbar = eval_metric_jet(barred_function(metric, chg), seeds)
        direct = compute_frame(Lbar, seeds.y)
    except DegenerateMetric as exc:
        raise InvalidChange(str(exc)) from exc
    return Evaluation(seeds, frame, inputs, cf, direct)


# -- classification of changes ---------------------------------------------------------
@dataclass
class Classification:
    is_homothetic: bool
    is_b_parallel: bool
    D_is_zero: bool
    zero_criterion_verdict: str
    special_case_verdict: str
    max_sigma_i: float
    max_b_cov: float
    max_D: float

    def as_tuple(self):
        return (self.is_homothetic, self.is_b_parallel, self.D_is_zero,
                self.zero_criterion_verdict, self.special_case_verdict)


def classify_change(chg: FieldSpec, metric: MetricSpec, points, ctx, *,
                    homothetic_tol: float = 1e-10, parallel_tol: float = 1e-9,
                    zero_tol: float = 1e-8, min_samples: int = 30,
                    evaluation: Evaluation | None = None) -> Classification:
    """Evaluate the homothety / parallelism / vanishing predicates and check
    that the zero-difference criterion and the nonzero special cases hold on this instance."""
    if len(points) < min_samples:
        raise InsufficientSamples(f"need >= {min_samples} points, got {len(points)}")
    ev = evaluation or evaluate_change(metric, chg, points, ctx)
    cf = ev.cf
    ms = cf.sigma_i.abs_max()
    mb = cf.b_cov.abs_max()
    md = cf.D.abs_max()
    hom, par, dz = ms <= homothetic_tol, mb <= parallel_tol, md <= zero_tol
    ok_a = (not (par and dz)) or hom
    ok_b = (not hom) or (par == dz)
    verdict_B = "pass" if ok_a and ok_b else "fail"
    ok_c = True
    if chg.is_conformal:
        ok_c &= dz == hom
    if chg.is_beta_change:
        ok_c &= dz == par
    verdict_C = "pass" if ok_c else "fail"
    return Classification(hom, par, dz, verdict_B, verdict_C, ms, mb, md)


# -- admissibility ---------------------------------------------------------------------
def dual_norm(metric: MetricSpec, x, b) -> float:
    """max over y != 0 of b_i y^i / L(x, y).

    Exact for Riemannian kinds; otherwise a direction search refined by a
    local optimiser.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    a = metric.metric_matrix()
    if a is not None:
        return float(np.sqrt(b @ np.linalg.solve(a(x), b)))
    f = metric.function()
    n = len(x)
    if n == 2:
        t = np.linspace(0.0, 2 * np.pi, 3600, endpoint=False)
        dirs = np.stack([np.cos(t), np.sin(t)], -1)
    else:
        dirs = np.random.default_rng(0).standard_normal((20000, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    xs = [np.full(len(dirs), xi) for xi in x]
    ratio = (dirs @ b) / f(xs, list(dirs.T))
    start = dirs[int(np.argmax(ratio))]

    def neg(v):
        return -float(v @ b) / float(f(list(x), list(v)))

    best = minimize(neg, start, method="Nelder-Mead",
                    options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    return float(max(ratio.max(), -best.fun))


def is_admissible(metric: MetricSpec, chg: FieldSpec, xs, margin: float = 1e-9) -> bool:
    """True when exp(sigma(x)) exceeds the dual norm of b(x) at every ``x``.

    This is the condition for Lbar to be positive on every nonzero y.
    """
    s = chg.sigma_function()
    bf = chg.b_function()
    for x in np.atleast_2d(np.asarray(xs, dtype=float)):
        bx = np.array([float(v) for v in bf(list(x))])
        if not np.any(bx):
            continue
        if np.exp(float(s(list(x)))) - dual_norm(metric, x, bx) <= margin:
            return False
    return True
