"""Verification suites: every closed form against an independent route.

A suite walks the (metric, change) combinations of a :class:`RunConfig`,
samples points with a fixed seed, and emits one :class:`VerificationReport`
per (identity, combination).  The identity ids of each suite are fixed in
:data:`SUITES`; :data:`TOLERANCES` holds their default tolerances.

Residuals are reduced per sample point: ``abs_p = max |residual_p|`` and
``rel_p = abs_p / (1 + max |reference_p|)``.  Identities whose true value is
zero have no reference, so their relative and absolute residuals coincide.
A few identities are lower bounds (a quantity that must be large); their
verdict compares ``max_abs`` against the tolerance from below.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import catalog as cat
from .catalog import FieldSpec, MetricSpec, spec_hash
from .change import (
    A_READINGS,
    SPECIAL_CASES,
    Evaluation,
    a_tensor,
    check_hypothesis,
    dC_bar,
    evaluate_change,
    is_admissible,
    matsumoto_solve,
    special_case_d,
)
from .errors import (
    CompatibilityViolated,
    ConfigError,
    EvaluationFailed,
    FinslerError,
    HypothesisViolated,
)
from .geometry import christoffel, frame_for, h_cov, points_arrays
from .jets import Jet, JetContext, einsum

SUITES: dict[str, tuple[str, ...]] = {
    "core_identities": (
        "geom.euler_L", "geom.Cy", "geom.hy", "geom.yGamma_N", "geom.spray_S",
        "geom.metricity", "geom.L_i_hcov", "geom.Py", "geom.riemannian_C",
        "geom.quartic_C_nonzero",
    ),
    "theorem_A": (
        "barred.gbar", "barred.gbar_inv", "barred.Cbar", "barred.dCbar", "barred.A",
        "solve.vector.compat", "solve.vector.plugback", "solve.vector.D00_closed", "gterms.G_vec",
        "solve.one_index.compat", "solve.one_index.plugback", "solve.two_index.compat", "solve.two_index.plugback",
        "diff.D00", "diff.D0j", "diff.D",
    ),
    "specializations": tuple(f"special.{case}" for case in SPECIAL_CASES),
    "section4": (
        "derived.dD00_jets", "derived.G_free", "derived.S", "derived.N", "derived.C_up",
        "derived.P", "derived.R", "derived.P_low",
    ),
    "theorems_BC": (
        "classify.homothetic_parallel_D_zero", "classify.conformal_D_nonzero",
        "classify.beta_D_nonzero",
    ),
    "autodiff_oracle": (
        "jets.fd.L", "jets.fd.sigma", "jets.fd.b", "geom.christoffel_fd",
        "change.b_cov_fd", "derived.dD00_fd",
    ),
}

TOLERANCES: dict[str, float] = {
    "geom.euler_L": 1e-10, "geom.Cy": 1e-8, "geom.hy": 1e-8, "geom.yGamma_N": 1e-8,
    "geom.spray_S": 1e-8, "geom.metricity": 1e-8, "geom.L_i_hcov": 1e-8, "geom.Py": 1e-8,
    "geom.riemannian_C": 1e-12, "geom.quartic_C_nonzero": 1e-2,
    "barred.gbar": 1e-9, "barred.gbar_inv": 1e-9, "barred.Cbar": 1e-9, "barred.dCbar": 1e-9,
    "barred.A": 1e-9, "solve.vector.compat": 1e-9, "solve.vector.plugback": 1e-10,
    "solve.vector.D00_closed": 1e-12, "gterms.G_vec": 1e-9, "solve.one_index.compat": 1e-9,
    "solve.one_index.plugback": 1e-10, "solve.two_index.compat": 1e-9, "solve.two_index.plugback": 1e-10,
    "diff.D00": 1e-8, "diff.D0j": 1e-8, "diff.D": 1e-7,
    **{f"special.{case}": 1e-8 for case in SPECIAL_CASES},
    "derived.dD00_jets": 1e-8, "derived.G_free": 1e-9, "derived.S": 1e-8, "derived.N": 1e-8,
    "derived.C_up": 1e-9, "derived.P": 1e-5, "derived.R": 1e-5, "derived.P_low": 1e-5,
    "classify.homothetic_parallel_D_zero": 1e-10, "classify.conformal_D_nonzero": 1e-4,
    "classify.beta_D_nonzero": 1e-4,
    "jets.fd.L": 1e-5, "jets.fd.sigma": 1e-5, "jets.fd.b": 1e-5,
    "geom.christoffel_fd": 1e-7, "change.b_cov_fd": 1e-8, "derived.dD00_fd": 1e-6,
}

LOWER_BOUNDS = frozenset({
    "geom.quartic_C_nonzero", "classify.conformal_D_nonzero", "classify.beta_D_nonzero",
})

HOMOTHETIC_TOL = 1e-10
PARALLEL_TOL = 1e-9
FD_STEPS = {1: 1e-4, 2: 1e-3, 3: 1e-2}


# -- configuration ------------------------------------------------------------------------
@dataclass
class RunConfig:
    """Everything that determines a verification run.

    ``metric`` / ``change`` select one combination; when either is ``None``
    the default catalog for dimension ``n`` fills it in.
    """

    metric: MetricSpec | None = None
    change: FieldSpec | None = None
    suites: tuple = tuple(SUITES)
    samples: int = 50
    seed: int = 0
    jet_order: int = 5
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    format: str = "json"
    n: int = 2

    _KEYS = ("metric", "change", "suites", "samples", "seed", "jet_order", "tolerances",
             "output", "format", "n")

    def __post_init__(self):
        self.suites = tuple(self.suites)
        bad = [s for s in self.suites if s not in SUITES]
        if bad:
            raise ConfigError(f"unknown suite(s): {', '.join(bad)}")
        unknown = set(self.tolerances) - set(TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown identity in tolerances: {', '.join(sorted(unknown))}")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.jet_order < 5:
            raise ConfigError("jet_order must be >= 5 for the torsion identities")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.metric is not None:
            self.n = self.metric.n
        if self.change is not None and self.change.n != self.n:
            raise ConfigError("metric and change dimensions differ")

    def tolerance(self, ident: str) -> float:
        return float(self.tolerances.get(ident, TOLERANCES[ident]))

    def to_dict(self) -> dict:
        return {
            "metric": None if self.metric is None else self.metric.to_dict(),
            "change": None if self.change is None else self.change.to_dict(),
            "suites": list(self.suites), "samples": self.samples, "seed": self.seed,
            "jet_order": self.jet_order, "tolerances": dict(sorted(self.tolerances.items())),
            "output": self.output, "format": self.format, "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if d.get("metric") is not None:
            d["metric"] = MetricSpec.from_dict(d["metric"])
        if d.get("change") is not None:
            d["change"] = FieldSpec.from_dict(d["change"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(str(exc)) from exc

    def combinations(self) -> list[tuple[str, MetricSpec, FieldSpec]]:
        metrics = ({self.metric.kind: self.metric} if self.metric is not None
                   else cat.default_metrics(self.n))
        if self.change is not None:
            changes = {"custom": self.change}
        else:
            changes = {f"sigma={s}/b={b}": FieldSpec(self.n, sd, bd)
                       for s, sd in cat.default_sigmas(self.n).items()
                       for b, bd in cat.default_oneforms(self.n).items()}
        return [(f"{mn}/{cn}", m, c) for mn, m in metrics.items() for cn, c in changes.items()]


# -- reports ----------------------------------------------------------------------------------
@dataclass
class VerificationReport:
    id: str
    suite: str
    case: str
    residuals: list
    max_abs: float
    max_rel: float
    mean_abs: float
    samples: int
    tolerance: float
    verdict: str
    notes: str
    seed: int
    metric_hash: str
    change_hash: str
    bound: str = "upper"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def _values(a) -> np.ndarray:
    return a.value if isinstance(a, Jet) else np.asarray(a, dtype=float)


def _per_point(a: np.ndarray) -> np.ndarray:
    a = np.abs(a)
    return a.reshape(a.shape[0], -1).max(axis=1) if a.ndim > 1 else a


@dataclass
class Case:
    """One (metric, change) combination with its seeded sample points."""

    label: str
    metric: MetricSpec
    change: FieldSpec
    config: RunConfig
    _points: list | None = None
    _evaluation: Evaluation | None = None
    _ctx: JetContext | None = None

    @property
    def ctx(self) -> JetContext:
        if self._ctx is None:
            self._ctx = JetContext(self.metric.n, self.config.jet_order)
        return self._ctx

    @property
    def points(self) -> list:
        if self._points is None:
            self._points = cat.sample_points(self.metric, self.change, self.config.samples,
                                             self.config.seed)
        return self._points

    def release(self):
        """Drop the cached evaluation; frames are large at n = 3."""
        self._evaluation = None

    @property
    def evaluation(self) -> Evaluation:
        if self._evaluation is None:
            self._evaluation = evaluate_change(self.metric, self.change, self.points, self.ctx)
        return self._evaluation

    def report(self, suite: str, ident: str, residual, reference=None, notes: str = "",
               ) -> VerificationReport:
        r = _per_point(_values(residual))
        if reference is None:
            rel = r
        else:
            rel = r / (1.0 + _per_point(_values(reference)))
        tol = self.config.tolerance(ident)
        max_abs = float(r.max()) if r.size else 0.0
        max_rel = float(rel.max()) if rel.size else 0.0
        if ident in LOWER_BOUNDS:
            bound, verdict = "lower", "pass" if max_abs >= tol else "fail"
            per_point = r
        else:
            bound, verdict = "upper", "pass" if max_rel <= tol else "fail"
            per_point = rel
        return VerificationReport(
            id=ident, suite=suite, case=self.label,
            residuals=[float(v) for v in per_point], max_abs=max_abs, max_rel=max_rel,
            mean_abs=float(r.mean()) if r.size else 0.0, samples=int(r.size), tolerance=tol,
            verdict=verdict, notes=notes, seed=self.config.seed,
            metric_hash=spec_hash(self.metric), change_hash=spec_hash(self.change), bound=bound)

    def failure(self, suite: str, ident: str, exc: Exception) -> VerificationReport:
        return VerificationReport(
            id=ident, suite=suite, case=self.label, residuals=[], max_abs=float("nan"),
            max_rel=float("nan"), mean_abs=float("nan"), samples=0,
            tolerance=self.config.tolerance(ident) if ident in TOLERANCES else 0.0,
            verdict="fail", notes=f"{type(exc).__name__}: {exc}", seed=self.config.seed,
            metric_hash=spec_hash(self.metric), change_hash=spec_hash(self.change))


# -- finite differences ------------------------------------------------------------------------
_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
}


def fd_partial(f: Callable[[np.ndarray], np.ndarray], z, multi_index, h: float | None = None):
    """Mixed partial derivative of ``f`` at ``z`` by a tensor-product central
    stencil with one Richardson step.

    ``z`` has shape ``(m, d)`` (a batch of points) or ``(d,)``; ``f`` maps an
    array of that shape to values with leading axis ``m``.  The step per
    variable is ``h * max(1, |z_v|)`` with ``h`` from :data:`FD_STEPS` by
    total order unless given.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    alpha = tuple(int(a) for a in multi_index)
    order = sum(alpha)
    if order == 0:
        out = np.asarray(f(zb))
        return out[0] if single else out
    if order > 3 or any(a < 0 for a in alpha) or len(alpha) != zb.shape[1]:
        raise EvaluationFailed(f"unsupported multi-index {alpha}")
    h0 = FD_STEPS[order] if h is None else h
    scale = np.maximum(1.0, np.abs(zb))

    def estimate(step):
        acc = 0.0
        axes = [_STENCILS[a] for a in alpha]
        for combo in itertools.product(*[range(len(s[0])) for s in axes]):
            w = 1.0
            shift = np.zeros_like(zb)
            for v, k in enumerate(combo):
                offs, wts = axes[v]
                w *= wts[k]
                shift[:, v] = offs[k] * step * scale[:, v]
            acc = acc + w * np.asarray(f(zb + shift))
        denom = np.prod([(step * scale[:, v]) ** a for v, a in enumerate(alpha)], axis=0)
        return acc / denom.reshape(denom.shape + (1,) * (np.ndim(acc) - 1))

    try:
        out = (4.0 * estimate(h0 / 2) - estimate(h0)) / 3.0
    except FinslerError as exc:
        raise EvaluationFailed(f"field not evaluable near the point: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise EvaluationFailed("non-finite finite-difference estimate")
    return out[0] if single else out


def fd_derivative(f: Callable[[np.ndarray], np.ndarray], p, var: int, order: int = 1,
                  h: float | None = None):
    """``order``-th partial of ``f`` in variable ``var`` at ``p`` (order 1 or 2)."""
    if order not in (1, 2):
        raise EvaluationFailed("fd_derivative supports order 1 or 2")
    p = np.asarray(p, dtype=float)
    alpha = [0] * p.shape[-1]
    alpha[var] = order
    return fd_partial(f, p, alpha, h)


def _multi_indices(nvars: int, max_order: int):
    for total in range(1, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), total):
            alpha = [0] * nvars
            for v in combo:
                alpha[v] += 1
            yield tuple(alpha)


def _split(z: np.ndarray, n: int):
    return [z[:, i] for i in range(n)], [z[:, n + i] for i in range(n)]


# -- suites --------------------------------------------------------------------------------------
def _core_identities(case: Case) -> list:
    s = "core_identities"
    ctx = case.ctx
    points = cat.sample_points(case.metric, None, case.config.samples, case.config.seed)
    seeds, fr = frame_for(case.metric, points, ctx)
    y = fr.y
    out = [
        case.report(s, "geom.euler_L", einsum("pi,pi->p", fr.L_i, y) - fr.L, fr.L),
        case.report(s, "geom.Cy", einsum("pijk,pk->pij", fr.C, y), None),
        case.report(s, "geom.hy", einsum("pij,pj->pi", fr.h, y), None),
        case.report(s, "geom.yGamma_N", einsum("pijk,pj->pik", fr.Gamma, y) - fr.N, fr.N),
        case.report(s, "geom.spray_S", einsum("pijk,pj,pk->pi", fr.Gamma, y, y) - fr.S, fr.S),
        case.report(s, "geom.metricity", h_cov(fr.g, "dd", fr.N, fr.Gamma), None),
        case.report(s, "geom.L_i_hcov", h_cov(fr.L_i, "d", fr.N, fr.Gamma), None),
        case.report(s, "geom.Py", einsum("pijk,pj->pik", fr.P, y), fr.P),
    ]
    if case.metric.is_riemannian:
        out.append(case.report(s, "geom.riemannian_C", fr.C, None))
    if case.metric.kind == "quartic":
        out.append(case.report(s, "geom.quartic_C_nonzero", fr.C, None))
    return out


def _theorem_A(case: Case) -> list:
    s = "theorem_A"
    try:
        ev = case.evaluation
    except CompatibilityViolated as exc:
        return [case.failure(s, "solve.one_index.compat", exc)]
    fr, cf, d = ev.frame, ev.cf, ev.direct
    y = fr.y
    A_notes = "; ".join(
        f"{r} reading max|res|={np.max(np.abs((a_tensor(fr, cf, r) - cf.A).value)):.3e}"
        for r in A_READINGS)
    gi_self = np.max(np.abs((cf.gbar_inv_formula - cf.gbar_inv).value))
    out = [
        case.report(s, "barred.gbar", cf.gbar - d.g, d.g),
        case.report(s, "barred.gbar_inv", cf.gbar_inv_formula - d.g_inv, d.g_inv,
                    notes=f"printed coefficients residual "
                          f"{cf.residuals['barred.gbar_inv_printed']:.3e}; "
                          f"formula vs own inverse {gi_self:.3e}"),
        case.report(s, "barred.Cbar", cf.Cbar - d.C, d.C),
        case.report(s, "barred.dCbar", dC_bar(fr, cf) - d.C.grad_y(), d.C.grad_y()),
        case.report(s, "barred.A", a_tensor(fr, cf, "exact") - (d.C_up - fr.C_up), d.C_up,
                    notes=A_notes),
        case.report(s, "solve.vector.compat", einsum("pi,pi->p", cf.B_i, y), cf.B_i),
        case.report(s, "solve.vector.plugback", _plugback(fr, cf, cf.D00, cf.B_i, cf.B),
                    _stack_ref(cf.B_i, cf.B)),
        case.report(s, "solve.vector.D00_closed", matsumoto_solve("vector", cf.B_i, cf.B, fr, cf) - cf.D00, cf.D00),
        case.report(s, "gterms.G_vec", cf.G_vec_closed - cf.G_vec, cf.G_vec,
                    notes=f"literal E_0i - F_0i reading residual "
                          f"{cf.residuals['gterms.G_vec_printed']:.3e}"),
        case.report(s, "solve.one_index.compat", _stack_ref(
            einsum("pij,pi->pj", cf.G_mat, y),
            einsum("pij,pj->pi", cf.G_mat, y) - cf.B_i,
            einsum("pj,pj->p", cf.G_vec, y) - cf.B), _stack_ref(cf.G_mat, cf.G_vec)),
        case.report(s, "solve.one_index.plugback", _plugback(fr, cf, cf.D0j, cf.G_mat, cf.G_vec),
                    _stack_ref(cf.G_mat, cf.G_vec)),
        case.report(s, "solve.two_index.compat", _stack_ref(
            cf.H3 - cf.H3.swapaxes(-1, -2),
            einsum("pijk,pi->pjk", cf.H3, y),
            einsum("pijk,pj->pik", cf.H3, y) - cf.G_mat,
            einsum("pjk,pj->pk", cf.H2, y) - cf.G_vec), _stack_ref(cf.H3, cf.H2)),
        case.report(s, "solve.two_index.plugback", _plugback(fr, cf, cf.D, cf.H3, cf.H2),
                    _stack_ref(cf.H3, cf.H2)),
        case.report(s, "diff.D00", fr.S + cf.D00 - d.S, d.S),
        case.report(s, "diff.D0j", fr.N + cf.D0j - d.N, d.N),
        case.report(s, "diff.D", fr.Gamma + cf.D - d.Gamma, d.Gamma),
    ]
    return out


def _stack_ref(*arrays) -> np.ndarray:
    flat = [_values(a).reshape(_values(a).shape[0], -1) for a in arrays]
    return np.concatenate(flat, axis=1)


def _plugback(fr, cf, X: Jet, small: Jet, big: Jet) -> np.ndarray:
    t = "jk"[:X.ndim - 2]
    r1 = einsum(f"pir,pr{t}->pi{t}", fr.L_ij, X) - small
    r2 = einsum(f"pr,pr{t}->p{t}", cf.Lbar_i, X) - big
    return _stack_ref(r1, r2)


def _specializations(case: Case) -> list:
    s = "specializations"
    try:
        ev = case.evaluation
    except CompatibilityViolated as exc:
        return [case.failure(s, "special.conformal", exc)]
    fr, cf = ev.frame, ev.cf
    out = []
    for sc in SPECIAL_CASES:
        if sc == "c_conformal" and not case.metric.is_riemannian:
            continue
        try:
            check_hypothesis(sc, fr, cf)
        except HypothesisViolated:
            continue
        Dsc = special_case_d(sc, fr, cf, check=False)
        out.append(case.report(s, f"special.{sc}", Dsc - cf.D, cf.D))
    return out


def _section4(case: Case) -> list:
    s = "section4"
    try:
        ev = case.evaluation
    except CompatibilityViolated as exc:
        return [case.failure(s, "derived.S", exc)]
    fr, cf, d = ev.frame, ev.cf, ev.direct
    bd = ev.derived
    R_res = {name: _per_point((R - d.R).value) / (1.0 + _per_point(d.R.value))
             for name, R in bd.R_readings.items()}
    best = min(R_res, key=lambda k: (float(R_res[k].max()), k))
    R_notes = "; ".join(f"{k}: {float(v.max()):.3e}" for k, v in sorted(R_res.items()))
    P_low_direct = einsum("pih,pijk->phjk", d.g, d.P)
    return [
        case.report(s, "derived.dD00_jets", cf.D00.grad_y() - 2.0 * cf.D0j, cf.D0j),
        case.report(s, "derived.G_free", cf.G_mat_free - cf.G_mat, cf.G_mat),
        case.report(s, "derived.S", bd.S - d.S, d.S),
        case.report(s, "derived.N", bd.N - d.N, d.N),
        case.report(s, "derived.C_up", bd.C_up - d.C_up, d.C_up),
        case.report(s, "derived.P", bd.P - d.P, d.P),
        case.report(s, "derived.R", bd.R_readings[best] - d.R, d.R,
                    notes=f"matching reading {best}; {R_notes}"),
        case.report(s, "derived.P_low", bd.P_low - P_low_direct, P_low_direct),
    ]


def _theorems_BC(case: Case) -> list:
    s = "theorems_BC"
    try:
        ev = case.evaluation
    except CompatibilityViolated as exc:
        return [case.failure(s, "classify.homothetic_parallel_D_zero", exc)]
    cf = ev.cf
    ms, mb = cf.sigma_i.abs_max(), cf.b_cov.abs_max()
    hom, par = ms <= HOMOTHETIC_TOL, mb <= PARALLEL_TOL
    notes = f"max|sigma_i|={ms:.3e}; max|b_i|j|={mb:.3e}; max|D|={cf.D.abs_max():.3e}"
    out = []
    if hom and par:
        out.append(case.report(s, "classify.homothetic_parallel_D_zero", cf.D, None, notes))
    if case.change.is_conformal and not hom:
        out.append(case.report(s, "classify.conformal_D_nonzero", cf.D, None, notes))
    if case.change.is_beta_change and not par:
        out.append(case.report(s, "classify.beta_D_nonzero", cf.D, None, notes))
    return out


def _autodiff_oracle(case: Case) -> list:
    s = "autodiff_oracle"
    n = case.metric.n
    x, y = points_arrays(case.points)
    z = np.concatenate([x, y], axis=1)
    ctx = case.ctx
    xs, ys = ctx.variables(x, y)
    out = []
    f = case.metric.function()
    sig = case.change.sigma_function()
    bf = case.change.b_function()
    targets = {
        "jets.fd.L": (f(xs, ys), lambda zz: f(*_split(zz, n)), 2 * n),
        "jets.fd.sigma": (sig(xs), lambda zz: np.broadcast_to(
            sig(_split(zz, n)[0]), (zz.shape[0],)), n),
        "jets.fd.b": (None, lambda zz: np.stack(
            [np.broadcast_to(v, (zz.shape[0],)) for v in bf(_split(zz, n)[0])], -1), n),
    }
    bj = bf(xs)
    for ident, (jet, fun, nvars) in targets.items():
        res, ref = [], []
        for alpha in _multi_indices(nvars, 3):
            full = tuple(alpha) + (0,) * (2 * n - nvars)
            fd = fd_partial(fun, z, full)
            if ident == "jets.fd.b":
                exact = np.stack([_jet_or_const(v, full, len(x)) for v in bj], -1)
            else:
                exact = _jet_or_const(jet, full, len(x))
            res.append((exact - fd).reshape(len(x), -1))
            ref.append(np.asarray(exact).reshape(len(x), -1))
        out.append(case.report(s, ident, np.concatenate(res, 1), np.concatenate(ref, 1)))
    a = case.metric.metric_matrix()
    try:
        ev = case.evaluation
    except CompatibilityViolated as exc:
        return out + [case.failure(s, "derived.dD00_fd", exc)]
    fr, cf = ev.frame, ev.cf
    if a is not None:
        Gam = np.stack([christoffel(a, xi) for xi in x])
        out.append(case.report(s, "geom.christoffel_fd", fr.Gamma.value - Gam, Gam))
        bval = np.stack([np.broadcast_to(v, (len(x),)) for v in bf(list(x.T))], -1)
        db = np.stack([fd_partial(lambda zz: np.stack(
            [np.broadcast_to(v, (zz.shape[0],)) for v in bf(list(zz.T))], -1), x,
            np.eye(n, dtype=int)[j]) for j in range(n)], -1)          # db[p, i, j] = d_j b_i
        oracle = db - np.einsum("pr,prij->pij", bval, Gam)
        out.append(case.report(s, "change.b_cov_fd", cf.b_cov.value - oracle, oracle))
    out.append(case.report(s, "derived.dD00_fd", *_dD00_fd(case, x, y, cf)))
    return out


def _jet_or_const(jet, alpha, m):
    if isinstance(jet, Jet):
        return jet.extract(alpha)
    return np.zeros(m)


def _dD00_fd(case: Case, x, y, cf):
    """Half the y-derivative of D^r_00 by finite differences against D^r_0j."""
    n = case.metric.n
    ctx = JetContext(n, 4)
    def D00_at(zz):
        xx, yy = zz[:, :n], zz[:, n:]
        pts = [cat.PointState(xi, yi) for xi, yi in zip(xx, yy)]
        ev = evaluate_change(case.metric, case.change, pts, ctx, direct=False)
        return ev.cf.D00.value

    z = np.concatenate([x, y], axis=1)
    fd = np.stack([fd_partial(D00_at, z, np.eye(2 * n, dtype=int)[n + j])
                   for j in range(n)], -1)                        # [p, r, j]
    exact = cf.D0j.value
    return 0.5 * fd - exact, exact


_SUITE_FUNCS = {
    "core_identities": _core_identities,
    "theorem_A": _theorem_A,
    "specializations": _specializations,
    "section4": _section4,
    "theorems_BC": _theorems_BC,
    "autodiff_oracle": _autodiff_oracle,
}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FINSLERLAB_THREADS", "1")))
    except ValueError:
        return 1


def build_cases(config: RunConfig) -> list[Case]:
    return [Case(label, m, c, config) for label, m, c in config.combinations()]


def _unique_metric_cases(cases: list[Case], config: RunConfig) -> list[Case]:
    seen, unique = set(), []
    for c in cases:
        key = spec_hash(c.metric)
        if key not in seen:
            seen.add(key)
            unique.append(Case(c.metric.kind, c.metric, cat.identity_change(c.metric.n), config))
    return unique


def _map(func, items):
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def run_suite(suite: str, config: RunConfig, cases: list[Case] | None = None) -> list:
    """Run one suite over every combination of ``config``; reports in a fixed order."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}")
    cases = cases if cases is not None else build_cases(config)
    if suite == "core_identities":
        cases = _unique_metric_cases(cases, config)
    func = _SUITE_FUNCS[suite]

    def one(case):
        try:
            return func(case)
        finally:
            case.release()

    return [r for chunk in _map(one, cases) for r in chunk]


def run(config: RunConfig) -> list:
    """Every suite named in ``config``.

    Suites that need the change pipeline share one evaluation per
    combination, which is dropped as soon as that combination is done.
    Reports are ordered by suite, then combination.
    """
    cases = build_cases(config)
    per_case = [s for s in config.suites if s != "core_identities"]

    def one(case):
        try:
            return {s: _SUITE_FUNCS[s](case) for s in per_case}
        finally:
            case.release()

    results = _map(one, cases)
    reports = []
    for suite in config.suites:
        if suite == "core_identities":
            reports.extend(run_suite(suite, config, cases))
        else:
            reports.extend(r for res in results for r in res[suite])
    return reports


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1) + "\n"


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["identity", "case", "max_rel", "tolerance", "verdict"])
    for r in reports:
        w.writerow([r.id, r.case, repr(r.max_rel), repr(r.tolerance), r.verdict])
    return buf.getvalue()


def summarize(reports) -> dict:
    """Per-identity worst case: ``{id: (verdict, worst max_rel, count)}``."""
    out = {}
    for r in reports:
        v, worst, k = out.get(r.id, ("pass", 0.0, 0))
        metric = r.max_abs if r.bound == "lower" else r.max_rel
        if r.bound == "lower":
            worst = metric if k == 0 else min(worst, metric)
        else:
            worst = max(worst, metric)
        out[r.id] = ("fail" if (v == "fail" or not r.passed) else "pass", worst, k + 1)
    return out


# -- parameter scan ----------------------------------------------------------------------------
SCAN_FIELDS = ("sigma_amplitude", "b_magnitude", "status", "max_D", "max_sigma_i",
               "max_b_cov", "homothetic", "parallel", "note")


def scan_grid(metric: MetricSpec, sigma_amplitudes, b_magnitudes, *, samples: int = 20,
              seed: int = 0, jet_order: int = 5) -> list[dict]:
    """max |D| over a grid of changes sigma = a x^1, b = t e_1.

    A cell whose change is not admissible (exp(sigma) <= dual norm of b
    somewhere on the sampling box) or whose points cannot be sampled is
    marked ``invalid``; the scan continues.
    """
    sigma_amplitudes = list(sigma_amplitudes)
    b_magnitudes = list(b_magnitudes)
    if not sigma_amplitudes or not b_magnitudes:
        raise ConfigError("scan grid is empty")
    n = metric.n
    ctx = JetContext(n, jet_order)
    e1 = [1.0] + [0.0] * (n - 1)
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    rows = []
    for a in sigma_amplitudes:
        for t in b_magnitudes:
            sigma = ({"kind": "zero"} if a == 0 else
                     {"kind": "linear", "coeffs": [float(a)] + [0.0] * (n - 1)})
            b = {"kind": "zero"} if t == 0 else {"kind": "constant",
                                                 "vector": [float(t) * v for v in e1]}
            chg = FieldSpec(n, sigma, b)
            row = dict.fromkeys(SCAN_FIELDS, "")
            row.update(sigma_amplitude=float(a), b_magnitude=float(t))
            try:
                probe = np.concatenate([corners, np.zeros((1, n))])
                if not is_admissible(metric, chg, probe):
                    raise ConfigError("exp(sigma) does not dominate the dual norm of b")
                pts = cat.sample_points(metric, chg, samples, seed)
                ev = evaluate_change(metric, chg, pts, ctx, direct=False)
            except FinslerError as exc:
                row.update(status="invalid", note=f"{type(exc).__name__}: {exc}")
                rows.append(row)
                continue
            cf = ev.cf
            ms, mb = cf.sigma_i.abs_max(), cf.b_cov.abs_max()
            row.update(status="ok", max_D=cf.D.abs_max(), max_sigma_i=ms, max_b_cov=mb,
                       homothetic=ms <= HOMOTHETIC_TOL, parallel=mb <= PARALLEL_TOL)
            rows.append(row)
    return rows


def scan_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SCAN_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
