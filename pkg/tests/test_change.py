import numpy as np
import pytest

from finslerlab import catalog as cat
from finslerlab.catalog import FieldSpec, MetricSpec
from finslerlab.change import (
    A_READINGS,
    a_tensor,
    check_hypothesis,
    classify_change,
    dC_bar,
    dual_norm,
    evaluate_change,
    is_admissible,
    matsumoto_solve,
    plug_back,
    special_case_d,
)
from finslerlab.errors import (
    CompatibilityViolated,
    HypothesisViolated,
    InsufficientSamples,
    InvalidChange,
)
from finslerlab.jets import JetContext, einsum

import oracles

CTX2 = JetContext(2, 5)
EUCLID = MetricSpec("euclidean", 2)
LINEAR_SIGMA = {"kind": "linear", "coeffs": [0.4, -0.3]}
CONST_B = {"kind": "constant", "vector": [0.15, -0.1]}


def _eval(metric, chg, x, y, ctx=CTX2, direct=True):
    return evaluate_change(metric, chg, [cat.make_point(x, y)], ctx, direct=direct)


def _eval_sampled(metric, chg, count=10, seed=3, direct=True):
    pts = cat.sample_points(metric, chg, count, seed)
    return evaluate_change(metric, chg, pts, JetContext(metric.n, 5), direct=direct)


def test_identity_change_is_trivial():
    spec = cat.default_metrics(2)["quartic"]
    ev = _eval_sampled(spec, cat.identity_change(2))
    cf, fr = ev.cf, ev.frame
    np.testing.assert_allclose(cf.Lbar.value, fr.L.value, rtol=1e-15)
    np.testing.assert_allclose(cf.tau.value, 1.0)
    assert cf.mu.abs_max() == 0.0
    np.testing.assert_allclose(cf.gbar.value, fr.g.value, atol=1e-14)
    for t in (cf.A, cf.D00, cf.D0j, cf.D):
        assert t.abs_max() < 1e-13
    assert (dC_bar(fr, cf) - fr.C.grad_y()).abs_max() < 1e-12


def test_randers_tau():
    chg = FieldSpec(2, b={"kind": "constant", "vector": [0.1, 0.0]})
    ev = _eval(EUCLID, chg, [0.0, 0.0], [3.0, 4.0])
    assert ev.cf.Lbar.value[0] == pytest.approx(5.3)
    assert ev.cf.tau.value[0] == pytest.approx(1.06)


def test_inverse_formula_matches_direct_inverse():
    spec = cat.default_metrics(2)["randers"]
    ev = _eval_sampled(spec, FieldSpec(2, LINEAR_SIGMA, CONST_B), count=20)
    cf = ev.cf
    assert (cf.gbar_inv_formula - ev.direct.g_inv).abs_max() < 1e-12
    assert (cf.gbar - ev.direct.g).abs_max() < 1e-12


def test_printed_inverse_coefficients_need_zero_sigma():
    spec = cat.default_metrics(2)["randers"]
    beta_only = _eval_sampled(spec, FieldSpec(2, b=CONST_B)).cf
    assert beta_only.residuals["barred.gbar_inv_printed"] < 1e-12
    both = _eval_sampled(spec, FieldSpec(2, LINEAR_SIGMA, CONST_B)).cf
    assert both.residuals["barred.gbar_inv_printed"] > 1e-3
    assert both.residuals["barred.gbar_inv"] < 1e-12


def test_conformal_change_leaves_cartan_tensor_invariant():
    ev = _eval_sampled(cat.default_metrics(2)["quartic"], FieldSpec(2, LINEAR_SIGMA))
    assert ev.cf.A.abs_max() < 1e-12
    np.testing.assert_allclose(ev.cf.Cbar.value, ev.cf.tau.value[:, None, None, None]
                               * ev.frame.C.value, atol=1e-12)


def test_barred_cartan_tensor_annihilates_y():
    ev = _eval_sampled(cat.default_metrics(2)["quartic"], FieldSpec(2, LINEAR_SIGMA, CONST_B))
    y = ev.frame.y
    assert einsum("pi,pi->p", ev.cf.m, y).abs_max() < 1e-13
    assert einsum("pijk,pk->pij", ev.cf.Cbar, y).abs_max() < 1e-12
    assert (ev.cf.Cbar - ev.direct.C).abs_max() < 1e-11


@pytest.mark.parametrize("n, sigma, expected", [
    (2, False, {"printed": True, "symmetric": True, "exact": True}),
    (3, False, {"printed": False, "symmetric": True, "exact": True}),
    (3, True, {"printed": False, "symmetric": False, "exact": True}),
])
def test_cartan_difference_readings(n, sigma, expected):
    spec = cat.default_metrics(n)["quartic"]
    sig = cat.default_sigmas(n)["linear"] if sigma else {"kind": "zero"}
    chg = FieldSpec(n, sig, cat.default_oneforms(n)["constant"])
    ev = _eval_sampled(spec, chg, count=5, direct=False)
    for reading in A_READINGS:
        res = (a_tensor(ev.frame, ev.cf, reading) - ev.cf.A).abs_max()
        assert (res < 1e-11) == expected[reading], (reading, res)


def test_barred_cartan_derivative_is_minus_one_homogeneous():
    ev = _eval_sampled(cat.default_metrics(2)["randers"], FieldSpec(2, LINEAR_SIGMA, CONST_B))
    dC = dC_bar(ev.frame, ev.cf)
    assert (dC - ev.direct.C.grad_y()).abs_max() < 1e-10
    assert (einsum("pijkr,pr->pijk", dC, ev.frame.y) + ev.cf.Cbar).abs_max() < 1e-11


def test_oneform_covariant_derivative_on_flat_base():
    chg = FieldSpec(2, b=cat.default_oneforms(2)["linear"])
    x, y = np.array([0.3, -0.4]), np.array([1.0, 0.7])
    cf = _eval(EUCLID, chg, x, y).cf
    bf = chg.b_function()
    fd = np.array([[oracles.partial(lambda z: float(bf(list(z))[i]), x, j) for j in range(2)]
                   for i in range(2)])
    np.testing.assert_allclose(cf.b_cov.value[0], fd, atol=1e-8)
    np.testing.assert_allclose(cf.E.value[0], 0.5 * (fd + fd.T), atol=1e-8)
    np.testing.assert_allclose(cf.F.value[0], 0.5 * (fd - fd.T), atol=1e-8)


def test_homothetic_parallel_change_has_no_difference_tensor():
    chg = FieldSpec(2, {"kind": "constant", "value": 0.3}, CONST_B)
    cf = _eval_sampled(EUCLID, chg).cf
    for t in (cf.E, cf.F, cf.sigma_i, cf.sigma_pair, cf.mu_pair, cf.B_i, cf.B, cf.D00,
              cf.G_mat, cf.G_vec, cf.D0j, cf.D):
        assert t.abs_max() < 1e-10


def test_conformal_flat_spray_difference():
    chg = FieldSpec(2, {"kind": "linear", "coeffs": [1.0, 0.0]})
    ev = _eval(EUCLID, chg, [0.0, 0.0], [3.0, 4.0])
    np.testing.assert_allclose(ev.cf.D00.value[0], [-7.0, 24.0], atol=1e-13)
    np.testing.assert_allclose(ev.direct.S.value[0] - ev.frame.S.value[0], [-7.0, 24.0],
                               atol=1e-13)


# Values below come from the jet-free nested-difference oracles in tests/oracles.py.
QUARTIC = MetricSpec("quartic", 2, {"weights": [[0.2, -0.1], [0.05, 0.3]]})
QUARTIC_X, QUARTIC_Y = np.array([0.3, 0.2]), np.array([0.8, -0.6])
QUARTIC_D00 = [0.352701688661, -0.203633127297]
QUARTIC_D0J = [[0.416267036272, -0.032813367922], [0.12711111695, 0.50886997738]]
QUARTIC_D = [[[0.24829467, -0.36271895], [-0.36271895, -0.42893511]],
             [[0.78282807, 0.83191824], [0.83191824, 0.2611072]]]
RANDERS_SBAR = [0.125801295451, -0.118779875128]
RANDERS_NBAR = [[0.082616049782, 0.086369807523], [-0.11731862539, -0.002922614405]]


def test_difference_tensor_matches_frozen_oracle():
    ev = _eval(QUARTIC, FieldSpec(2, LINEAR_SIGMA, CONST_B), QUARTIC_X, QUARTIC_Y, direct=False)
    np.testing.assert_allclose(ev.cf.D00.value[0], QUARTIC_D00, atol=1e-6)
    np.testing.assert_allclose(ev.cf.D0j.value[0], QUARTIC_D0J, atol=1e-6)
    np.testing.assert_allclose(ev.cf.D.value[0], QUARTIC_D, atol=5e-6)


def test_difference_tensor_matches_live_oracle():
    chg = FieldSpec(2, LINEAR_SIGMA, CONST_B)
    f, s, b = QUARTIC.function(), chg.sigma_function(), chg.b_function()

    def L(x, y):
        return float(f(list(x), list(y)))

    def Lbar(x, y):
        bx = [float(v) for v in b(list(x))]
        return float(np.exp(s(list(x)))) * L(x, y) + float(np.dot(bx, y))

    x, y = np.array([-0.5, 0.4]), np.array([1.2, 0.9])
    D_fd = oracles.cartan_connection(Lbar, x, y) - oracles.cartan_connection(L, x, y)
    ev = _eval(QUARTIC, chg, x, y, direct=False)
    np.testing.assert_allclose(ev.cf.D.value[0], D_fd, atol=1e-5)


def test_randers_spray_matches_frozen_oracle():
    chg = FieldSpec(2, b=cat.default_oneforms(2)["linear"])
    bd = _eval(EUCLID, chg, [0.2, -0.1], [1.0, 0.5], direct=False).derived
    np.testing.assert_allclose(bd.S.value[0], RANDERS_SBAR, atol=1e-6)
    np.testing.assert_allclose(bd.N.value[0], RANDERS_NBAR, atol=1e-6)


# -- the two-equation solver --------------------------------------------------------------
@pytest.fixture(scope="module")
def quartic_eval():
    return _eval_sampled(cat.default_metrics(2)["quartic"], FieldSpec(2, LINEAR_SIGMA, CONST_B),
                         direct=False)


@pytest.mark.parametrize("level, rank", [("vector", 0), ("one-index", 1), ("two-index", 2)])
def test_solver_zero_rhs(quartic_eval, level, rank):
    fr, cf = quartic_eval.frame, quartic_eval.cf
    ctx, m = fr.L.ctx, fr.L.shape[0]
    X = matsumoto_solve(level, ctx.constant(np.zeros((m, 2) + (2,) * rank)),
                        ctx.constant(np.zeros((m,) + (2,) * rank)), fr, cf)
    assert X.abs_max() == 0.0


@pytest.mark.parametrize("level, rank", [("vector", 0), ("one-index", 1), ("two-index", 2)])
def test_solver_round_trip(quartic_eval, level, rank):
    fr, cf = quartic_eval.frame, quartic_eval.cf
    ctx, m = fr.L.ctx, fr.L.shape[0]
    X = ctx.constant(np.random.default_rng(rank).normal(size=(m, 2) + (2,) * rank))
    t = "jk"[:rank]
    small = einsum(f"pir,pr{t}->pi{t}", fr.L_ij, X)
    big = einsum(f"pr,pr{t}->p{t}", cf.Lbar_i, X)
    solved = matsumoto_solve(level, small, big, fr, cf)
    assert (solved - X).abs_max() < 1e-10
    assert max(plug_back(solved, small, big, fr, cf)) < 1e-12


def test_solver_rejects_incompatible_rhs(quartic_eval):
    fr, cf = quartic_eval.frame, quartic_eval.cf
    ctx, m = fr.L.ctx, fr.L.shape[0]
    with pytest.raises(CompatibilityViolated):
        matsumoto_solve("vector", ctx.constant(np.ones((m, 2))), ctx.constant(np.ones(m)), fr, cf)


def test_solver_reproduces_closed_form_spray_difference(quartic_eval):
    fr, cf = quartic_eval.frame, quartic_eval.cf
    X = matsumoto_solve("vector", cf.B_i, cf.B, fr, cf)
    assert (X - cf.D00).abs_max() < 1e-12 * (1 + cf.D00.abs_max())


# -- special cases ---------------------------------------------------------------------------
@pytest.mark.parametrize("case, metric, chg", [
    ("conformal", "riemannian", FieldSpec(2, LINEAR_SIGMA)),
    ("conformal", "quartic", FieldSpec(2, LINEAR_SIGMA)),
    ("c_conformal", "riemannian", FieldSpec(2, LINEAR_SIGMA)),
    ("h_conformal", "quartic", FieldSpec(2, LINEAR_SIGMA)),
    ("randers", "riemannian", FieldSpec(2, b=cat.default_oneforms(2)["linear"])),
    ("beta_change", "quartic", FieldSpec(2, b=cat.default_oneforms(2)["linear"])),
])
def test_special_case_matches_general_difference_tensor(case, metric, chg):
    ev = _eval_sampled(cat.default_metrics(2)[metric], chg, direct=False)
    D = special_case_d(case, ev.frame, ev.cf)
    assert (D - ev.cf.D).abs_max() < 1e-9 * (1 + ev.cf.D.abs_max())


def test_conformal_over_riemannian_is_classical():
    ev = _eval_sampled(cat.default_metrics(2)["riemannian"], FieldSpec(2, LINEAR_SIGMA),
                       direct=False)
    s, s_up, g = ev.cf.sigma_i.value, ev.cf.sigma_up.value, ev.frame.g.value
    eye = np.eye(2)
    classical = (np.einsum("rk,pj->prjk", eye, s) + np.einsum("rj,pk->prjk", eye, s)
                 - np.einsum("pjk,pr->prjk", g, s_up))
    np.testing.assert_allclose(ev.cf.D.value, classical, atol=1e-12)


def test_randers_with_constant_oneform_on_flat_base():
    ev = _eval_sampled(EUCLID, FieldSpec(2, b=CONST_B), direct=False)
    assert special_case_d("randers", ev.frame, ev.cf).abs_max() < 1e-13
    assert ev.cf.D.abs_max() < 1e-12


@pytest.mark.parametrize("case, metric, chg", [
    ("conformal", "riemannian", FieldSpec(2, LINEAR_SIGMA, CONST_B)),
    ("randers", "riemannian", FieldSpec(2, LINEAR_SIGMA, CONST_B)),
    ("randers", "quartic", FieldSpec(2, b=CONST_B)),
    ("beta_change", "quartic", FieldSpec(2, LINEAR_SIGMA)),
])
def test_special_case_hypotheses_are_enforced(case, metric, chg):
    ev = _eval_sampled(cat.default_metrics(2)[metric], chg, count=5, direct=False)
    with pytest.raises(HypothesisViolated):
        check_hypothesis(case, ev.frame, ev.cf)
    with pytest.raises(HypothesisViolated):
        special_case_d(case, ev.frame, ev.cf)


# -- barred torsions ----------------------------------------------------------------------------
def test_barred_quantities_from_difference_tensor():
    ev = _eval_sampled(cat.default_metrics(2)["randers"], FieldSpec(2, LINEAR_SIGMA, CONST_B))
    bd, d = ev.derived, ev.direct
    assert (bd.S - d.S).abs_max() < 1e-10 * (1 + d.S.abs_max())
    assert (bd.N - d.N).abs_max() < 1e-10 * (1 + d.N.abs_max())
    assert (bd.C_up - d.C_up).abs_max() < 1e-11
    assert (bd.P - d.P).abs_max() < 1e-9 * (1 + d.P.abs_max())
    assert (bd.P_low - einsum("pih,pijk->phjk", d.g, d.P)).abs_max() < 1e-9


def test_curvature_reading_with_unbarred_derivative_matches():
    ev = _eval_sampled(cat.default_metrics(2)["quartic"], FieldSpec(2, LINEAR_SIGMA, CONST_B))
    R = ev.direct.R
    res = {k: (v - R).abs_max() / (1 + R.abs_max()) for k, v in ev.derived.R_readings.items()}
    assert res["+unbarred"] < 1e-10
    assert all(v > 1e-3 for k, v in res.items() if k != "+unbarred")


# -- classification and admissibility -----------------------------------------------------------
@pytest.mark.parametrize("chg, expected", [
    (FieldSpec(2, {"kind": "constant", "value": 0.3}, CONST_B), (True, True, True)),
    (FieldSpec(2, LINEAR_SIGMA), (False, True, False)),
    (FieldSpec(2, b=cat.default_oneforms(2)["linear"]), (True, False, False)),
])
def test_classification_on_flat_base(chg, expected):
    pts = cat.sample_points(EUCLID, chg, 30, seed=0)
    c = classify_change(chg, EUCLID, pts, CTX2)
    assert c.as_tuple()[:3] == expected
    assert c.zero_criterion_verdict == "pass" and c.special_case_verdict == "pass"


def test_classification_needs_enough_samples():
    pts = cat.sample_points(EUCLID, FieldSpec(2), 5, seed=0)
    with pytest.raises(InsufficientSamples):
        classify_change(FieldSpec(2), EUCLID, pts, CTX2)


def test_dual_norm_riemannian_and_numeric():
    assert dual_norm(EUCLID, [0.0, 0.0], [0.3, 0.4]) == pytest.approx(0.5)
    quartic = MetricSpec("quartic", 2)
    # max of b.y over the unit quartic ball is the dual 4/3-norm
    b = np.array([0.3, 0.4])
    exact = np.sum(np.abs(b) ** (4 / 3)) ** 0.75
    assert dual_norm(quartic, [0.0, 0.0], b) == pytest.approx(exact, rel=1e-9)


def test_admissibility():
    xs = [[0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]]
    assert is_admissible(EUCLID, FieldSpec(2, b=CONST_B), xs)
    assert not is_admissible(EUCLID, FieldSpec(2, b={"kind": "constant", "vector": [1.2, 0.0]}),
                             xs)
    # exp(sigma) = exp(-1) < 0.5 at x = (1, 0) with sigma = -x^1
    shrink = FieldSpec(2, {"kind": "linear", "coeffs": [-1.0, 0.0]},
                       {"kind": "constant", "vector": [0.5, 0.0]})
    assert not is_admissible(EUCLID, shrink, [[1.0, 0.0]])


def test_negative_lbar_is_invalid_change():
    chg = FieldSpec(2, b={"kind": "constant", "vector": [1.2, 0.0]})
    with pytest.raises(InvalidChange):
        _eval(EUCLID, chg, [0.0, 0.0], [-1.0, 0.0])
