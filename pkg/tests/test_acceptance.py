"""Acceptance criteria for the library, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line, bypassing output
capture, alongside its assertion.  The full verification run over the
default catalog is shared through module-scoped fixtures.
"""
import time

import pytest

from finslerlab import catalog as cat
from finslerlab.verify import RunConfig, reports_to_json, run, run_suite

N2_BUDGET_S = 120.0
TOTAL_BUDGET_S = 600.0
SAMPLES = 50

_timings = {}


@pytest.fixture(scope="module")
def reports_n2():
    t = time.perf_counter()
    reports = run(RunConfig(n=2, samples=SAMPLES, seed=0))
    _timings["n2"] = time.perf_counter() - t
    return reports


@pytest.fixture(scope="module")
def diff_suite_n3():
    t = time.perf_counter()
    reports = run_suite("theorem_A", RunConfig(n=3, samples=SAMPLES, seed=0,
                                               suites=("theorem_A",)))
    _timings["n3"] = time.perf_counter() - t
    return reports


def _select(reports, *ids):
    return [r for r in reports if r.id in ids]


@pytest.fixture
def announce(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def _worst(reports):
    return max((r.max_rel for r in reports), default=float("nan"))


def test_criterion_1_difference_tensor_matches_direct(reports_n2, diff_suite_n3, announce):
    n2 = _select(reports_n2, "diff.D")
    n3 = _select(diff_suite_n3, "diff.D")
    ok = (len(n2) == 48 and len(n3) == 48
          and all(r.samples >= SAMPLES and r.max_rel <= 1e-7 for r in n2 + n3)
          and _timings["n2"] <= N2_BUDGET_S
          and _timings["n2"] + _timings["n3"] <= TOTAL_BUDGET_S)
    detail = (f"n=2 worst {_worst(n2):.2e} over {len(n2)} combos in {_timings['n2']:.0f}s; "
              f"n=3 worst {_worst(n3):.2e} over {len(n3)} combos in {_timings['n3']:.0f}s")
    assert announce(1, ok, detail), [(r.case, r.max_rel) for r in n2 + n3 if r.max_rel > 1e-7]


def test_criterion_2_solver_plug_backs_and_compatibility(reports_n2, announce):
    plug = _select(reports_n2, "solve.vector.plugback", "solve.one_index.plugback", "solve.two_index.plugback")
    compat = _select(reports_n2, "solve.one_index.compat", "solve.two_index.compat")
    ok = (len(plug) == 3 * 48 and len(compat) == 2 * 48
          and all(r.max_rel <= 1e-10 for r in plug)
          and all(r.max_rel <= 1e-9 and r.verdict == "pass" for r in compat))
    assert announce(2, ok, f"plug-back worst {_worst(plug):.2e}, "
                           f"compatibility worst {_worst(compat):.2e}")


def test_criterion_3_barred_metric_formulas(reports_n2, announce):
    ids = ("barred.gbar", "barred.gbar_inv", "barred.Cbar", "barred.dCbar")
    reps = _select(reports_n2, *ids)
    ok = len(reps) == 4 * 48 and all(r.max_rel <= 1e-9 for r in reps)
    detail = ", ".join(f"{i} {_worst(_select(reps, i)):.2e}" for i in ids)
    assert announce(3, ok, detail)


def test_criterion_4_special_cases(reports_n2, announce):
    reps = [r for r in reports_n2 if r.suite == "specializations"]
    present = {r.id for r in reps}
    required = {"special.conformal", "special.c_conformal", "special.randers",
                "special.beta_change"}
    c_conf_riemannian = all(r.case.split("/")[0] in ("euclidean", "riemannian")
                            for r in _select(reps, "special.c_conformal"))
    ok = required <= present and c_conf_riemannian and all(r.max_rel <= 1e-8 for r in reps)
    assert announce(4, ok, f"{len(reps)} instances over {sorted(present)}, "
                           f"worst {_worst(reps):.2e}")


def test_criterion_5_barred_connection_formulas(reports_n2, announce):
    limits = {"derived.dD00_jets": 1e-8, "derived.G_free": 1e-9, "derived.S": 1e-8,
              "derived.N": 1e-8, "derived.C_up": 1e-9, "derived.P": 1e-5,
              "derived.R": 1e-5, "derived.P_low": 1e-5}
    ok = True
    parts = []
    for ident, limit in limits.items():
        reps = _select(reports_n2, ident)
        ok &= len(reps) == 48 and all(r.max_rel <= limit for r in reps)
        parts.append(f"{ident} {_worst(reps):.1e}")
    readings = {r.notes.split(";")[0] for r in _select(reports_n2, "derived.R")}
    ok &= all(note.startswith("matching reading ") for note in readings)
    assert announce(5, ok, ", ".join(parts) + f"; {sorted(readings)}")


def test_criterion_6_when_difference_tensor_vanishes(reports_n2, announce):
    zero = _select(reports_n2, "classify.homothetic_parallel_D_zero")
    conformal = _select(reports_n2, "classify.conformal_D_nonzero")
    beta = _select(reports_n2, "classify.beta_D_nonzero")
    randers = [r for r in beta if r.case.split("/")[0] in ("euclidean", "riemannian")]
    ok = (zero and conformal and randers
          and all(r.max_abs <= 1e-10 for r in zero)
          and all(r.max_abs >= 1e-4 for r in conformal + beta))
    assert announce(6, ok, (
        f"D zero on {len(zero)} homothetic+parallel (max {max(r.max_abs for r in zero):.1e}); "
        f"min max|D| conformal {min(r.max_abs for r in conformal):.2e}, "
        f"Randers {min(r.max_abs for r in randers):.2e}"))


def test_criterion_7_autodiff_and_identities(reports_n2, announce):
    fd = _select(reports_n2, "jets.fd.L", "jets.fd.sigma", "jets.fd.b")
    ident = _select(reports_n2, "geom.euler_L", "geom.Cy", "geom.hy", "geom.yGamma_N",
                    "geom.metricity")
    ok = (len(fd) == 3 * 48 and len(ident) == 5 * 4
          and all(r.max_rel <= 1e-5 for r in fd) and all(r.max_rel <= 1e-8 for r in ident))
    assert announce(7, ok, f"jets vs differences worst {_worst(fd):.2e}; "
                           f"identities worst {_worst(ident):.2e}")


def test_criterion_8_determinism(announce):
    cfg = RunConfig(metric=cat.default_metrics(2)["randers"], samples=SAMPLES, seed=11)
    first, second = reports_to_json(run(cfg)), reports_to_json(run(cfg))
    ok = first.encode() == second.encode()
    assert announce(8, ok, f"{len(first)} bytes, identical={ok}")
