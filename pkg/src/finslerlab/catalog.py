"""Concrete Finsler metrics, scalar fields and 1-forms with known structure.

Every catalog entry is a small declarative spec that serialises to JSON
(``{"kind": ..., ...parameters}``) and compiles to a plain Python function.
The compiled functions take coordinate *sequences* ``x`` and ``y`` whose
items are either :class:`~finslerlab.jets.Jet` objects or floats/arrays, so
the same code path feeds the jet pipeline and the finite-difference oracle.

Metric kinds
    ``euclidean``      L = |y|
    ``riemannian``     L = sqrt(a_ij(x) y^i y^j), ``form`` is
                       ``diagonal_polynomial`` or ``gaussian``
    ``randers``        L = alpha + b_i(x) y^i over a riemannian/euclidean base
    ``conformal_flat`` L = exp(sigma(x)) |y|
    ``quartic``        L = (sum_i w_i(x) (y^i)^4)^(1/4), w_i = exp(W_ik x^k)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import jets
from .errors import ConfigError, InvalidPoint, SamplingExhausted

METRIC_KINDS = ("euclidean", "riemannian", "randers", "conformal_flat", "quartic")
SIGMA_KINDS = ("zero", "constant", "linear", "bump")
ONEFORM_KINDS = ("zero", "constant", "linear")

_METRIC_KEYS = {
    "euclidean": set(),
    "riemannian": {"form", "coeffs", "amplitude", "center", "width", "matrix"},
    "randers": {"base", "b"},
    "conformal_flat": {"sigma"},
    "quartic": {"weights"},
}
_SIGMA_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "linear": {"coeffs"},
    "bump": {"amplitude", "center", "width"},
}
_ONEFORM_KEYS = {"zero": set(), "constant": {"vector"}, "linear": {"matrix", "vector"}}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def spec_hash(obj) -> str:
    """Short stable hash of a JSON-serialisable spec."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:16]


def _check_keys(kind: str, params: dict, allowed: dict, what: str):
    if kind not in allowed:
        raise ConfigError(f"unknown {what} kind {kind!r}; expected one of {sorted(allowed)}")
    extra = set(params) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} for {what} kind {kind!r}")


def _as_float_list(v, n, name):
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


def _as_matrix(v, n, name):
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n, n):
        raise ConfigError(f"{name} must be {n}x{n}, got shape {arr.shape}")
    return arr


# -- scalar fields sigma(x) ---------------------------------------------------------
def validate_sigma(desc: dict, n: int) -> dict:
    desc = dict(desc)
    kind = desc.pop("kind", None)
    _check_keys(kind, desc, _SIGMA_KEYS, "sigma")
    if kind == "constant":
        float(desc["value"])
    elif kind == "linear":
        _as_float_list(desc["coeffs"], n, "sigma coeffs")
    elif kind == "bump":
        float(desc["amplitude"])
        _as_float_list(desc["center"], n, "bump center")
        if float(desc["width"]) <= 0:
            raise ConfigError("bump width must be positive")
    return {"kind": kind, **desc}


def sigma_function(desc: dict, n: int) -> Callable:
    desc = validate_sigma(desc, n)
    kind = desc["kind"]
    if kind == "zero":
        return lambda x: 0.0 * x[0]
    if kind == "constant":
        c = float(desc["value"])
        return lambda x: 0.0 * x[0] + c
    if kind == "linear":
        coeffs = np.asarray(desc["coeffs"], dtype=float)
        return lambda x: sum(coeffs[k] * x[k] for k in range(n))
    amp = float(desc["amplitude"])
    center = np.asarray(desc["center"], dtype=float)
    w2 = float(desc["width"]) ** 2

    def bump(x):
        r2 = sum((x[k] - center[k]) * (x[k] - center[k]) for k in range(n))
        return amp * jets.exp(r2 * (-1.0 / w2))

    return bump


def sigma_is_constant(desc: dict) -> bool:
    kind = desc["kind"]
    if kind in ("zero", "constant"):
        return True
    if kind == "linear":
        return not np.any(np.asarray(desc["coeffs"], dtype=float))
    return float(desc["amplitude"]) == 0.0


# -- 1-forms b_i(x) ---------------------------------------------------------------
def validate_oneform(desc: dict, n: int) -> dict:
    desc = dict(desc)
    kind = desc.pop("kind", None)
    _check_keys(kind, desc, _ONEFORM_KEYS, "b")
    if kind == "constant":
        _as_float_list(desc["vector"], n, "b vector")
    elif kind == "linear":
        _as_matrix(desc["matrix"], n, "b matrix")
        _as_float_list(desc.get("vector", [0.0] * n), n, "b vector")
    return {"kind": kind, **desc}


def oneform_function(desc: dict, n: int) -> Callable:
    """Compile a 1-form descriptor to ``x -> [b_1(x), ..., b_n(x)]``."""
    desc = validate_oneform(desc, n)
    kind = desc["kind"]
    if kind == "zero":
        return lambda x: [0.0 * x[0] for _ in range(n)]
    if kind == "constant":
        v = np.asarray(desc["vector"], dtype=float)
        return lambda x: [0.0 * x[0] + v[i] for i in range(n)]
    M = np.asarray(desc["matrix"], dtype=float)
    v = np.asarray(desc.get("vector", [0.0] * n), dtype=float)
    return lambda x: [sum(M[i, j] * x[j] for j in range(n)) + v[i] for i in range(n)]


def oneform_is_zero(desc: dict) -> bool:
    kind = desc["kind"]
    if kind == "zero":
        return True
    if kind == "constant":
        return not np.any(np.asarray(desc["vector"], dtype=float))
    return (not np.any(np.asarray(desc["matrix"], dtype=float))
            and not np.any(np.asarray(desc.get("vector", 0.0), dtype=float)))


def oneform_sup_norm(desc: dict, n: int, box: float = 1.0) -> float:
    """Upper bound of the Euclidean norm of b over the cube [-box, box]^n."""
    kind = desc["kind"]
    if kind == "zero":
        return 0.0
    if kind == "constant":
        return float(np.linalg.norm(desc["vector"]))
    M = np.asarray(desc["matrix"], dtype=float)
    v = np.asarray(desc.get("vector", [0.0] * n), dtype=float)
    return float(np.linalg.norm(v) + np.linalg.norm(M, 2) * box * np.sqrt(n))


# -- Riemannian forms a_ij(x) ---------------------------------------------------------
def riemannian_matrix(params: dict, n: int) -> Callable:
    """Compile a riemannian ``params`` block to ``x -> a[i][j]`` (nested lists)."""
    form = params.get("form", "diagonal_polynomial")
    if form == "diagonal_polynomial":
        coeffs = _as_matrix(params.get("coeffs", np.zeros((n, n))), n, "coeffs")

        def a(x):
            zero = 0.0 * x[0]
            out = [[zero for _ in range(n)] for _ in range(n)]
            for i in range(n):
                out[i][i] = 1.0 + sum(coeffs[i, k] * x[k] * x[k] for k in range(n))
            return out

        return a
    if form == "gaussian":
        amp = float(params["amplitude"])
        center = _as_float_list(params["center"], n, "center")
        w2 = float(params["width"]) ** 2
        M = _as_matrix(params["matrix"], n, "matrix")
        if not np.allclose(M, M.T):
            raise ConfigError("gaussian perturbation matrix must be symmetric")

        def a(x):
            r2 = sum((x[k] - center[k]) * (x[k] - center[k]) for k in range(n))
            bump = amp * jets.exp(r2 * (-1.0 / w2))
            return [[bump * M[i, j] + (1.0 if i == j else 0.0) for j in range(n)]
                    for i in range(n)]

        return a
    raise ConfigError(f"unknown riemannian form {form!r}")


def _check_riemannian(params: dict, n: int):
    form = params.get("form", "diagonal_polynomial")
    if form == "diagonal_polynomial":
        c = _as_matrix(params.get("coeffs", np.zeros((n, n))), n, "coeffs")
        if np.any(c < 0):
            raise ConfigError("diagonal_polynomial coefficients must be non-negative")
    elif form == "gaussian":
        for key in ("amplitude", "center", "width", "matrix"):
            if key not in params:
                raise ConfigError(f"gaussian riemannian form requires {key!r}")
        M = _as_matrix(params["matrix"], n, "matrix")
        riemannian_matrix(params, n)
        if float(params["width"]) <= 0:
            raise ConfigError("width must be positive")
        lam = np.linalg.eigvalsh(0.5 * (M + M.T)) * float(params["amplitude"])
        if np.min(lam) <= -1.0:
            raise ConfigError("gaussian perturbation is not positive definite on the box")
    else:
        raise ConfigError(f"unknown riemannian form {form!r}")


# -- metric specs -------------------------------------------------------------------
@dataclass(frozen=True)
class MetricSpec:
    kind: str
    n: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 2 <= self.n <= 4:
            raise ConfigError(f"dimension must satisfy 2 <= n <= 4, got {self.n}")
        _check_keys(self.kind, self.params, _METRIC_KEYS, "metric")
        n = self.n
        if self.kind == "riemannian":
            _check_riemannian(self.params, n)
        elif self.kind == "randers":
            base = self.params.get("base", {"kind": "euclidean"})
            base_kind = base.get("kind", "euclidean")
            if base_kind not in ("euclidean", "riemannian"):
                raise ConfigError("randers base must be euclidean or riemannian")
            if base_kind == "riemannian":
                _check_riemannian({k: v for k, v in base.items() if k != "kind"}, n)
            validate_oneform(self.params.get("b", {"kind": "zero"}), n)
        elif self.kind == "conformal_flat":
            validate_sigma(self.params.get("sigma", {"kind": "zero"}), n)
        elif self.kind == "quartic" and "weights" in self.params:
            _as_matrix(self.params["weights"], n, "quartic weights")

    @property
    def is_riemannian(self) -> bool:
        return self.kind in ("euclidean", "riemannian", "conformal_flat")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "params": _plain(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSpec":
        """Accepts ``{"kind", "n", "params": {...}}`` or the parameters inline."""
        d = dict(d)
        try:
            kind = d.pop("kind")
            n = int(d.pop("n"))
        except KeyError as exc:
            raise ConfigError(f"metric spec missing {exc.args[0]!r}") from None
        if "params" in d:
            params = d.pop("params")
            if d:
                raise ConfigError(f"unknown key(s) {sorted(d)} beside 'params' in metric spec")
            if not isinstance(params, dict):
                raise ConfigError("metric 'params' must be an object")
            d = params
        return cls(kind, n, dict(d))

    def to_json(self) -> str:
        return _canonical(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricSpec":
        return cls.from_dict(json.loads(text))

    def function(self) -> Callable:
        """``(x, y) -> L`` over jets or floats."""
        n, p = self.n, self.params

        def euclid(y):
            return jets.sqrt(sum(y[i] * y[i] for i in range(n)))

        if self.kind == "euclidean":
            return lambda x, y: euclid(y)
        if self.kind == "riemannian":
            a = riemannian_matrix(p, n)
            return lambda x, y: _quadratic_root(a(x), y, n)
        if self.kind == "randers":
            base = dict(p.get("base", {"kind": "euclidean"}))
            base_kind = base.pop("kind", "euclidean")
            b = oneform_function(p.get("b", {"kind": "zero"}), n)
            if base_kind == "euclidean":
                def alpha(x, y):
                    return euclid(y)
            else:
                a = riemannian_matrix(base, n)

                def alpha(x, y):
                    return _quadratic_root(a(x), y, n)

            def randers(x, y):
                bx = b(x)
                return alpha(x, y) + sum(bx[i] * y[i] for i in range(n))

            return randers
        if self.kind == "conformal_flat":
            s = sigma_function(p.get("sigma", {"kind": "zero"}), n)
            return lambda x, y: jets.exp(s(x)) * euclid(y)
        weights = np.asarray(p.get("weights", np.zeros((n, n))), dtype=float)

        def quartic(x, y):
            total = 0.0
            for i in range(n):
                y2 = y[i] * y[i]
                term = y2 * y2
                if np.any(weights[i]):
                    term = term * jets.exp(sum(weights[i, k] * x[k] for k in range(n)))
                total = total + term
            return jets.power(total, 0.25)

        return quartic

    def metric_matrix(self) -> Callable | None:
        """``x -> a_ij(x)`` for Riemannian kinds (None otherwise)."""
        n = self.n
        if self.kind == "euclidean":
            return lambda x: np.eye(n)
        if self.kind == "riemannian":
            a = riemannian_matrix(self.params, n)
            return lambda x: np.array([[float(v) for v in row] for row in a(x)])
        if self.kind == "conformal_flat":
            s = sigma_function(self.params.get("sigma", {"kind": "zero"}), n)
            return lambda x: np.exp(2.0 * float(s(x))) * np.eye(n)
        return None


def _quadratic_root(a, y, n):
    q = 0.0
    for i in range(n):
        for j in range(n):
            q = q + a[i][j] * y[i] * y[j]
    return jets.sqrt(q)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- change specs -------------------------------------------------------------------
@dataclass(frozen=True)
class FieldSpec:
    """The pair (sigma, b) defining L -> exp(sigma) L + b_i y^i."""

    n: int
    sigma: dict = field(default_factory=lambda: {"kind": "zero"})
    b: dict = field(default_factory=lambda: {"kind": "zero"})

    def __post_init__(self):
        object.__setattr__(self, "sigma", validate_sigma(self.sigma, self.n))
        object.__setattr__(self, "b", validate_oneform(self.b, self.n))

    @property
    def is_conformal(self) -> bool:
        return oneform_is_zero(self.b)

    @property
    def is_beta_change(self) -> bool:
        return self.sigma["kind"] == "zero" or (
            sigma_is_constant(self.sigma) and self.sigma.get("value", 0.0) == 0.0)

    @property
    def is_homothetic(self) -> bool:
        return sigma_is_constant(self.sigma)

    def sigma_function(self) -> Callable:
        return sigma_function(self.sigma, self.n)

    def b_function(self) -> Callable:
        return oneform_function(self.b, self.n)

    def to_dict(self) -> dict:
        return {"n": self.n, "sigma": _plain(self.sigma), "b": _plain(self.b)}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        d = dict(d)
        extra = set(d) - {"n", "sigma", "b"}
        if extra:
            raise ConfigError(f"unknown key(s) {sorted(extra)} in change spec")
        if "n" not in d:
            raise ConfigError("change spec missing 'n'")
        return cls(int(d["n"]), d.get("sigma", {"kind": "zero"}), d.get("b", {"kind": "zero"}))

    def to_json(self) -> str:
        return _canonical(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FieldSpec":
        return cls.from_dict(json.loads(text))


ChangeSpec = FieldSpec


def identity_change(n: int) -> FieldSpec:
    return FieldSpec(n)


# -- points ----------------------------------------------------------------------
@dataclass(frozen=True)
class PointState:
    """A sample (x, y) on the slit tangent bundle plus validity flags."""

    x: np.ndarray
    y: np.ndarray
    L_positive: bool = True
    y_nonzero: bool = True
    Lbar_positive: bool = True
    gbar_nondegenerate: bool = True

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def valid(self) -> bool:
        return self.L_positive and self.y_nonzero and self.Lbar_positive and self.gbar_nondegenerate


def make_point(x, y) -> PointState:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidPoint("x and y must be 1-d arrays of equal length")
    return PointState(x, y, True, bool(np.linalg.norm(y) > 1e-12))


def evaluate(spec: MetricSpec, p: PointState, ctx: "jets.JetContext"):
    """Jet of L at ``p`` built through jet arithmetic."""
    if ctx.n != spec.n or p.n != spec.n:
        raise InvalidPoint("dimension mismatch between spec, point and jet context")
    if not p.y_nonzero or np.linalg.norm(p.y) <= 1e-12:
        raise InvalidPoint("support element y must be nonzero")
    xs, ys = ctx.variables(p.x, p.y)
    try:
        L = spec.function()(xs, ys)
    except (jets.DomainError, ZeroDivisionError) as exc:
        raise InvalidPoint(str(exc)) from exc
    if np.any(L.value <= 0):
        raise InvalidPoint(f"L <= 0 at x={p.x}, y={p.y}")
    return L


def _fundamental_value(f, x, y, n, ctx):
    xs, ys = ctx.variables(x, y)
    L = f(xs, ys)
    E = 0.5 * L * L
    g = np.array([[E.dy(i).dy(j).value for j in range(n)] for i in range(n)])
    return float(L.value), 0.5 * (g + g.T)


def point_validity(spec: MetricSpec, chg: FieldSpec | None, x, y,
                   *, min_y: float = 1e-12, cond_bound: float = 1e12,
                   min_L: float = 1e-8) -> PointState:
    """Evaluate every validity flag for (x, y) under the metric and change."""
    n = spec.n
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    flags = dict(L_positive=False, y_nonzero=bool(np.linalg.norm(y) > min_y),
                 Lbar_positive=False, gbar_nondegenerate=False)
    if not flags["y_nonzero"]:
        return PointState(x, y, **flags)
    ctx = _small_context(n)
    f = spec.function()
    try:
        L, g = _fundamental_value(f, x, y, n, ctx)
    except (jets.DomainError, ZeroDivisionError):
        return PointState(x, y, **flags)
    flags["L_positive"] = bool(L > min_L) and _is_pd(g, cond_bound)
    if chg is None:
        flags["Lbar_positive"] = flags["gbar_nondegenerate"] = flags["L_positive"]
        return PointState(x, y, **flags)
    s = chg.sigma_function()
    b = chg.b_function()

    def fbar(xs, ys):
        bx = b(xs)
        return jets.exp(s(xs)) * f(xs, ys) + sum(bx[i] * ys[i] for i in range(n))

    try:
        Lb, gb = _fundamental_value(fbar, x, y, n, ctx)
    except (jets.DomainError, ZeroDivisionError):
        return PointState(x, y, **flags)
    flags["Lbar_positive"] = bool(Lb > min_L)
    flags["gbar_nondegenerate"] = flags["Lbar_positive"] and _is_pd(gb, cond_bound)
    return PointState(x, y, **flags)


def _is_pd(g, cond_bound):
    w = np.linalg.eigvalsh(g)
    return bool(w[0] > 0 and w[-1] / w[0] < cond_bound)


_SMALL = {}


def _small_context(n):
    if n not in _SMALL:
        _SMALL[n] = jets.JetContext(n, 2)
    return _SMALL[n]


# Near-degenerate fundamental tensors (the quartic metric close to a
# coordinate axis in y) make finite-difference oracles meaningless.
SAMPLING_COND_BOUND = 1e4


def sample_points(spec: MetricSpec, chg: FieldSpec | None, count: int, seed: int,
                  *, x_box: float = 1.0, y_box: float = 2.0, y_min: float = 0.2,
                  cond_bound: float = SAMPLING_COND_BOUND,
                  max_rejections: int = 1000) -> list[PointState]:
    """Seeded rejection sampling of valid points.

    ``x`` is uniform in ``[-x_box, x_box]^n``; ``y`` is uniform in
    ``[-y_box, y_box]^n`` with ``|y| < y_min`` excluded.  Points where g or
    gbar has condition number ``>= cond_bound`` are rejected.  Raises
    :class:`SamplingExhausted` after ``max_rejections`` consecutive rejections.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    n = spec.n
    out = []
    rejected = 0
    while len(out) < count:
        x = rng.uniform(-x_box, x_box, n)
        y = rng.uniform(-y_box, y_box, n)
        if np.linalg.norm(y) >= y_min:
            p = point_validity(spec, chg, x, y, cond_bound=cond_bound)
            if p.valid:
                out.append(p)
                rejected = 0
                continue
        rejected += 1
        if rejected > max_rejections:
            raise SamplingExhausted(
                f"{max_rejections} consecutive rejections for {spec.kind} after {len(out)} points")
    return out


# -- default catalog ------------------------------------------------------------------
def default_metrics(n: int) -> dict[str, MetricSpec]:
    """The four metric families used by the verification suites."""
    rng = np.random.default_rng(1000 + n)
    M = rng.uniform(-1, 1, (n, n))
    M = 0.5 * (M + M.T)
    M = 0.6 * M / np.max(np.abs(np.linalg.eigvalsh(M)))
    curved = {"form": "gaussian", "amplitude": 1.0, "center": [0.3] + [-0.2] * (n - 1),
              "width": 1.2, "matrix": np.round(M, 6).tolist()}
    b_lin = np.round(0.08 * rng.uniform(-1, 1, (n, n)), 6).tolist()
    b_vec = np.round(0.15 * np.eye(n)[0] - 0.05 * np.eye(n)[-1], 6).tolist()
    W = np.round(0.4 * rng.uniform(-1, 1, (n, n)), 6).tolist()
    return {
        "euclidean": MetricSpec("euclidean", n),
        "riemannian": MetricSpec("riemannian", n, curved),
        "randers": MetricSpec("randers", n, {
            "base": {"kind": "riemannian", **curved},
            "b": {"kind": "linear", "matrix": b_lin, "vector": b_vec}}),
        "quartic": MetricSpec("quartic", n, {"weights": W}),
    }


def default_sigmas(n: int) -> dict[str, dict]:
    return {
        "zero": {"kind": "zero"},
        "constant": {"kind": "constant", "value": 0.3},
        "linear": {"kind": "linear", "coeffs": [0.4, -0.3, 0.2, 0.1][:n]},
        "bump": {"kind": "bump", "amplitude": 0.5, "center": [0.2, -0.1, 0.0, 0.1][:n],
                 "width": 0.8},
    }


def default_oneforms(n: int) -> dict[str, dict]:
    M = np.zeros((n, n))
    M[0, 1], M[1, 0], M[0, 0] = 0.08, -0.05, 0.04
    if n > 2:
        M[2, 2] = 0.05
    return {
        "zero": {"kind": "zero"},
        "constant": {"kind": "constant", "vector": [0.15, -0.1, 0.05, 0.0][:n]},
        "linear": {"kind": "linear", "matrix": M.tolist(), "vector": [0.05, 0.1, -0.05, 0.0][:n]},
    }


def default_combinations(n: int):
    """All (metric, change) pairs of the default catalog, with labels."""
    out = []
    for mname, metric in default_metrics(n).items():
        for sname, sig in default_sigmas(n).items():
            for bname, b in default_oneforms(n).items():
                out.append((f"{mname}/sigma={sname}/b={bname}", metric, FieldSpec(n, sig, b)))
    return out
