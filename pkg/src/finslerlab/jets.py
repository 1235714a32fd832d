"""Truncated multivariate Taylor polynomials ("jets") in the joint variables
``(x^1..x^n, y^1..y^n)``.

A :class:`Jet` carries an array of Taylor coefficients along its last axis.
Every leading axis is an ordinary array axis, so one ``Jet`` object can hold a
whole tensor of jets, or a batch of sample points, or both.  Coefficients are
stored divided by the multi-index factorial, which keeps multiplication a
plain truncated Cauchy product; the factorial is applied only when a
derivative is extracted.

Each jet also records the total order up to which its coefficients are
trustworthy.  Differentiation lowers that order by one, and binary operations
take the minimum of their operands' orders.  Coefficients above a jet's order
are always zero.

Example::

    >>> ctx = JetContext(n=2, order=3)
    >>> x, y = ctx.variables([0.0, 0.0], [3.0, 4.0])
    >>> L = sqrt(y[0] * y[0] + y[1] * y[1])
    >>> float(L.value), round(float(L.extract(ctx.multi_index(y=(1, 0)))), 12)
    (5.0, 0.6)
"""
from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .errors import (
    ContextMismatch,
    DivisionByZeroValue,
    DomainError,
    OrderExceeded,
    SingularValuePart,
)

__all__ = [
    "JetContext",
    "Jet",
    "jet_arith",
    "jet_compose",
    "jet_extract",
    "jet_linear_solve",
    "jet_inverse",
    "einsum",
    "stack",
    "sqrt",
    "exp",
    "log",
    "power",
]

_PAIR = "Y"
_COEF = "Z"


def _enumerate(nvars: int, order: int) -> np.ndarray:
    """All exponent tuples with total degree <= order, graded-lex sorted."""
    rows = [(0,) * nvars]
    for deg in range(1, order + 1):
        for combo in combinations_with_replacement(range(nvars), deg):
            e = [0] * nvars
            for v in combo:
                e[v] += 1
            rows.append(tuple(e))
    # combinations_with_replacement yields each degree block in lex order of
    # the variable lists, i.e. x^1 first.
    return np.array(rows, dtype=np.int64)


class JetContext:
    """Shared multi-index tables for jets in ``2n`` variables up to ``order``."""

    def __init__(self, n: int, order: int = 5, *, div_eps: float = 1e-300,
                 cond_bound: float = 1e12):
        if n < 1:
            raise ValueError("dimension n must be positive")
        if order < 1:
            raise ValueError("truncation order must be >= 1")
        self.n = int(n)
        self.order = int(order)
        self.nvars = 2 * self.n
        self.div_eps = div_eps
        self.cond_bound = cond_bound

        exps = _enumerate(self.nvars, self.order)
        self.exponents = exps
        self.degree = exps.sum(axis=1)
        self.ncoef = len(exps)
        self.factorial = np.array(
            [math.prod(math.factorial(int(e)) for e in row) for row in exps],
            dtype=float)
        base = self.order + 1
        self._weights = base ** np.arange(self.nvars, dtype=np.int64)
        keys = exps @ self._weights
        self._key_order = np.argsort(keys)
        self._sorted_keys = keys[self._key_order]
        self.index = {tuple(int(v) for v in row): i for i, row in enumerate(exps)}

        # number of coefficients with degree <= d, for d = 0..order
        self.ncoef_upto = np.array(
            [int(np.sum(self.degree <= d)) for d in range(self.order + 1)])
        self._build_products()
        self._build_derivatives()

    def __eq__(self, other):
        return (isinstance(other, JetContext)
                and (self.n, self.order) == (other.n, other.order))

    def __hash__(self):
        return hash((self.n, self.order))

    def __repr__(self):
        return f"JetContext(n={self.n}, order={self.order}, ncoef={self.ncoef})"

    def _lookup(self, exps: np.ndarray) -> np.ndarray:
        keys = exps @ self._weights
        pos = np.searchsorted(self._sorted_keys, keys)
        return self._key_order[pos]

    def _build_products(self):
        ia, ib = [], []
        for a in range(self.ncoef):
            room = self.order - self.degree[a]
            bs = np.nonzero(self.degree <= room)[0]
            ia.append(np.full(len(bs), a))
            ib.append(bs)
        ia = np.concatenate(ia)
        ib = np.concatenate(ib)
        ic = self._lookup(self.exponents[ia] + self.exponents[ib])
        perm = np.argsort(ic, kind="stable")
        self._ia, self._ib, ic = ia[perm], ib[perm], ic[perm]
        self._starts = np.searchsorted(ic, np.arange(self.ncoef))
        deg_c = self.degree[ic]
        self.npairs_upto = np.array(
            [int(np.sum(deg_c <= d)) for d in range(self.order + 1)])

    def _build_derivatives(self):
        self._dsrc = np.zeros((self.nvars, self.ncoef), dtype=np.int64)
        self._dfac = np.zeros((self.nvars, self.ncoef))
        low = self.degree < self.order
        for v in range(self.nvars):
            shifted = self.exponents[low].copy()
            shifted[:, v] += 1
            self._dsrc[v, low] = self._lookup(shifted)
            self._dfac[v, low] = shifted[:, v]

    # -- constructors ------------------------------------------------------
    def constant(self, value, shape=None) -> "Jet":
        value = np.asarray(value, dtype=float)
        if shape is not None:
            value = np.broadcast_to(value, shape)
        c = np.zeros(value.shape + (self.ncoef,))
        c[..., 0] = value
        return Jet(self, c, self.order)

    def zeros(self, shape=()) -> "Jet":
        return Jet(self, np.zeros(tuple(shape) + (self.ncoef,)), self.order)

    def seed(self, var: int, value) -> "Jet":
        """Jet of the coordinate variable ``var`` (0..2n-1) at ``value``."""
        if not 0 <= var < self.nvars:
            raise IndexError(f"variable index {var} out of range")
        j = self.constant(value)
        j.c[..., 1 + var] = 1.0
        return j

    def variables(self, x, y):
        """Seed jets for all coordinates.

        ``x`` and ``y`` have shape ``(..., n)``; the result is two lists of
        ``n`` jets whose leading shape is the batch shape ``...``.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[-1] != self.n or y.shape[-1] != self.n:
            raise ValueError(f"expected trailing dimension {self.n}")
        xs = [self.seed(i, x[..., i]) for i in range(self.n)]
        ys = [self.seed(self.n + i, y[..., i]) for i in range(self.n)]
        return xs, ys

    def multi_index(self, x=None, y=None) -> tuple:
        """Exponent tuple over the 2n variables from separate x / y parts."""
        x = tuple(x) if x is not None else (0,) * self.n
        y = tuple(y) if y is not None else (0,) * self.n
        if len(x) != self.n or len(y) != self.n:
            raise ValueError("multi-index parts must have length n")
        return x + y


class Jet:
    """Array of truncated Taylor polynomials sharing one :class:`JetContext`.

    ``c`` has shape ``shape + (ctx.ncoef,)``.  Treat instances as immutable.
    """

    __slots__ = ("ctx", "c", "order")
    __array_ufunc__ = None

    def __init__(self, ctx: JetContext, c: np.ndarray, order: int | None = None):
        self.ctx = ctx
        self.c = c
        self.order = ctx.order if order is None else int(order)

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.c.shape[:-1]

    @property
    def ndim(self) -> int:
        return self.c.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.c[..., 0]

    def __repr__(self):
        return f"Jet(shape={self.shape}, order={self.order}, value={self.value!r})"

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        if any(k is Ellipsis for k in key):
            key = key + (slice(None),)
        return Jet(self.ctx, self.c[key], self.order)

    def __iter__(self):
        for i in range(self.shape[0]):
            yield self[i]

    # -- helpers -----------------------------------------------------------
    def _check(self, other: "Jet"):
        if other.ctx != self.ctx:
            raise ContextMismatch(f"{self.ctx!r} vs {other.ctx!r}")

    def _trimmed(self, c: np.ndarray, order: int) -> "Jet":
        if order < self.ctx.order:
            c[..., self.ctx.ncoef_upto[order]:] = 0.0
        return Jet(self.ctx, c, order)

    def truncate(self, order: int) -> "Jet":
        order = min(order, self.order)
        return self._trimmed(self.c.copy(), order)

    # -- arithmetic ----------------------------------------------------------
    def __neg__(self):
        return Jet(self.ctx, -self.c, self.order)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            order = min(self.order, other.order)
            return self._trimmed(self.c + other.c, order)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        c = np.broadcast_to(self.c, shape + (self.ctx.ncoef,)).copy()
        c[..., 0] += other
        return Jet(self.ctx, c, self.order)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            return _product(self, other)
        other = np.asarray(other, dtype=float)
        return Jet(self.ctx, self.c * other[..., None], self.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        if np.any(np.abs(other) < self.ctx.div_eps):
            raise DivisionByZeroValue("division by a (near) zero constant")
        return Jet(self.ctx, self.c / other[..., None], self.order)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, r):
        if isinstance(r, (int, np.integer)) and r >= 0:
            out = self.ctx.constant(1.0, self.shape)
            base = self
            k = int(r)
            while k:
                if k & 1:
                    out = out * base
                k >>= 1
                if k:
                    base = base * base
            return out if r else out.truncate(self.order)
        return self.power(float(r))

    # -- univariate compositions --------------------------------------------
    def _compose(self, coeffs) -> "Jet":
        """Evaluate ``sum_k coeffs[k] * d**k`` with ``d`` the nilpotent part.

        ``coeffs[k]`` is ``f^(k)(a0) / k!`` (an array over the leading shape).
        """
        d = self.c.copy()
        d[..., 0] = 0.0
        d = Jet(self.ctx, d, self.order)
        r = self.order
        out = self.ctx.constant(coeffs[r])
        for k in range(r - 1, -1, -1):
            out = (d * out) + coeffs[k]
        return out.truncate(self.order)

    def _positive_value(self, name: str) -> np.ndarray:
        a0 = self.value
        if np.any(~(a0 > 0)):
            raise DomainError(f"{name} requires a positive value part, got min {np.min(a0)!r}")
        return a0

    def reciprocal(self) -> "Jet":
        a0 = self.value
        if np.any(np.abs(a0) < self.ctx.div_eps):
            raise DivisionByZeroValue("divisor has a (near) zero value part")
        inv = 1.0 / a0
        coeffs = [inv]
        for _ in range(self.order):
            coeffs.append(-coeffs[-1] * inv)
        return self._compose(coeffs)

    def power(self, r: float) -> "Jet":
        if float(r).is_integer() and r < 0:
            return self.reciprocal() ** int(-r)
        if float(r).is_integer():
            return self ** int(r)
        a0 = self._positive_value(f"pow({r})")
        coeffs = []
        binom = 1.0
        for k in range(self.order + 1):
            coeffs.append(binom * a0 ** (r - k))
            binom *= (r - k) / (k + 1)
        return self._compose(coeffs)

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def exp(self) -> "Jet":
        e0 = np.exp(self.value)
        return self._compose([e0 / math.factorial(k) for k in range(self.order + 1)])

    def log(self) -> "Jet":
        a0 = self._positive_value("log")
        coeffs = [np.log(a0)]
        for k in range(1, self.order + 1):
            coeffs.append((-1.0) ** (k + 1) / (k * a0 ** k))
        return self._compose(coeffs)

    # -- calculus ------------------------------------------------------------
    def diff(self, var: int) -> "Jet":
        """Partial derivative with respect to variable ``var`` (0..2n-1)."""
        if self.order < 1:
            raise OrderExceeded("cannot differentiate an order-0 jet")
        ctx = self.ctx
        c = self.c[..., ctx._dsrc[var]] * ctx._dfac[var]
        return self._trimmed(c, self.order - 1)

    def dx(self, i: int) -> "Jet":
        return self.diff(i)

    def dy(self, i: int) -> "Jet":
        return self.diff(self.ctx.n + i)

    def grad_x(self) -> "Jet":
        """Append a trailing tensor axis holding the x-derivatives."""
        return stack([self.dx(i) for i in range(self.ctx.n)], axis=-1)

    def grad_y(self) -> "Jet":
        """Append a trailing tensor axis holding the y-derivatives."""
        return stack([self.dy(i) for i in range(self.ctx.n)], axis=-1)

    def extract(self, multi_index) -> np.ndarray:
        """Mixed partial derivative for an exponent tuple over all 2n variables."""
        multi_index = tuple(int(m) for m in multi_index)
        if len(multi_index) != self.ctx.nvars:
            raise ValueError(f"multi-index must have length {self.ctx.nvars}")
        if sum(multi_index) > self.order:
            raise OrderExceeded(
                f"derivative of total order {sum(multi_index)} exceeds jet order {self.order}")
        idx = self.ctx.index[multi_index]
        return self.c[..., idx] * self.ctx.factorial[idx]

    # -- array manipulation --------------------------------------------------
    def sum(self, axis=None) -> "Jet":
        if axis is None:
            axis = tuple(range(self.ndim))
        axis = _norm_axes(axis, self.ndim)
        return Jet(self.ctx, self.c.sum(axis=axis), self.order)

    def transpose(self, *axes) -> "Jet":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        axes = tuple(a % self.ndim for a in axes) + (self.ndim,)
        return Jet(self.ctx, self.c.transpose(axes), self.order)

    def swapaxes(self, a: int, b: int) -> "Jet":
        a %= self.ndim
        b %= self.ndim
        return Jet(self.ctx, np.swapaxes(self.c, a, b), self.order)

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Jet(self.ctx, self.c.reshape(tuple(shape) + (self.ctx.ncoef,)), self.order)

    def expand_dims(self, axis: int) -> "Jet":
        axis = axis if axis >= 0 else self.ndim + 1 + axis
        return Jet(self.ctx, np.expand_dims(self.c, axis), self.order)

    def abs_max(self) -> float:
        """Largest absolute value part, for tolerance checks."""
        return float(np.max(np.abs(self.value))) if self.value.size else 0.0


def _norm_axes(axis, ndim):
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _product(a: Jet, b: Jet) -> Jet:
    ctx = a.ctx
    order = min(a.order, b.order)
    npairs = ctx.npairs_upto[order]
    nc = ctx.ncoef_upto[order]
    prod = a.c[..., ctx._ia[:npairs]] * b.c[..., ctx._ib[:npairs]]
    c = np.zeros(prod.shape[:-1] + (ctx.ncoef,))
    c[..., :nc] = np.add.reduceat(prod, ctx._starts[:nc], axis=-1)
    return Jet(ctx, c, order)


def stack(jets: Sequence[Jet], axis: int = 0) -> Jet:
    """Stack jets of equal shape along a new tensor axis."""
    jets = list(jets)
    first = jets[0]
    for j in jets[1:]:
        first._check(j)
    ndim = first.ndim + 1
    axis = axis if axis >= 0 else ndim + axis
    order = min(j.order for j in jets)
    c = np.stack([j.c for j in jets], axis=axis)
    return first._trimmed(c, order) if order < first.ctx.order else Jet(first.ctx, c, order)


# -- einsum over tensor axes ----------------------------------------------------
@lru_cache(maxsize=512)
def _parse(subscripts: str):
    subscripts = subscripts.replace(" ", "")
    if "->" not in subscripts:
        raise ValueError("jet einsum requires an explicit '->' output")
    lhs, out = subscripts.split("->")
    ins = lhs.split(",")
    for s in ins + [out]:
        if _PAIR in s or _COEF in s:
            raise ValueError(f"letters {_PAIR!r} and {_COEF!r} are reserved")
    return tuple(ins), out


def _letters(s: str) -> set:
    return set(s.replace("...", ""))


def _pair(A, sA: str, B, sB: str, sOut: str):
    a_jet, b_jet = isinstance(A, Jet), isinstance(B, Jet)
    if not a_jet and not b_jet:
        return np.einsum(f"{sA},{sB}->{sOut}", A, B)
    if a_jet and b_jet:
        A._check(B)
        ctx = A.ctx
        order = min(A.order, B.order)
        npairs = ctx.npairs_upto[order]
        nc = ctx.ncoef_upto[order]
        prod = np.einsum(f"{sA}{_PAIR},{sB}{_PAIR}->{sOut}{_PAIR}",
                         A.c[..., ctx._ia[:npairs]], B.c[..., ctx._ib[:npairs]])
        c = np.zeros(prod.shape[:-1] + (ctx.ncoef,))
        c[..., :nc] = np.add.reduceat(prod, ctx._starts[:nc], axis=-1)
        return Jet(ctx, c, order)
    if a_jet:
        c = np.einsum(f"{sA}{_COEF},{sB}->{sOut}{_COEF}", A.c, np.asarray(B, dtype=float))
        return Jet(A.ctx, c, A.order)
    c = np.einsum(f"{sA},{sB}{_COEF}->{sOut}{_COEF}", np.asarray(A, dtype=float), B.c)
    return Jet(B.ctx, c, B.order)


def einsum(subscripts: str, *operands):
    """``numpy.einsum`` over the tensor axes of jets and plain arrays.

    Products of two jets are truncated Cauchy products.  Operands are folded
    left to right; an explicit output (``'->'``) is required.
    """
    ins, out = _parse(subscripts)
    if len(ins) != len(operands):
        raise ValueError("operand count does not match subscripts")
    if len(operands) == 1:
        A = operands[0]
        if isinstance(A, Jet):
            return Jet(A.ctx, np.einsum(f"{ins[0]}{_COEF}->{out}{_COEF}", A.c), A.order)
        return np.einsum(f"{ins[0]}->{out}", A)
    acc, s_acc = operands[0], ins[0]
    for k in range(1, len(operands)):
        rest = set(out).union(*(_letters(s) for s in ins[k + 1:]))
        avail = _letters(s_acc) | _letters(ins[k])
        keep = "".join(sorted(ch for ch in avail if ch in rest))
        has_ell = "..." in s_acc or "..." in ins[k]
        s_new = ("..." if has_ell else "") + keep
        if k == len(operands) - 1:
            s_new = out
        acc = _pair(acc, s_acc, operands[k], ins[k], s_new)
        s_acc = s_new
    return acc


# -- spec-level operations --------------------------------------------------------
def jet_arith(op: str, a: Jet, b=None) -> Jet:
    """Dispatch one of add/sub/mul/div/neg/scale."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op == "neg":
        return -a
    if op == "scale":
        if isinstance(b, Jet):
            raise TypeError("scale expects a plain scalar")
        return a * b
    raise ValueError(f"unknown jet operation {op!r}")


def jet_compose(f: str, a: Jet, r: float | None = None) -> Jet:
    """Compose a univariate function (sqrt, exp, log, recip, pow) with a jet."""
    if f == "sqrt":
        return a.sqrt()
    if f == "exp":
        return a.exp()
    if f == "log":
        return a.log()
    if f == "recip":
        return a.reciprocal()
    if f == "pow":
        if r is None:
            raise ValueError("pow requires an exponent r")
        return a.power(r)
    raise ValueError(f"unknown series {f!r}")


def jet_extract(a: Jet, multi_index) -> np.ndarray:
    return a.extract(multi_index)


def jet_linear_solve(A: Jet, rhs) -> Jet:
    """Solve ``A X = rhs`` coefficient layer by coefficient layer.

    ``A`` has tensor shape ``(..., n, n)``; ``rhs`` is ``(..., n)`` or
    ``(..., n, m)`` (jet or array).  A right-hand side with one axis fewer
    than ``A`` is read as a vector.  Each degree layer is a linear system in
    the value part of ``A`` whose right-hand side collects the lower layers.
    """
    ctx = A.ctx
    if not isinstance(rhs, Jet):
        rhs = ctx.constant(rhs)
    A._check(rhs)
    A0 = A.value
    cond = np.linalg.cond(A0)
    if np.any(~np.isfinite(cond)) or np.any(cond > ctx.cond_bound):
        raise SingularValuePart(f"value-part condition number {np.max(cond):.3e}")
    vector = rhs.ndim == A.ndim - 1
    R = rhs.expand_dims(-1) if vector else rhs
    batch = np.broadcast_shapes(A.shape[:-2], R.shape[:-2])
    R = Jet(ctx, np.broadcast_to(R.c, batch + R.shape[-2:] + (ctx.ncoef,)).copy(), R.order)
    A0b = np.broadcast_to(A0, batch + A0.shape[-2:])
    order = min(A.order, R.order)
    X = Jet(ctx, np.zeros(R.c.shape), order)
    lo = 0
    for d in range(order + 1):
        hi = ctx.ncoef_upto[d]
        res = R - einsum("...ij,...jm->...im", A, X) if d else R
        layer = res.c[..., lo:hi]
        m, k = layer.shape[-2], layer.shape[-1]
        flat = layer.reshape(batch + (layer.shape[-3], m * k))
        sol = np.linalg.solve(A0b, flat)
        X.c[..., lo:hi] = sol.reshape(layer.shape)
        lo = hi
    return X[..., 0] if vector else X


def jet_inverse(A: Jet) -> Jet:
    eye = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
    return jet_linear_solve(A, A.ctx.constant(eye))


# -- dispatching elementary functions (jets or plain floats/arrays) ----------------
def sqrt(a):
    return a.sqrt() if isinstance(a, Jet) else np.sqrt(a)


def exp(a):
    return a.exp() if isinstance(a, Jet) else np.exp(a)


def log(a):
    return a.log() if isinstance(a, Jet) else np.log(a)


def power(a, r):
    return a.power(r) if isinstance(a, Jet) else np.power(a, r)
