"""Cartan-connection apparatus of a Finsler metric, evaluated as jets.

All tensors live on a batch of sample points: every :class:`Jet` here has a
leading point axis ``p`` followed by its tensor axes, so ``g`` has shape
``(m, n, n)`` and ``Gamma`` has shape ``(m, n, n, n)`` with index order
``Gamma[p, i, j, k] = Gamma^i_{jk}``.  Because each component is a jet in
``(x, y)``, further x- and y-derivatives of any object are exact.

Conventions
    E = L^2 / 2, g_ij = d2E/dy^i dy^j, C_ijk = (1/2) dg_ij/dy^k
    G^i = (1/2) g^il (y^k d_k dy_l E - d_l E), N^i_j = dy_j G^i
    delta_k = d_k - N^r_k dy_r
    Gamma^i_jk = (1/2) g^il (delta_j g_lk + delta_k g_jl - delta_l g_jk)
    S^i = Gamma^i_00 = 2 G^i
    P^i_jk = dy_k N^i_j - Gamma^i_jk, R^i_jk = delta_k N^i_j - delta_j N^i_k
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import jets
from .catalog import MetricSpec, PointState
from .errors import DegenerateMetric, InvalidPoint, OrderExceeded, SingularValuePart
from .jets import Jet, JetContext, einsum

_LETTERS = "abcdefgh"


def points_arrays(points: Sequence[PointState]):
    """Stack a sequence of points into ``(m, n)`` arrays ``x``, ``y``."""
    x = np.array([p.x for p in points], dtype=float)
    y = np.array([p.y for p in points], dtype=float)
    return x, y


@dataclass
class Seeds:
    """Coordinate jets for a batch of points."""

    ctx: JetContext
    xs: list
    ys: list

    @property
    def y(self) -> Jet:
        return jets.stack(self.ys, axis=-1)

    @classmethod
    def at(cls, ctx: JetContext, x, y) -> "Seeds":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        xs, ys = ctx.variables(x, y)
        return cls(ctx, xs, ys)


def eval_metric_jet(spec: MetricSpec | Callable, seeds: Seeds) -> Jet:
    """Jet of L on the batch.  ``spec`` may be a catalog spec or ``f(x, y)``."""
    f = spec.function() if isinstance(spec, MetricSpec) else spec
    if np.any(np.linalg.norm(np.stack([y.value for y in seeds.ys], -1), axis=-1) <= 1e-12):
        raise InvalidPoint("support element y must be nonzero")
    try:
        L = f(seeds.xs, seeds.ys)
    except (jets.DomainError, ZeroDivisionError) as exc:
        raise InvalidPoint(str(exc)) from exc
    if np.any(L.value <= 0):
        raise InvalidPoint("L <= 0 at a sample point")
    return L


# -- small tensor helpers -------------------------------------------------------------
def sym2(T: Jet) -> Jet:
    return 0.5 * (T + T.swapaxes(-1, -2))


def sym_all(T: Jet) -> Jet:
    """Symmetrise over every tensor axis after the point axis."""
    from itertools import permutations
    rank = T.ndim - 1
    perms = list(permutations(range(1, rank + 1)))
    acc = None
    for perm in perms:
        term = T.transpose((0,) + perm)
        acc = term if acc is None else acc + term
    return acc * (1.0 / len(perms))


def outer(a: Jet, b: Jet) -> Jet:
    return einsum("pi,pj->pij", a, b)


def scal(s: Jet, rank: int) -> Jet:
    """Broadcast a per-point scalar jet against a rank-``rank`` tensor."""
    return s.reshape(s.shape + (1,) * rank)


def delta(f: Jet, N: Jet) -> Jet:
    """Horizontal derivative: appends the index k of ``delta_k f``."""
    t = _LETTERS[:f.ndim - 1]
    return f.grad_x() - einsum(f"p{t}r,prk->p{t}k", f.grad_y(), N)


def h_cov(field: Jet, variance: str, N: Jet, Gamma: Jet) -> Jet:
    """h-covariant derivative of a tensor field.

    ``variance`` lists the index types after the point axis, ``'u'`` for a
    contravariant and ``'d'`` for a covariant slot (e.g. ``'ud'`` for X^i_j).
    The new derivative index is appended last.
    """
    t = _LETTERS[:len(variance)]
    if field.ndim - 1 != len(variance):
        raise ValueError("variance string does not match tensor rank")
    out = delta(field, N)
    for pos, kind in enumerate(variance):
        src = t[:pos] + "r" + t[pos + 1:]
        if kind == "u":
            out = out + einsum(f"p{src},p{t[pos]}rk->p{t}k", field, Gamma)
        elif kind == "d":
            out = out - einsum(f"p{src},pr{t[pos]}k->p{t}k", field, Gamma)
        else:
            raise ValueError(f"bad variance letter {kind!r}")
    return out


def h_cov_deriv(field: Jet, variance: str, frame: "UnbarredFrame") -> Jet:
    return h_cov(field, variance, frame.N, frame.Gamma)


# -- frame ----------------------------------------------------------------------------
@dataclass
class UnbarredFrame:
    """Every unbarred object at a batch of points (all jets)."""

    y: Jet
    L: Jet
    E: Jet
    L_i: Jet
    l_up: Jet
    g: Jet
    g_inv: Jet
    h: Jet
    C: Jet = None
    C_up: Jet = None
    L_ij: Jet = None
    L_ijk: Jet = None
    L_ijkl: Jet = None
    G_spray: Jet = None
    S: Jet = None
    N: Jet = None
    Gamma: Jet = None
    P: Jet = None
    R: Jet = None

    @property
    def n(self) -> int:
        return self.g.shape[-1]

    def values(self) -> dict:
        """Value parts of every populated field as ndarrays."""
        return {f.name: getattr(self, f.name).value for f in fields(self)
                if getattr(self, f.name) is not None}


def fundamental_objects(Ljet: Jet, y: Jet) -> dict:
    """L, E, L_i, l^i, g, g^-1 and h."""
    if Ljet.order < 2:
        raise OrderExceeded("fundamental tensor needs jet order >= 2")
    E = 0.5 * Ljet * Ljet
    L_i = Ljet.grad_y()
    g = sym2(E.grad_y().grad_y())
    try:
        g_inv = sym2(jets.jet_inverse(g))
    except SingularValuePart as exc:
        raise DegenerateMetric(str(exc)) from exc
    l_up = y * scal(1.0 / Ljet, 1)
    h = g - outer(L_i, L_i)
    return dict(L=Ljet, E=E, L_i=L_i, l_up=l_up, g=g, g_inv=g_inv, h=h)


def cartan_tensor(Ljet: Jet, fo: dict) -> dict:
    """C_ijk, C^i_jk and the y-derivatives L_ij, L_ijk, L_ijkl of L."""
    if Ljet.order < 4:
        raise OrderExceeded("L_ijkl needs jet order >= 4")
    C = sym_all(0.5 * fo["g"].grad_y())
    C_up = einsum("pil,pljk->pijk", fo["g_inv"], C)
    L_ij = sym2(fo["L_i"].grad_y())
    L_ijk = sym_all(L_ij.grad_y())
    L_ijkl = sym_all(L_ijk.grad_y())
    return dict(C=C, C_up=C_up, L_ij=L_ij, L_ijk=L_ijk, L_ijkl=L_ijkl)


def connection_pipeline(Ljet: Jet, fo: dict, y: Jet) -> dict:
    """Spray G, S = 2G, nonlinear connection N = dy G, Cartan Gamma."""
    if Ljet.order < 3:
        raise OrderExceeded("the Cartan connection needs jet order >= 3")
    E, g, g_inv = fo["E"], fo["g"], fo["g_inv"]
    dE = E.grad_x()
    dxdyE = E.grad_y().grad_x()
    rhs = einsum("plk,pk->pl", dxdyE, y) - dE
    G = 0.5 * einsum("pil,pl->pi", g_inv, rhs)
    N = G.grad_y()
    dg = delta(g, N)
    low = 0.5 * (einsum("plkj->pljk", dg) + einsum("pjlk->pljk", dg)
                 - einsum("pjkl->pljk", dg))
    Gamma = einsum("pil,pljk->pijk", g_inv, low)
    Gamma = 0.5 * (Gamma + Gamma.swapaxes(-1, -2))
    return dict(G_spray=G, S=2.0 * G, N=N, Gamma=Gamma)


def torsions(frame: UnbarredFrame) -> dict:
    """P^i_jk = dy_k N^i_j - Gamma^i_jk and R^i_jk = delta_k N^i_j - delta_j N^i_k."""
    if frame.N.order < 1:
        raise OrderExceeded("torsions need one more jet order")
    P = frame.N.grad_y() - frame.Gamma
    dN = delta(frame.N, frame.N)
    R = dN - dN.swapaxes(-1, -2)
    return dict(P=P, R=R)


def compute_frame(Ljet: Jet, y: Jet, *, with_torsions: bool = True) -> UnbarredFrame:
    """Run the full unbarred pipeline on a jet of L."""
    fo = fundamental_objects(Ljet, y)
    frame = UnbarredFrame(y=y, **fo)
    for key, val in cartan_tensor(Ljet, fo).items():
        setattr(frame, key, val)
    for key, val in connection_pipeline(Ljet, fo, y).items():
        setattr(frame, key, val)
    if with_torsions and frame.N.order >= 1:
        for key, val in torsions(frame).items():
            setattr(frame, key, val)
    return frame


def frame_for(spec: MetricSpec | Callable, points, ctx: JetContext):
    """Convenience: seeds, L jet and frame for a batch of points."""
    if isinstance(points, PointState):
        points = [points]
    x, y = points_arrays(points)
    seeds = Seeds.at(ctx, x, y)
    L = eval_metric_jet(spec, seeds)
    return seeds, compute_frame(L, seeds.y)


def christoffel(a: Callable, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Christoffel symbols Gamma^i_jk of a Riemannian a_ij(x) by Richardson
    central differences (independent of the jet machinery)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    da = np.zeros((n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0

        def cd(step):
            return (a(x + step * e) - a(x - step * e)) / (2 * step)

        da[:, :, k] = (4 * cd(h / 2) - cd(h)) / 3
    ainv = np.linalg.inv(a(x))
    low = 0.5 * (np.einsum("lkj->ljk", da) + np.einsum("jlk->ljk", da) - np.einsum("jkl->ljk", da))
    return np.einsum("il,ljk->ijk", ainv, low)
