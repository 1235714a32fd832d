"""Jet-free reference computations used to freeze expected values.

Everything here works on plain floats with nested central differences, so it
shares no code with the jet engine or the closed forms under test.
"""
import numpy as np


def _cd(f, z, i, h):
    e = np.zeros_like(z)
    e[i] = h
    return (f(z + e) - f(z - e)) / (2 * h)


def partial(f, z, i, h=1e-4):
    """First partial with one Richardson step."""
    return (4 * _cd(f, z, i, h / 2) - _cd(f, z, i, h)) / 3


def second(f, z, i, j, h=1e-3):
    return partial(lambda w: partial(f, w, j, h), z, i, h)


def spray(L, x, y, h=1e-3):
    """S^i = g^il (y^k d_k dy_l E - d_l E), E = L^2 / 2."""
    n = len(x)
    z0 = np.concatenate([x, y]).astype(float)

    def E(z):
        return 0.5 * L(z[:n], z[n:]) ** 2

    g = np.array([[second(E, z0, n + i, n + j, h) for j in range(n)] for i in range(n)])
    mixed = np.array([[second(E, z0, k, n + l, h) for k in range(n)] for l in range(n)])
    dE = np.array([partial(E, z0, l) for l in range(n)])
    return np.linalg.solve(g, mixed @ y - dE)


def nonlinear_connection(L, x, y, h=1e-3):
    """N^i_j = dy_j G^i with G = S / 2."""
    n = len(x)
    return np.stack([
        (4 * _cd_vec(lambda yy: 0.5 * spray(L, x, yy), y, j, h / 2)
         - _cd_vec(lambda yy: 0.5 * spray(L, x, yy), y, j, h)) / 3
        for j in range(n)], axis=-1)


def _cd_vec(f, y, j, h):
    e = np.zeros_like(y)
    e[j] = h
    return (f(y + e) - f(y - e)) / (2 * h)


def fundamental_tensor(L, x, y, h=1e-3):
    n = len(x)
    z0 = np.concatenate([x, y]).astype(float)
    E = lambda z: 0.5 * L(z[:n], z[n:]) ** 2  # noqa: E731
    return np.array([[second(E, z0, n + i, n + j, h) for j in range(n)] for i in range(n)])


def cartan_connection(L, x, y, h=1e-3):
    """Gamma^i_jk = 1/2 g^il (delta_j g_lk + delta_k g_jl - delta_l g_jk),
    delta_j = d_j - N^r_j dy_r, every derivative by nested differences."""
    n = len(x)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = fundamental_tensor(L, x, y, h)
    N = nonlinear_connection(L, x, y, h)

    def g_at(z):
        return fundamental_tensor(L, z[:n], z[n:], h)

    z0 = np.concatenate([x, y])
    dg = np.stack([(4 * _cd(g_at, z0, v, h / 2) - _cd(g_at, z0, v, h)) / 3
                   for v in range(2 * n)], axis=-1)
    delta = dg[..., :n] - np.einsum("ijr,rk->ijk", dg[..., n:], N)
    low = 0.5 * (np.einsum("lkj->ljk", delta) + np.einsum("jlk->ljk", delta)
                 - np.einsum("jkl->ljk", delta))
    return np.einsum("il,ljk->ijk", np.linalg.inv(g), low)
