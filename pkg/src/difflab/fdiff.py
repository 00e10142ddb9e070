"""Finite-difference weights on arbitrary point sets.

Fornberg's recurrence gives exact interpolatory weights for any derivative
order on any stencil, which is what the graded grids need.  Derivative
matrices are cached per (points, order, stencil width).
"""

from __future__ import annotations

import numpy as np

_matrix_cache: dict = {}


def fd_weights(xs: np.ndarray, x0: float, m: int) -> np.ndarray:
    """Weights w with f^(m)(x0) ~= sum w_j f(xs_j) (Fornberg recurrence)."""
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    if m >= n:
        raise ValueError("stencil too small for requested derivative order")
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def derivative_matrix(x: np.ndarray, order: int = 1, width: int = 5) -> np.ndarray:
    """Dense matrix D with (D f)_i ~= f^(order)(x_i) on the point set x.

    Interior points get centered ``width``-point stencils; points near the
    ends use the first/last ``width`` points (one-sided).
    """
    x = np.ascontiguousarray(x, dtype=float)
    key = (x.tobytes(), order, width)
    hit = _matrix_cache.get(key)
    if hit is not None:
        return hit
    n = x.size
    w = min(width, n)
    if w <= order:
        raise ValueError("point set too small for requested derivative order")
    half = w // 2
    D = np.zeros((n, n))
    for i in range(n):
        lo = min(max(i - half, 0), n - w)
        D[i, lo : lo + w] = fd_weights(x[lo : lo + w], x[i], order)
    D.setflags(write=False)
    _matrix_cache[key] = D
    return D


def apply_derivative(values: np.ndarray, x: np.ndarray, order: int = 1, width: int = 5, axis: int = -1) -> np.ndarray:
    """Differentiate ``values`` along ``axis`` sampled at points x."""
    D = derivative_matrix(x, order=order, width=width)
    moved = np.moveaxis(values, axis, -1)
    out = moved @ D.T
    return np.moveaxis(out, -1, axis)


def time_derivative(values: np.ndarray, t: np.ndarray, axis: int = 0) -> np.ndarray:
    """Centered (3-point, nonuniform) time derivative, one-sided at the ends."""
    return apply_derivative(values, t, order=1, width=3, axis=axis)


def cumtrapz0(y: np.ndarray, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Cumulative trapezoid integral starting at 0."""
    y = np.moveaxis(np.asarray(y, dtype=float), axis, -1)
    dx = np.diff(x)
    seg = 0.5 * (y[..., 1:] + y[..., :-1]) * dx
    out = np.zeros_like(y)
    np.cumsum(seg, axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)
