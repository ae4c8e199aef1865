"""Scalar numerics used throughout the pricing machinery.

Self-contained implementations of the principal-branch Lambert W function,
an overflow-safe evaluation of W(e^x), and a weighted log-sum-exp. All three
accept scalars or numpy arrays and are pure functions, so they are safe to
call from any number of concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError

_INV_E = np.exp(-1.0)


@dataclass(frozen=True)
class NumericTolerances:
    """Convergence control for the iterative solvers in this module."""

    residual_tol: float = 1e-12
    max_iter: int = 64

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


DEFAULT_TOL = NumericTolerances()


def lambert_w0(z, tol: NumericTolerances = DEFAULT_TOL):
    """Principal branch of the Lambert W function, the inverse of w -> w*e^w.

    Accepts a scalar or array with entries >= -1/e (a 1e-15 slack absorbs
    rounding at the branch point). Initial guesses use the square-root series
    near -1/e and the log-log asymptote for large arguments, refined by Halley
    iteration until |w*e^w - z| <= residual_tol * (1 + |z|).
    """
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0
    zv = np.atleast_1d(z_arr).copy()

    if np.any(np.isnan(zv)):
        raise DomainError("lambert_w0: nan argument")
    low = zv < -_INV_E
    if np.any(zv < -_INV_E - 1e-15):
        raise DomainError("lambert_w0: argument below -1/e")
    zv[low] = -_INV_E  # clamp branch-point rounding noise

    w = np.empty_like(zv)
    near = zv < -0.25
    big = zv > np.e
    mid = ~(near | big)
    if np.any(near):
        # series around the branch point: w = -1 + p - p^2/3 + ..., p = sqrt(2(e z + 1))
        p = np.sqrt(2.0 * (np.e * zv[near] + 1.0))
        w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    if np.any(big):
        lz = np.log(zv[big])
        w[big] = lz - np.log(lz)
    if np.any(mid):
        # w ~ z near 0; one fixed-point step tames the overshoot for z up to e
        w[mid] = zv[mid] / (1.0 + zv[mid] * np.exp(-zv[mid] / (1.0 + zv[mid])))

    target = tol.residual_tol * (1.0 + np.abs(zv))
    for _ in range(tol.max_iter):
        ew = np.exp(w)
        f = w * ew - zv
        if np.all(np.abs(f) <= target):
            break
        wp1 = w + 1.0
        wp1 = np.where(np.abs(wp1) < 1e-300, 1e-300, wp1)
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w = w - step

    w = np.maximum(w, -1.0)
    return float(w[0]) if scalar else w.reshape(z_arr.shape)


def lambert_w_exp(x, tol: NumericTolerances = DEFAULT_TOL):
    """W(e^x) computed without ever forming e^x.

    Solves u + e^u = x for u = ln g by Newton's method and returns g = e^u,
    so arguments far beyond ln(float_max) are fine. The map is strictly
    increasing and nonexpansive, which the backward recursions rely on.
    """
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    xv = np.atleast_1d(x_arr).astype(float)
    if np.any(~np.isfinite(xv)):
        raise DomainError("lambert_w_exp: argument must be finite")

    # h(u) = u + e^u - x is increasing and convex; starting where h >= 0
    # makes Newton decrease monotonically to the root without overshoot.
    u = np.where(xv >= 1.0, np.log(np.maximum(xv, 1.0)), xv)
    for _ in range(tol.max_iter):
        eu = np.exp(u)
        h = u + eu - xv
        if np.all(np.abs(h) <= tol.residual_tol * (1.0 + np.abs(xv))):
            break
        u = u - h / (1.0 + eu)

    g = np.exp(u)
    return float(g[0]) if scalar else g.reshape(x_arr.shape)


def log_sum_exp(values, weights=None):
    """ln sum_k w_k * e^{v_k}, computed shift-stably (max subtracted first).

    Zero-weight entries are ignored entirely, so their values may be huge or
    non-finite without polluting the result. Raises DomainError on empty
    input or when every weight is zero.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DomainError("log_sum_exp: empty input")
    if weights is None:
        w = np.ones_like(v)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != v.shape:
            raise DimensionMismatch(f"values shape {v.shape} != weights shape {w.shape}")
        if np.any(w < 0):
            raise DomainError("log_sum_exp: negative weight")
    mask = w > 0
    if not np.any(mask):
        raise DomainError("log_sum_exp: all weights are zero")
    v = v[mask]
    w = w[mask]
    m = np.max(v)
    return float(m + np.log(np.sum(w * np.exp(v - m))))


def weighted_lse_rows(values, weights):
    """Row-wise weighted log-sum-exp for a 2-D array (internal vector path).

    values has shape (rows, k), weights shape (k,) with at least one positive
    entry; returns shape (rows,).
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    m = np.max(v, axis=-1, keepdims=True)
    return (m[..., 0] + np.log(np.sum(w * np.exp(v - m), axis=-1)))
