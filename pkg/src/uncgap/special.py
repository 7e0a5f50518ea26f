"""Scalar special functions used by every Dirichlet formula.

All functions accept a float or an array and evaluate elementwise in float64.
``log_gamma``, ``digamma`` and ``trigamma`` shift small arguments upward with
the recurrence and then apply the asymptotic (Stirling-type) series.
"""

from __future__ import annotations

import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Stirling series for ln Gamma: B_{2k} / (2k (2k - 1)), k = 1..8
_LGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
# digamma asymptotic: B_{2k} / (2k), k = 1..8
_DIGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
)
# trigamma asymptotic: B_{2k}, k = 1..8
_TRIGAMMA_COEFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)

_LGAMMA_SHIFT = 8.0
_DIGAMMA_SHIFT = 6.0


def _as_positive(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("argument must be finite")
    if np.any(arr <= 0.0):
        raise ValueError("argument must be > 0")
    return arr, arr.ndim == 0


def _out(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


def _poly(inv_sq: np.ndarray, coefs) -> np.ndarray:
    # Horner in 1/x^2
    acc = np.zeros_like(inv_sq)
    for c in reversed(coefs):
        acc = acc * inv_sq + c
    return acc


def log_gamma(x):
    """Natural log of the Gamma function for x > 0.

    Raises
    ------
    ValueError
        If any argument is non-positive or non-finite.
    """
    arr, scalar = _as_positive(x)
    arr = np.atleast_1d(arr)
    z = arr.copy()
    # accumulate the product x (x+1) ... (x+n-1) and take one log at the end
    prod = np.ones_like(arr)
    small = z < _LGAMMA_SHIFT
    while np.any(small):
        prod = np.where(small, prod * z, prod)
        z = np.where(small, z + 1.0, z)
        small = z < _LGAMMA_SHIFT
    shift_log = np.log(prod)
    inv = 1.0 / z
    series = inv * _poly(inv * inv, _LGAMMA_COEFS)
    val = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series - shift_log
    return _out(val.reshape(np.shape(x)) if not scalar else val[0], scalar)


def digamma(x):
    """Digamma function psi(x) = d/dx ln Gamma(x) for x > 0."""
    arr, scalar = _as_positive(x)
    z = np.atleast_1d(arr).copy()
    acc = np.zeros_like(z)
    small = z < _DIGAMMA_SHIFT
    while np.any(small):
        acc = np.where(small, acc - 1.0 / z, acc)
        z = np.where(small, z + 1.0, z)
        small = z < _DIGAMMA_SHIFT
    inv = 1.0 / z
    inv_sq = inv * inv
    val = acc + np.log(z) - 0.5 * inv - inv_sq * _poly(inv_sq, _DIGAMMA_COEFS)
    return _out(val.reshape(np.shape(x)) if not scalar else val[0], scalar)


def trigamma(x):
    """First derivative of digamma, needed for exact reverse-KL gradients."""
    arr, scalar = _as_positive(x)
    z = np.atleast_1d(arr).copy()
    acc = np.zeros_like(z)
    small = z < _DIGAMMA_SHIFT
    while np.any(small):
        acc = np.where(small, acc + 1.0 / (z * z), acc)
        z = np.where(small, z + 1.0, z)
        small = z < _DIGAMMA_SHIFT
    inv = 1.0 / z
    inv_sq = inv * inv
    val = acc + inv + 0.5 * inv_sq + inv * inv_sq * _poly(inv_sq, _TRIGAMMA_COEFS)
    return _out(val.reshape(np.shape(x)) if not scalar else val[0], scalar)


def sigmoid(x):
    """Logistic sigmoid, branched on sign so neither tail overflows."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    a = np.atleast_1d(arr)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return float(out[0]) if scalar else out.reshape(arr.shape)


def log_sum_exp(v, axis: int = -1):
    """ln sum exp(v) along ``axis``, shifted by the max for stability.

    A 1-d input returns a float; higher-rank inputs reduce ``axis``.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0 or arr.shape[axis] == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(arr, axis=axis, keepdims=True)
    out = np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(arr - m), axis=axis))
    return float(out) if out.ndim == 0 else out


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(z, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(z, axis=axis))
