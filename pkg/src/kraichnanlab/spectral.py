"""Shared spectral machinery for periodic fields on the d-dimensional torus.

Convention (fixed once, used everywhere): a real field f on [0, 2pi)^d is
represented by a dense centered cube of Fourier coefficients c[k] for
|k_i| <= k_max, with

    f(x) = sum_k c[k] exp(i k.x),

i.e. the forward transform carries the (2pi)^{-d} factor.  Parseval then
reads  int |f|^2 dx = (2pi)^d sum_k |c_k|^2.

Coefficient arrays have shape (..., 2*k_max+1, ..., 2*k_max+1) with d
trailing lattice axes; index k_max corresponds to the zero mode.  Leading
axes (vector components, ensemble members) are carried through untouched.
"""

from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi


def next_fast_len(n):
    """Smallest 5-smooth integer >= n (cheap FFT length)."""
    if n <= 1:
        return 1
    best = None
    p5 = 1
    while p5 < 16 * n:
        p35 = p5
        while p35 < 16 * n:
            m = p35
            while m < n:
                m *= 2
            if best is None or m < best:
                best = m
            p35 *= 3
        p5 *= 5
    return best


def wave_axis(k_max):
    return np.arange(-k_max, k_max + 1)


@lru_cache(maxsize=None)
def _wavevectors(k_max, d):
    ax = wave_axis(k_max)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    return np.stack(grids).astype(np.float64)


def wavevectors(k_max, d):
    """Array of shape (d,) + cube with the lattice vector components."""
    return _wavevectors(k_max, d)


@lru_cache(maxsize=None)
def k_squared(k_max, d):
    kv = _wavevectors(k_max, d)
    return np.sum(kv * kv, axis=0)


@lru_cache(maxsize=None)
def ball_mask(k_max, d):
    """Boolean cube mask keeping |k| <= k_max (the Galerkin ball)."""
    return k_squared(k_max, d) <= k_max * k_max + 1e-9


@lru_cache(maxsize=None)
def _embed_indices(k_max, ngrid):
    if ngrid < 2 * k_max + 2:
        raise ValueError(f"grid {ngrid} cannot hold modes up to {k_max} unambiguously")
    return wave_axis(k_max) % ngrid


def grid_points(ngrid, d):
    """Physical collocation points, shape (d,) + (ngrid,)*d."""
    x = TWO_PI * np.arange(ngrid) / ngrid
    grids = np.meshgrid(*([x] * d), indexing="ij")
    return np.stack(grids)


def to_physical(coeffs, k_max, d, ngrid):
    """Synthesize grid values sum_k c_k e^{ik.x} on an ngrid^d grid.

    Returns a complex array; take .real for fields known to be
    conjugate-symmetric.
    """
    idx = _embed_indices(k_max, ngrid)
    lead = coeffs.shape[:-d]
    buf = np.zeros(lead + (ngrid,) * d, dtype=np.complex128)
    sel = (Ellipsis,) + np.ix_(*([idx] * d))
    buf[sel] = coeffs
    axes = tuple(range(-d, 0))
    return np.fft.ifftn(buf, axes=axes) * ngrid**d


def from_physical(values, k_max, d):
    """Project grid values onto the centered coefficient cube (|k_i| <= k_max)."""
    ngrid = values.shape[-1]
    idx = _embed_indices(k_max, ngrid)
    axes = tuple(range(-d, 0))
    hat = np.fft.fftn(values, axes=axes) / ngrid**d
    sel = (Ellipsis,) + np.ix_(*([idx] * d))
    return hat[sel]


def enforce_reality(coeffs, d):
    """Symmetrize so that c(-k) = conj(c(k)) exactly."""
    axes = tuple(range(-d, 0))
    return 0.5 * (coeffs + np.conj(np.flip(coeffs, axis=axes)))


def zero_mean(coeffs, k_max, d):
    center = (Ellipsis,) + (k_max,) * d
    coeffs = coeffs.copy()
    coeffs[center] = 0.0
    return coeffs


def pairing(c1, c2, d):
    """L2 inner product int f g dx = (2pi)^d sum c1_k conj(c2_k) (real part)."""
    axes = tuple(range(-d, 0))
    return TWO_PI**d * np.real(np.sum(c1 * np.conj(c2), axis=axes))


def l2_norm_sq(coeffs, d):
    """Squared L2 norm by Parseval; sums over all axes (components included)."""
    return TWO_PI**d * float(np.sum(np.abs(coeffs) ** 2))


def gradient_coeffs(coeffs, k_max, d):
    """Coefficients of the gradient, shape (d,) + cube (prepends an axis)."""
    kv = wavevectors(k_max, d)
    return 1j * kv * coeffs[np.newaxis]


def leray_project_coeffs(coeffs, k_max):
    """Apply (I - k k^T/|k|^2) to a 3-vector coefficient cube (axis 0 = component)."""
    kv = wavevectors(k_max, 3)
    k2 = k_squared(k_max, 3)
    k2safe = np.where(k2 == 0, 1.0, k2)
    kdotc = np.sum(kv * coeffs, axis=0)
    return coeffs - kv * (kdotc / k2safe)[np.newaxis]


def max_imag_on_grid(coeffs, k_max, d, ngrid):
    vals = to_physical(coeffs, k_max, d, ngrid)
    return float(np.max(np.abs(vals.imag)))
