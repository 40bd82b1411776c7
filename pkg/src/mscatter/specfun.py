"""Angular-momentum special functions.

Spherical Bessel functions of real argument, complex spherical harmonics,
Clebsch-Gordan coefficients and Gaunt coefficients.

Conventions
-----------
Spherical harmonics follow the quantum-mechanics convention with the
Condon-Shortley phase included in the associated Legendre functions::

    Y_lm(theta, phi) = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(cos theta) e^{i m phi}
    Y_{l,-m} = (-1)^m conj(Y_lm)

This is the only place the phase convention is fixed; every other module
goes through :func:`sph_harm` / :func:`sph_harm_all`.

Harmonics are evaluated from Cartesian unit vectors, so directions lying
exactly in the z = 0 plane give exact zeros for odd l + m.

Channels (l, m) are flattened as ``l*l + l + m`` (l ascending, m from -l to l).
"""
from fractions import Fraction
from functools import lru_cache
from math import factorial, pi, sqrt

import numpy as np

from .errors import DomainError

LMAX_CG = 20

_SERIES_X = 1.0
_SERIES_TERMS = 24


def lm_index(l, m):
    return l * l + l + m


def n_lm(lmax):
    return (lmax + 1) ** 2


def iter_lm(lmax):
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            yield l, m


# ---------------------------------------------------------------------------
# spherical Bessel functions
# ---------------------------------------------------------------------------

def _j_series(lmax, x):
    # power series, used for 0 <= x < _SERIES_X
    out = np.empty((lmax + 1,) + x.shape)
    half_x2 = -0.5 * x * x
    for l in range(lmax + 1):
        dfact = 1.0
        for n in range(1, 2 * l + 2, 2):
            dfact *= n
        term = np.ones_like(x)
        total = np.ones_like(x)
        for k in range(1, _SERIES_TERMS):
            term = term * half_x2 / (k * (2 * l + 2 * k + 1))
            total = total + term
        out[l] = x**l / dfact * total
    return out


def _j_miller(lmax, x):
    # downward recurrence seeded far above lmax, normalized on j0 or j1
    nstart = lmax + 20 + int(np.ceil(x.max()))
    f_next = np.zeros_like(x)
    f = np.full_like(x, 1e-30)
    out = np.empty((lmax + 1,) + x.shape)
    for l in range(nstart, 0, -1):
        f_prev = (2 * l + 1) / x * f - f_next
        f_next, f = f, f_prev
        big = np.abs(f) > 1e200
        if big.any():
            f = np.where(big, f * 1e-200, f)
            f_next = np.where(big, f_next * 1e-200, f_next)
            out[:, big] *= 1e-200
        if l - 1 <= lmax:
            out[l - 1] = f
        if l <= lmax:
            out[l] = f_next
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x**2 - np.cos(x) / x
    use0 = np.abs(j0) >= np.abs(j1)
    scale = np.where(use0, j0 / out[0], j1 / out[1] if lmax >= 1 else 0.0)
    if lmax == 0:
        scale = j0 / out[0]
    return out * scale


def _j_upward(lmax, x):
    out = np.empty((lmax + 1,) + x.shape)
    out[0] = np.sin(x) / x
    if lmax >= 1:
        out[1] = np.sin(x) / x**2 - np.cos(x) / x
    for l in range(1, lmax):
        out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]
    return out


def sph_bessel_j_all(lmax, x):
    """Regular spherical Bessel functions j_0 .. j_lmax.

    Returns an array of shape ``(lmax + 1,) + shape(x)``.  Uses the power
    series for small x, Miller's downward recurrence for x < lmax and upward
    recurrence otherwise.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("sph_bessel_j requires x >= 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty((lmax + 1,) + x.shape)
    small = x < _SERIES_X
    upward = ~small & (x >= lmax)
    mid = ~small & ~upward
    if small.any():
        out[:, small] = _j_series(lmax, x[small])
    if upward.any():
        out[:, upward] = _j_upward(lmax, x[upward])
    if mid.any():
        out[:, mid] = _j_miller(lmax, x[mid])
    return out[:, 0] if scalar else out


def sph_bessel_y_all(lmax, x):
    """Irregular spherical Bessel functions y_0 .. y_lmax (upward recurrence)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("sph_bessel_y requires x > 0")
    out = np.empty((lmax + 1,) + x.shape)
    out[0] = -np.cos(x) / x
    if lmax >= 1:
        out[1] = -np.cos(x) / x**2 - np.sin(x) / x
    for l in range(1, lmax):
        out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]
    return out


def sph_bessel_j(l, x):
    return sph_bessel_j_all(l, x)[l]


def sph_bessel_y(l, x):
    return sph_bessel_y_all(l, x)[l]


def _derivative(f_all, l, x):
    # f_l' = f_{l-1} - (l+1)/x f_l ;  f_0' = -f_1
    if l == 0:
        return -f_all[1]
    return f_all[l - 1] - (l + 1) / x * f_all[l]


def sph_bessel_jp(l, x):
    """Derivative d j_l / dx for x > 0."""
    x = np.asarray(x, dtype=float)
    return _derivative(sph_bessel_j_all(l + 1, x), l, x)


def sph_bessel_yp(l, x):
    x = np.asarray(x, dtype=float)
    return _derivative(sph_bessel_y_all(l + 1, x), l, x)


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------

def unit_vector(theta, phi):
    """Cartesian unit vector(s) for polar angle ``theta`` and azimuth ``phi``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def _normalize(n):
    n = np.asarray(n, dtype=float)
    if n.shape[-1] != 3:
        raise ValueError("direction must have a trailing axis of length 3")
    norm = np.linalg.norm(n, axis=-1)
    if np.any(norm == 0):
        raise DomainError("zero vector has no direction")
    return n / norm[..., None]


def sph_harm_all(lmax, n):
    """All Y_lm for l <= lmax at direction(s) ``n`` (Cartesian, ``(..., 3)``).

    Returns a complex array of shape ``((lmax+1)**2,) + n.shape[:-1]`` in
    channel order.
    """
    n = _normalize(n)
    z = n[..., 2]
    w = n[..., 0] + 1j * n[..., 1]          # sin(theta) e^{i phi}
    out = np.empty((n_lm(lmax),) + z.shape, dtype=complex)
    wm = np.ones_like(w)
    # reduced Legendre functions P_l^m(z) / sin^m(theta), Condon-Shortley phase
    pmm = np.ones_like(z)
    for m in range(lmax + 1):
        if m > 0:
            pmm = -(2 * m - 1) * pmm
            wm = wm * w
        p_prev = np.zeros_like(z)
        p = pmm
        for l in range(m, lmax + 1):
            if l == m + 1:
                p_prev, p = p, z * (2 * m + 1) * pmm
            elif l > m + 1:
                p_prev, p = p, (z * (2 * l - 1) * p - (l + m - 1) * p_prev) / (l - m)
            norm = sqrt((2 * l + 1) / (4 * pi) * factorial(l - m) / factorial(l + m))
            y = norm * p * wm
            out[lm_index(l, m)] = y
            if m > 0:
                out[lm_index(l, -m)] = (-1) ** m * np.conj(y)
    return out


def sph_harm(l, m, n):
    """Complex spherical harmonic Y_lm at Cartesian direction ``n``."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid angular index (l={l}, m={m})")
    return sph_harm_all(l, n)[lm_index(l, m)]


# ---------------------------------------------------------------------------
# Clebsch-Gordan and Gaunt coefficients
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def clebsch_gordan(l1, m1, l, m, l2, m2):
    """C^{l1 m1}_{l m l2 m2} = <l m; l2 m2 | l1 m1> for integer momenta.

    Racah's closed sum evaluated in exact rational arithmetic; zero outside
    the selection rules.
    """
    for a, b in ((l1, m1), (l, m), (l2, m2)):
        if a < 0 or abs(b) > a:
            return 0.0
    if max(l1, l, l2) > LMAX_CG:
        raise ValueError(f"angular momentum above {LMAX_CG}")
    if m1 != m + m2 or not abs(l - l2) <= l1 <= l + l2:
        return 0.0
    j1, j2, J, M = l, l2, l1, m1
    f = factorial
    pre = Fraction(
        (2 * J + 1) * f(J + j1 - j2) * f(J - j1 + j2) * f(j1 + j2 - J)
        * f(J + M) * f(J - M) * f(j1 - m) * f(j1 + m) * f(j2 - m2) * f(j2 + m2),
        f(j1 + j2 + J + 1),
    )
    total = Fraction(0)
    kmin = max(0, j2 - J - m, j1 - J + m2)
    kmax = min(j1 + j2 - J, j1 - m, j2 + m2)
    for k in range(kmin, kmax + 1):
        den = (f(k) * f(j1 + j2 - J - k) * f(j1 - m - k) * f(j2 + m2 - k)
               * f(J - j2 + m + k) * f(J - j1 - m2 + k))
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    value = sqrt(pre * total * total)
    return value if total > 0 else -value


@lru_cache(maxsize=None)
def gaunt_q(l1, m1, l2, m2, l, m):
    """Q^{l1 m1}_{l2 m2 l m} = 4 pi * integral of conj(Y_l1m1) Y_l2m2 Y_lm."""
    if m1 != m + m2 or (l + l1 + l2) % 2 or not abs(l - l2) <= l1 <= l + l2:
        return 0.0
    if abs(m1) > l1 or abs(m2) > l2 or abs(m) > l:
        return 0.0
    pre = sqrt(4 * pi * (2 * l2 + 1) * (2 * l + 1) / (2 * l1 + 1))
    return pre * clebsch_gordan(l1, 0, l, 0, l2, 0) * clebsch_gordan(l1, m1, l, m, l2, m2)


@lru_cache(maxsize=None)
def gaunt_table(lmax):
    """Read-only array ``G[lm, l1m1, l2m2] = gaunt_q(l1, m1, l2, m2, l, m)``.

    l, l1 run up to ``lmax`` and l2 up to ``2*lmax``.
    """
    table = np.zeros((n_lm(lmax), n_lm(lmax), n_lm(2 * lmax)))
    for l, m in iter_lm(lmax):
        for l1, m1 in iter_lm(lmax):
            m2 = m1 - m
            for l2 in range(abs(l1 - l), l1 + l + 1):
                if abs(m2) <= l2:
                    table[lm_index(l, m), lm_index(l1, m1), lm_index(l2, m2)] = \
                        gaunt_q(l1, m1, l2, m2, l, m)
    table.setflags(write=False)
    return table
