"""Radial physics inside one atomic sphere.

Builds the spherically averaged static + Hara exchange potential of an atom
from tabulated q(r) and rho(r), integrates the radial Schroedinger equation
with the Numerov method to get atomic phase shifts, and solves the
inhomogeneous radial equation used to reconstruct molecular partial waves.

Units are atomic (bohr, hartree); the collision energy is E = k**2 / 2.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .constants import HARTREE_EV
from .errors import DomainError, InputError, IntegrationError
from .specfun import sph_bessel_j_all, sph_bessel_y_all

log = logging.getLogger(__name__)

MAX_STEP = 0.002
MIN_STEPS = 2000


_RESCALE = 1e150


# ---------------------------------------------------------------------------
# tabulated radial data
# ---------------------------------------------------------------------------

class RadialTable:
    """Samples of a radial function with shape-preserving interpolation.

    Evaluation outside ``[r[0], r[-1]]`` raises :class:`DomainError`.
    """

    def __init__(self, r, values, nonnegative=False):
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != values.shape or len(r) < 2:
            raise InputError("radial table needs matching 1-d arrays of length >= 2")
        if r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise InputError("radial grid must be positive and strictly increasing")
        if nonnegative and np.any(values < 0):
            raise InputError("tabulated density has negative entries")
        self.r = r
        self.values = values
        self._interp = PchipInterpolator(r, values, extrapolate=False)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        lo, hi = self.r[0], self.r[-1]
        if np.any(r < lo) or np.any(r > hi):
            raise DomainError(f"radius outside tabulated range [{lo}, {hi}]")
        return self._interp(r)

    def __len__(self):
        return len(self.r)


@dataclass(frozen=True)
class Species:
    label: str
    ionization: float           # hartree
    q: RadialTable
    rho: RadialTable


def parse_species(text, source="<string>"):
    """Parse a species file (``species <label> I_eV <value>`` + rows ``r q rho``)."""
    label = None
    ionization = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "species":
            if len(tokens) != 4 or tokens[2] != "I_eV":
                raise InputError(f"{source}:{lineno}: expected 'species <label> I_eV <value>'")
            label = tokens[1]
            ionization = float(tokens[3]) / HARTREE_EV
            continue
        if label is None:
            raise InputError(f"{source}:{lineno}: data before 'species' header")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise InputError(f"{source}:{lineno}: non-numeric data") from None
        if len(tokens) != 3:
            raise InputError(f"{source}:{lineno}: expected 3 columns 'r q rho'")
    if label is None:
        raise InputError(f"{source}: missing 'species' header")
    data = np.array(rows)
    return Species(label, ionization,
                   RadialTable(data[:, 0], data[:, 1]),
                   RadialTable(data[:, 0], data[:, 2], nonnegative=True))


def read_species(path):
    path = Path(path)
    return parse_species(path.read_text(), source=str(path))


def load_species_dir(directory, labels):
    """Read ``<label>.species`` for each requested label."""
    directory = Path(directory)
    out = {}
    for label in labels:
        path = directory / f"{label}.species"
        if not path.exists():
            raise InputError(f"missing species file {path}")
        out[label] = read_species(path)
        if out[label].label != label:
            raise InputError(f"{path} declares species {out[label].label!r}")
    return out


def format_species(species, comment=None):
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines.append(f"species {species.label} I_eV {species.ionization * HARTREE_EV:.6g}")
    lines.append("# r_bohr q rho_bohr^-3")
    for r, q, rho in zip(species.q.r, species.q.values, species.rho.values):
        lines.append(f"{r:.10e} {q:.10e} {rho:.10e}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def static_potential(q, r):
    """V_st(r) = -q(r)/r from an effective-charge table."""
    r = np.asarray(r, dtype=float)
    return -q(r) / r


def hara_bracket(eta):
    """1/2 + (1 - eta^2)/(4 eta) ln|(1 + eta)/(1 - eta)|, with its limits.

    Equals 1/2 at eta = 1 and 0 as eta -> infinity; large eta uses the
    series sum_n eta^(-2n) / ((2n-1)(2n+1)) to avoid cancellation.
    """
    eta = np.asarray(eta, dtype=float)
    out = np.zeros_like(eta)
    finite = np.isfinite(eta)
    large = finite & (eta >= 2.0)
    near = finite & ~large
    if large.any():
        t2 = eta[large] ** -2
        acc = np.zeros_like(t2)
        power = np.ones_like(t2)
        for n in range(1, 31):
            power = power * t2
            acc += power / ((2 * n - 1) * (2 * n + 1))
        out[large] = acc
    if near.any():
        e = eta[near]
        one = e == 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 0.5 + (1 - e * e) / (4 * e) * np.log(np.abs((1 + e) / (1 - e)))
        out[near] = np.where(one, 0.5, val)
    return out if out.ndim else float(out)


def fermi_momentum(rho):
    return np.cbrt(3 * np.pi**2 * np.asarray(rho, dtype=float))


def hara_exchange(rho, k, ionization):
    """Hara free-electron-gas exchange potential (hartree), always <= 0."""
    rho, k = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(k, dtype=float))
    kf = fermi_momentum(rho)
    with np.errstate(divide="ignore"):
        eta = np.sqrt(k * k + 2 * ionization + kf * kf) / kf
    v = -(2 / np.pi) * kf * hara_bracket(eta)
    v = np.where(kf > 0, v, 0.0)
    return v if v.ndim else float(v)


@dataclass(frozen=True)
class AtomicPotential:
    """Spherical potential of one atom, zero beyond ``radius``.

    ``static(r)`` gives the k-independent part; ``density(r)`` (optional)
    feeds the energy-dependent Hara exchange term.  ``origin_charge`` is
    lim_{r->0} -r V_st(r), used by the integrator's first step.
    """

    label: str
    radius: float
    static: Callable = field(repr=False)
    density: Optional[Callable] = field(default=None, repr=False)
    ionization: float = 0.0
    origin_charge: float = 0.0
    is_null: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError(f"potential {self.label}: radius must be positive")

    @classmethod
    def from_species(cls, species, radius, exchange=True, label=None):
        q, rho = species.q, species.rho
        if q.r[-1] < radius or rho.r[-1] < radius:
            raise DomainError(f"species {species.label} tabulated only to r={q.r[-1]}, "
                              f"sphere radius is {radius}")
        null = not np.any(q.values) and (not exchange or not np.any(rho.values))
        return cls(label or species.label, radius,
                   static=lambda r: static_potential(q, r),
                   density=rho if exchange else None,
                   ionization=species.ionization,
                   origin_charge=float(q.values[0]),
                   is_null=null)

    @classmethod
    def square_well(cls, depth, radius, label="well"):
        """Constant potential ``-depth`` inside the sphere (depth < 0 is a barrier)."""
        return cls(label, radius, static=lambda r: np.full_like(np.asarray(r, float), -depth),
                   is_null=depth == 0)

    @classmethod
    def null(cls, radius, label="null"):
        return cls.square_well(0.0, radius, label)

    def __call__(self, r, k):
        """V(r) at wavenumber k; broadcasts r against k."""
        r = np.asarray(r, dtype=float)
        k = np.asarray(k, dtype=float)
        inside = r <= self.radius
        rin = np.where(inside, r, self.radius)
        v = self.static(rin)
        if self.density is not None:
            v = v + hara_exchange(self.density(rin), k, self.ionization)
        return np.where(inside, v, 0.0)


def default_steps(radius):
    return max(MIN_STEPS, int(math.ceil(radius / MAX_STEP)))


# ---------------------------------------------------------------------------
# Numerov integration
# ---------------------------------------------------------------------------

def _radial_grid(pot, steps):
    steps = default_steps(pot.radius) if steps is None else int(steps)
    if steps < 4:
        raise ValueError("need at least 4 radial steps")
    h = pot.radius / steps
    r = np.arange(steps + 1) * h
    r[-1] = pot.radius
    return r, h


def _numerov_regular(pot, l, k, steps):
    """Regular solution u(r) of u'' = F u on [0, d] for each k (columns).

    Returns ``(r, u, g)`` with ``u`` of shape ``(steps + 1, len(k))`` and
    ``g = u''`` at the last three grid points; columns carry arbitrary
    positive scale.
    """
    r, h = _radial_grid(pot, steps)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    rr = r[1:, None]
    with np.errstate(divide="ignore"):
        fgrid = l * (l + 1) / rr**2 + 2 * pot(rr, k[None, :]) - k[None, :] ** 2
    h12 = h * h / 12
    a = 1 - h12 * fgrid                 # a[n-1] belongs to r_n
    b = 2 + 10 * h12 * fgrid
    # lim_{r->0} F u for u ~ r^(l+1): l=0 Coulomb-like tail, l=1 centrifugal
    if l == 0:
        fu0 = -2 * pot.origin_charge
    elif l == 1:
        fu0 = 2.0
    else:
        fu0 = 0.0
    u = np.zeros((len(r), len(k)))
    u[1] = h ** (l + 1)
    u[2] = (b[0] * u[1] + h12 * fu0) / a[1]
    for n in range(2, len(r) - 1):
        u[n + 1] = (b[n - 1] * u[n] - a[n - 2] * u[n - 1]) / a[n]
        big = np.abs(u[n + 1]) > _RESCALE
        if big.any():
            u[: n + 2, big] /= _RESCALE
    if not np.all(np.isfinite(u)):
        raise IntegrationError(
            f"Numerov integration for {pot.label}, l={l} produced non-finite values "
            f"(h={h:.3g}, max h^2|F|/12={np.nanmax(np.abs(h12 * fgrid[1:])):.3g})")
    g = fgrid[-3:] * u[-3:]
    return r, u, g


def _edge_values(r, u, g):
    """u and u' at the sphere boundary, O(h^4) using g = u'' from the ODE."""
    h = r[-1] - r[-2]
    du = (u[-1] - u[-2]) / h + h * (7 * g[-1] + 6 * g[-2] - g[-3]) / 24
    return u[-1], du


def _match(l, k, d, u_d, du_d):
    """Phase shift in (-pi/2, pi/2] from u(d), u'(d)."""
    x = k * d
    jj = sph_bessel_j_all(l + 1, x)
    yy = sph_bessel_y_all(l + 1, x)
    jl, yl = jj[l], yy[l]
    jp = -jj[1] if l == 0 else jj[l - 1] - (l + 1) / x * jj[l]
    yp = -yy[1] if l == 0 else yy[l - 1] - (l + 1) / x * yy[l]
    # psi'/psi * u(d) with psi = u/r
    beta_u = du_d - u_d / d
    num = k * jp * u_d - beta_u * jl
    den = k * yp * u_d - beta_u * yl
    delta = np.arctan2(num, den)
    delta = np.where(delta > np.pi / 2, delta - np.pi, delta)
    delta = np.where(delta <= -np.pi / 2, delta + np.pi, delta)
    return delta


def atomic_phase(pot, l, k, steps=None):
    """Atomic phase shift delta_l(k) for ``pot`` in (-pi/2, pi/2].

    ``k`` may be a scalar or an array; ``steps`` overrides the default
    radial step count (h = d / steps).
    """
    k_arr = np.atleast_1d(np.asarray(k, dtype=float))
    if np.any(k_arr <= 0):
        raise DomainError("wavenumber must be positive")
    if pot.is_null:
        out = np.zeros_like(k_arr)
    else:
        r, u, g = _numerov_regular(pot, l, k_arr, steps)
        u_d, du_d = _edge_values(r, u, g)
        out = _match(l, k_arr, pot.radius, u_d, du_d)
    return out if np.ndim(k) else float(out[0])


# ---------------------------------------------------------------------------
# inhomogeneous equation
# ---------------------------------------------------------------------------

@dataclass
class RadialSolution:
    """psi(r) on the sphere grid plus its free continuation outside.

    Outside the sphere psi = coef_j j_l(kr) + coef_y y_l(kr); for consistent
    inputs coef_j = cos(delta), coef_y = -sin(delta).
    """

    r: np.ndarray
    u: np.ndarray = field(repr=False)    # r * psi on the grid, u[0] = 0
    l: int
    k: float
    delta: float
    w: float
    coef_j: float
    coef_y: float

    @property
    def radius(self):
        return self.r[-1]

    @property
    def values(self):
        return self.u[1:] / self.r[1:]

    def __post_init__(self):
        self._spline = CubicSpline(self.r, self.u)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty(r.shape)
        inside = r <= self.radius
        outside = ~inside
        if outside.any():
            x = self.k * r[outside]
            out[outside] = (self.coef_j * sph_bessel_j_all(self.l, x)[self.l]
                            + self.coef_y * sph_bessel_y_all(self.l, x)[self.l])
        if inside.any():
            ri = r[inside]
            h = self.r[1]
            tiny = ri < h
            if tiny.any():
                log.warning("radius below first grid point %.3g; using psi(r_1)", h)
            ri = np.where(tiny, h, ri)
            out[inside] = self._spline(ri) / ri
        return out


def solve_inhomogeneous(pot, l, k, delta, w, steps=None, tol=1e-6):
    """Regular solution of (H - k^2/2) psi = -w V j_l(kr) with the asymptotic
    normalization psi = cos(delta) j_l - sin(delta) y_l beyond the sphere.

    The particular solution is -w j_l(kr) (exact, since (H0 - k^2/2) j_l = 0);
    the homogeneous regular solution comes from Numerov.  A single
    amplitude is fitted to the y_l coefficient; if ``w`` and ``delta`` are
    not linked by w = sin(delta)(cot(delta_l) - cot(delta)) the j_l
    coefficient then deviates and a warning is logged.
    """
    if k <= 0:
        raise DomainError("wavenumber must be positive")
    d = pot.radius
    r, h = _radial_grid(pot, steps)
    jr = sph_bessel_j_all(l, k * r)[l]
    if pot.is_null:
        # no source and no scattering: delta is forced to 0
        u = r * jr
        return RadialSolution(r, u, l, k, 0.0, w, 1.0, 0.0)

    r, uh, g = _numerov_regular(pot, l, np.array([k]), steps)
    u_d, du_d = _edge_values(r, uh, g)
    uh = uh[:, 0]
    delta_l = float(_match(l, np.array([k]), d, u_d, du_d)[0])
    # normalize uh so that outside it equals r (cos dl j_l - sin dl y_l)
    x = k * d
    jj = sph_bessel_j_all(l + 1, x)
    yy = sph_bessel_y_all(l + 1, x)
    jp = -jj[1] if l == 0 else jj[l - 1] - (l + 1) / x * jj[l]
    yp = -yy[1] if l == 0 else yy[l - 1] - (l + 1) / x * yy[l]
    c, s = math.cos(delta_l), math.sin(delta_l)
    g = d * (c * jj[l] - s * yy[l])
    gp = (c * jj[l] - s * yy[l]) + k * d * (c * jp - s * yp)
    amp = float((u_d[0] * g + du_d[0] * gp) / (g * g + gp * gp))
    uh = uh / amp

    if abs(s) > 1e-14:
        scale = math.sin(delta) / s
        result_delta = delta
    else:
        scale = 1.0 + w
        result_delta = 0.0
    coef_j = scale * c - w
    coef_y = -scale * s
    mismatch = abs(coef_j - math.cos(result_delta))
    if mismatch > tol:
        log.warning("inhomogeneous solve: w=%.6g inconsistent with delta=%.6g "
                    "(j_l coefficient off by %.3g)", w, delta, mismatch)
    u = scale * uh - w * r * jr
    return RadialSolution(r, u, l, k, result_delta, w, coef_j, coef_y)


# ---------------------------------------------------------------------------
# phase tables
# ---------------------------------------------------------------------------

@dataclass
class PhaseTable:
    """Atomic phase shifts delta_l(E) per potential key on a shared energy grid.

    Curves are unwrapped along the grid (adjacent jumps below pi/2).
    """

    energies: np.ndarray                   # hartree, strictly increasing
    phases: dict = field(default_factory=dict)  # (key, l) -> array

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        if self.energies.ndim != 1 or np.any(self.energies <= 0) \
                or np.any(np.diff(self.energies) <= 0):
            raise InputError("energy grid must be positive and strictly increasing")

    @property
    def k(self):
        return np.sqrt(2 * self.energies)

    @classmethod
    def compute(cls, potentials, lmax, energies, steps=None):
        """``potentials``: key -> AtomicPotential; ``lmax``: key -> L or an int."""
        table = cls(energies)
        for key, pot in potentials.items():
            lk = lmax if isinstance(lmax, int) else lmax[key]
            for l in range(lk + 1):
                delta = atomic_phase(pot, l, table.k, steps=steps)
                table.phases[(key, l)] = np.unwrap(delta, period=np.pi)
        return table

    def delta(self, key, l):
        try:
            return self.phases[(key, l)]
        except KeyError:
            raise InputError(f"no atomic phases for {key!r}, l={l}") from None

    def index_of(self, energy):
        idx = np.flatnonzero(np.isclose(self.energies, energy, rtol=1e-12, atol=0))
        if len(idx) == 0:
            raise InputError(f"energy {energy} hartree not on the phase-table grid")
        return int(idx[0])

    def keys(self):
        return sorted({key for key, _ in self.phases})


def species_key(label):
    """Element symbol of an atom label such as 'C1' or 'H10'."""
    m = re.match(r"[A-Za-z]+", label)
    if not m:
        raise InputError(f"cannot infer species from label {label!r}")
    return m.group(0)
