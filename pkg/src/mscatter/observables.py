"""Observables derived from molecular modes.

Partial harmonics, differential and integral cross sections, resonance
extraction from branch-tracked phases, and reconstruction of a partial wave
from atomic radial solutions.  Energies are hartree unless a name says eV.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constants import hartree_to_ev
from .model import SymmetryLabel
from .msm import w_coefficients
from .radial import solve_inhomogeneous
from .specfun import sph_harm_all

log = logging.getLogger(__name__)

_I_POW = (1, 1j, -1, -1j)
FOUR_PI = 4 * math.pi


# ---------------------------------------------------------------------------
# partial harmonics and cross sections
# ---------------------------------------------------------------------------

def sphere_quadrature(n_theta=50, n_phi=100):
    """Gauss-Legendre in cos(theta) times a uniform phi grid.

    Returns ``(directions, weights)`` with directions of shape ``(M, 3)`` and
    weights summing to 4 pi.
    """
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    s = np.sqrt(1 - z * z)
    dirs = np.stack([np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)),
                     np.outer(z, np.ones(n_phi))], axis=-1).reshape(-1, 3)
    weights = np.outer(wz, np.full(n_phi, 2 * np.pi / n_phi)).ravel()
    return dirs, weights


@dataclass(frozen=True)
class PartialHarmonic:
    """A(n) = sum_ilm x_ilm exp(-i k n.a_i) Y_lm(n) for one mode."""

    x: np.ndarray = field(repr=False)
    k: float
    positions: np.ndarray = field(repr=False)
    channels: object = field(repr=False)

    @classmethod
    def from_modes(cls, modes, n):
        return cls(modes.vectors[:, n], modes.k, modes.positions, modes.channels)

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        flat = n.reshape(-1, 3)
        lmax = max(self.channels.lmax)
        Y = sph_harm_all(lmax, flat)                       # (nlm, M)
        phase = np.exp(-1j * self.k * flat @ self.positions.T)  # (M, atoms)
        out = np.zeros(len(flat), dtype=complex)
        for c, (i, l, m) in enumerate(self.channels.triples):
            if self.x[c] != 0:
                out += self.x[c] * phase[:, i] * Y[l * l + l + m]
        return out.reshape(n.shape[:-1])


def partial_harmonic(modes, n, directions):
    """A(n) of mode ``n`` at ``directions`` (Cartesian, trailing axis 3)."""
    return PartialHarmonic.from_modes(modes, n)(directions)


def harmonic_norm(modes, n, quadrature=None):
    """Sphere integral of |A(n)|^2."""
    dirs, weights = quadrature or sphere_quadrature()
    a = partial_harmonic(modes, n, dirs)
    return float(np.sum(weights * np.abs(a) ** 2))


def differential_xsec(modes, n, directions):
    """Per-mode dsigma/dOmega = (4 pi / k^2) |A(n)|^2 sin^2(delta), bohr^2/sr.

    This normalization integrates over the sphere to the mode's term of
    :func:`integral_xsec`.
    """
    delta = modes.phases[n]
    a = partial_harmonic(modes, n, directions)
    return FOUR_PI / modes.k**2 * np.abs(a) ** 2 * np.sin(delta) ** 2


@dataclass(frozen=True)
class CrossSection:
    energy: float
    total: float
    partial: dict

    @property
    def energy_ev(self):
        return hartree_to_ev(self.energy)


def integral_xsec(modes):
    """sigma = (4 pi / k^2) sum_n sin^2(delta_n), split by symmetry label.

    ``total`` is defined as the sum of the partial sums, so the split is
    additive exactly.
    """
    terms = FOUR_PI / modes.k**2 * np.sin(modes.phases) ** 2
    partial = {}
    for label, t in zip(modes.labels, terms):
        partial[label] = partial.get(label, 0.0) + float(t)
    total = 0.0
    for value in partial.values():
        total += value
    return CrossSection(modes.energy, total, partial)


# ---------------------------------------------------------------------------
# resonances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResonanceRecord:
    energy_ev: float
    width_ev: Optional[float]
    symmetry: SymmetryLabel
    branch_id: int


def _local_poly(E, d, j):
    # quartic through 5 samples around interval [j, j+1], in a scaled variable
    n = len(E)
    lo = min(max(j - 1, 0), max(n - 5, 0))
    idx = np.arange(lo, min(lo + 5, n))
    center, scale = E[j], E[j + 1] - E[j]
    coef = np.polyfit((E[idx] - center) / scale, d[idx], len(idx) - 1)
    return lambda e: np.polyval(coef, (np.asarray(e) - center) / scale)


def _bisect(f, a, b, tol):
    fa, fb = f(a), f(b)
    if (fa > 0) == (fb > 0):
        # root sits on a grid node and rounding moved it outside the bracket
        return a if abs(fa) <= abs(fb) else b
    while b - a > tol:
        c = 0.5 * (a + b)
        fc = f(c)
        if (fc > 0) == (fa > 0):
            a, fa = c, fc
        else:
            b = c
    return 0.5 * (a + b)


def find_resonances(branches, tol=1e-9, refine=8):
    """Crossings of delta = pi/2 (mod pi) along branch-tracked phase curves.

    Each branch needs ``energies`` (hartree), continuous ``delta``,
    ``symmetry`` and ``id``.  A local quartic through five samples is bisected
    to ``tol`` hartree, and delta' at the root comes from a 5-point centered
    stencil with spacing h/``refine``.  Gamma = 2/delta'; records with
    delta' <= 0 carry ``width_ev = None``.
    """
    records = []
    for br in branches:
        E = np.asarray(br.energies, dtype=float)
        d = np.asarray(br.delta, dtype=float)
        if len(E) < 2:
            continue
        jumps = np.abs(np.diff(d)) > np.pi / 2
        if jumps.any():
            log.warning("branch %s: phase step above pi/2 near E=%.6g hartree; "
                        "refine the energy grid", br.id, E[1:][jumps][0])
        level = np.floor((d - np.pi / 2) / np.pi)
        for j in np.nonzero(level[1:] != level[:-1])[0]:
            if len(E) < 5 or jumps[j]:
                continue
            poly = _local_poly(E, d, j)
            target = np.pi / 2 + np.pi * max(level[j], level[j + 1])
            e_res = _bisect(lambda e: poly(e) - target, E[j], E[j + 1], tol)
            h = (E[j + 1] - E[j]) / refine
            f = poly(e_res + h * np.array([-2, -1, 1, 2]))
            slope = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
            width = hartree_to_ev(2 / slope) if slope > 0 else None
            records.append(ResonanceRecord(hartree_to_ev(e_res), width,
                                           SymmetryLabel(br.symmetry), int(br.id)))
    records.sort(key=lambda r: (r.energy_ev, r.branch_id))
    return records


# ---------------------------------------------------------------------------
# wave reconstruction
# ---------------------------------------------------------------------------

def radial_solutions(molecule, modes, n, potentials, steps=None):
    """RadialSolution per channel with nonzero weight in mode ``n``.

    ``potentials`` maps potential keys (see ``Molecule.potential_keys``) to
    AtomicPotential objects.
    """
    keys = molecule.potential_keys()
    delta = float(modes.phases[n])
    w = w_coefficients(modes, n)
    x = modes.vectors[:, n]
    out = {}
    for c, (i, l, _) in enumerate(modes.channels.triples):
        if x[c] != 0:
            out[c] = solve_inhomogeneous(potentials[keys[i]], l, modes.k, delta,
                                         float(w[c]), steps)
    return out


def reconstruct_wave(molecule, modes, n, points, potentials=None, solutions=None,
                     steps=None):
    """Psi(r) = sum_ilm x_ilm i^l psi_ilm(|r - a_i|) Y_lm(r - a_i) at ``points``.

    Pass either ``potentials`` (radial solutions are computed) or
    precomputed ``solutions`` from :func:`radial_solutions`.
    """
    if solutions is None:
        solutions = radial_solutions(molecule, modes, n, potentials, steps)
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 3)
    lmax = max(modes.channels.lmax)
    x = modes.vectors[:, n]
    psi = np.zeros(len(flat), dtype=complex)
    for i, a in enumerate(molecule.positions):
        rel = flat - a
        dist = np.linalg.norm(rel, axis=1)
        rel[dist == 0] = (0.0, 0.0, 1.0)
        Y = None
        for c in range(modes.channels.offsets[i], modes.channels.offsets[i + 1]):
            if c not in solutions:
                continue
            if Y is None:
                Y = sph_harm_all(lmax, rel)
            _, l, m = modes.channels.triples[c]
            psi += x[c] * _I_POW[l % 4] * solutions[c](dist) * Y[l * l + l + m]
    return psi.reshape(pts.shape[:-1])
