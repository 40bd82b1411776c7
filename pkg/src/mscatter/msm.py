"""Multiple-scattering core.

Builds the channel matrices

    S_{ilm, j l1 m1} = sum_{l2} i^{l2} Q^{l1 m1}_{l2 m2 l m} j_{l2}(k|a_ij|) Y_{l2 m2}(a_ij/|a_ij|)
    N_{ilm, j l1 m1} = same with y_{l2},       N_{ilm, ilm} = cot(delta_il)

with m2 = m1 - m and a_ij = a_i - a_j, and solves N x = lambda S x,
lambda = cot(delta), for the molecular partial phases delta.  S diagonal
blocks are the identity.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, solve_triangular
from scipy.linalg.lapack import zpotrf
from scipy.optimize import linear_sum_assignment

from .errors import InputError, SingularOverlapError, UnboundedDiagonalError
from .model import ChannelIndex, SymmetryLabel
from .radial import PhaseTable
from .specfun import (gaunt_table, lm_index, n_lm, sph_bessel_j_all,
                      sph_bessel_y_all, sph_harm_all)

log = logging.getLogger(__name__)

_I_POW = (1, 1j, -1, -1j)
DEGENERACY_RTOL = 1e-9
AMBIGUITY = 1e-3
#: relative S-eigenvalue threshold below which a direction is treated as non-radiating
NULL_TOL = 1e-9


def _channels(molecule, lmax):
    if isinstance(lmax, ChannelIndex):
        return lmax
    if isinstance(lmax, int):
        return ChannelIndex([lmax] * len(molecule))
    return ChannelIndex(lmax)


def _assemble(molecule, k, channels, radial):
    lmax = max(channels.lmax)
    G = gaunt_table(lmax)
    l2_of = np.array([l for l in range(2 * lmax + 1) for _ in range(2 * l + 1)])
    phase = np.array([_I_POW[l % 4] for l in l2_of])
    pos = molecule.positions
    n = len(channels)
    M = np.zeros((n, n), dtype=complex)
    for i in range(len(molecule)):
        bi = channels.block(i)
        ni = bi.stop - bi.start
        for j in range(len(molecule)):
            if i == j:
                continue
            bj = channels.block(j)
            nj = bj.stop - bj.start
            a = pos[i] - pos[j]
            dist = np.linalg.norm(a)
            f = radial(2 * lmax, k * dist)[l2_of]
            Y = sph_harm_all(2 * lmax, a)
            vec = phase * f * Y
            M[bi, bj] = G[:ni, :nj, :] @ vec
    return M


def assemble_S(molecule, k, lmax=1):
    """Regular-propagator matrix S (hermitian, identity diagonal blocks)."""
    if k <= 0:
        raise InputError("wavenumber must be positive")
    channels = _channels(molecule, lmax)
    S = _assemble(molecule, k, channels, sph_bessel_j_all)
    S[np.diag_indices(len(channels))] = 1.0
    return S


def atomic_cot(molecule, channels, phases):
    """cot(delta_il) per channel from a (key, l) -> delta mapping."""
    keys = molecule.potential_keys()
    out = np.empty(len(channels))
    for n, (i, l, _) in enumerate(channels.triples):
        try:
            delta = phases[(keys[i], l)]
        except KeyError:
            raise InputError(f"no atomic phase for {keys[i]!r}, l={l}") from None
        s = np.sin(delta)
        if delta == 0:
            out[n] = np.inf      # null potential: the channel does not scatter
            continue
        if abs(s) < 1e-12:
            raise UnboundedDiagonalError(
                f"atomic phase of {keys[i]}, l={l} is 0 mod pi (cot diverges)")
        out[n] = np.cos(delta) / s
    return out


def phases_at(table, index):
    """Atomic phases at grid point ``index`` of a PhaseTable, as a mapping."""
    return {key: float(v[index]) for key, v in table.phases.items()}


def assemble_N(molecule, k, lmax, phases):
    """Irregular-propagator matrix N with cot(delta_il) on the diagonal.

    ``phases`` is a (key, l) -> delta mapping, or a PhaseTable containing
    the energy k**2/2 on its grid.
    """
    if k <= 0:
        raise InputError("wavenumber must be positive")
    channels = _channels(molecule, lmax)
    if isinstance(phases, PhaseTable):
        phases = phases_at(phases, phases.index_of(0.5 * k * k))
    N = _assemble(molecule, k, channels, sph_bessel_y_all)
    N[np.diag_indices(len(channels))] = atomic_cot(molecule, channels, phases)
    return N


def hermiticity_residual(M):
    return float(np.max(np.abs(M - M.conj().T)))


# ---------------------------------------------------------------------------
# eigenproblem
# ---------------------------------------------------------------------------

@dataclass
class ModeSet:
    """Eigenpairs of N x = lambda S x at one energy.

    ``vectors[:, n]`` is mode n, normalized so that x^H S x = 1.  Modes with
    lambda = +-inf (delta = 0 or pi) carry ``radiating[n] = False``: those
    of channels with a vanishing atomic phase, and directions in the
    numerical null space of S (see :func:`solve_modes`), which have unit
    Euclidean norm instead.
    """

    energy: float
    k: float
    eigenvalues: np.ndarray
    vectors: np.ndarray
    labels: list
    S: np.ndarray = field(repr=False)
    N: np.ndarray = field(repr=False)
    channels: ChannelIndex = field(default=None, repr=False)
    positions: np.ndarray = field(default=None, repr=False)
    radiating: np.ndarray = None
    deflated: bool = False

    def __post_init__(self):
        if self.radiating is None:
            self.radiating = np.isfinite(self.eigenvalues)

    @property
    def phases(self):
        """delta_n = arccot(lambda_n) in (0, pi); 0 or pi for null modes."""
        return np.arctan2(1.0, self.eigenvalues)

    @property
    def atomic_cot(self):
        return np.real(np.diag(self.N))

    def __len__(self):
        return len(self.eigenvalues)

    def is_free(self, n):
        """True if mode ``n`` lives only on channels with zero atomic phase."""
        return bool(np.all(np.isinf(self.atomic_cot[self.vectors[:, n] != 0])))

    def block_indices(self, label):
        return [n for n, lab in enumerate(self.labels) if lab == label]


def _cluster_gram_schmidt(X, S, lam):
    # S-orthonormalize eigenvectors sharing an eigenvalue (modified Gram-Schmidt)
    n = len(lam)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and abs(lam[stop] - lam[start]) < DEGENERACY_RTOL * (1 + abs(lam[start])):
            stop += 1
        for a in range(start, stop):
            v = X[:, a]
            for b in range(start, a):
                v = v - (X[:, b].conj() @ S @ v) * X[:, b]
            X[:, a] = v / np.sqrt(np.real(v.conj() @ S @ v))
        start = stop
    return X


def cholesky_factor(S, offset_index=None):
    """Lower Cholesky factor of S; SingularOverlapError names the failing pivot."""
    L, info = zpotrf(np.asarray(S, dtype=complex), lower=1, clean=1)
    if info > 0:
        pivot = int(offset_index[info - 1]) if offset_index is not None else info - 1
        raise SingularOverlapError(pivot)
    if info < 0:
        raise ValueError(f"zpotrf: illegal argument {-info}")
    return L


def _solve_cholesky(S, N, offset_index):
    L = cholesky_factor(S, offset_index)
    X = solve_triangular(L, N, lower=True)
    C = solve_triangular(L, X.conj().T, lower=True)
    C = 0.5 * (C + C.conj().T)
    lam, Z = eigh(C)
    vecs = solve_triangular(L, Z, lower=True, trans="C")
    vecs = _cluster_gram_schmidt(vecs, S, lam)
    return lam, vecs, np.ones(len(lam), dtype=bool)


def _solve_deflated(S, N, s, U, null_tol):
    # S = U diag(s) U^H; directions with s <= null_tol * s_max do not radiate.
    keep = s > null_tol * s[-1]
    UK, UZ = U[:, keep], U[:, ~keep]
    sK = s[keep]
    Np = U.conj().T @ N @ U
    Np = 0.5 * (Np + Np.conj().T)
    NKK = Np[np.ix_(keep, keep)]
    NKZ = Np[np.ix_(keep, ~keep)]
    NZZ = Np[np.ix_(~keep, ~keep)]
    # eliminate the null block: N_ZK y + N_ZZ z = 0
    try:
        elim = np.linalg.solve(NZZ, NKZ.conj().T)
    except np.linalg.LinAlgError:
        log.warning("null-space block of N is singular; using pseudo-inverse")
        elim = np.linalg.pinv(NZZ, hermitian=True) @ NKZ.conj().T
    T = NKK - NKZ @ elim
    # Rayleigh-Ritz of (N, S) on x = U_K y + U_Z z with z = -elim y; the
    # metric keeps the small s_Z so that the modes come out S-orthonormal
    root = 1 / np.sqrt(sK)
    C = root[:, None] * T * root[None, :]
    C = 0.5 * (C + C.conj().T)
    E = elim * root[None, :]
    M = np.eye(len(sK)) + E.conj().T @ (s[~keep][:, None] * E)
    M = 0.5 * (M + M.conj().T)
    lam, Yh = eigh(C, M)
    y = root[:, None] * Yh
    z = -elim @ y
    vecs = UK @ y + UZ @ z
    vecs = _cluster_gram_schmidt(vecs, S, lam)
    mu, V = eigh(NZZ)
    null_vecs = UZ @ V
    null_lam = np.where(mu >= 0, np.inf, -np.inf)
    lam_all = np.concatenate([lam, null_lam])
    vec_all = np.hstack([vecs, null_vecs])
    radiating = np.concatenate([np.ones(len(lam), bool), np.zeros(len(mu), bool)])
    return lam_all, vec_all, radiating


def _solve_block(S, N, offset_index, null_tol):
    free = np.isinf(np.real(np.diag(N)))
    if free.any():
        # channels of null potentials: x must vanish there for finite lambda
        n = len(free)
        lam = np.full(n, np.inf)
        vecs = np.zeros((n, n), dtype=complex)
        rad = np.zeros(n, dtype=bool)
        live = np.flatnonzero(~free)
        deflated = False
        if len(live):
            sub = np.ix_(live, live)
            lam_l, vec_l, rad_l, deflated = _solve_block(S[sub], N[sub],
                                                         np.asarray(offset_index)[live], null_tol)
            lam[:len(live)] = lam_l
            vecs[live, :len(live)] = vec_l
            rad[:len(live)] = rad_l
        for col, c in enumerate(np.flatnonzero(free), start=len(live)):
            vecs[c, col] = 1.0
        return lam, vecs, rad, deflated
    if null_tol is None:
        lam, vecs, rad = _solve_cholesky(S, N, offset_index)
        return lam, vecs, rad, False
    s, U = eigh(S)
    if s[0] > null_tol * s[-1]:
        lam, vecs, rad = _solve_cholesky(S, N, offset_index)
        return lam, vecs, rad, False
    return (*_solve_deflated(S, N, s, U, null_tol), True)


def solve_modes(S, N, labels=None, energy=None, channels=None, positions=None,
                null_tol=None):
    """Full spectrum of N x = lambda S x via Cholesky reduction S = L L^H.

    With channel ``labels`` (A'/A''), each symmetry block is solved on its
    own, so eigenvectors have exactly zero weight outside their block.

    ``null_tol=None`` is the plain Cholesky route; a Cholesky breakdown
    raises :class:`SingularOverlapError`.  With a relative tolerance, blocks
    whose S has eigenvalues below ``null_tol * max`` are deflated: that
    null space is eliminated from N by a Schur complement, the remaining
    pencil is solved exactly, and the eliminated directions are returned
    as non-radiating modes.

    Channels whose N diagonal is infinite (atomic phase exactly zero) are
    split off first as lambda = +inf modes.
    """
    S = np.asarray(S, dtype=complex)
    N = np.asarray(N, dtype=complex)
    n = S.shape[0]
    if labels is None:
        labels = [SymmetryLabel.NONE] * n
    order = [SymmetryLabel.A1, SymmetryLabel.A2, SymmetryLabel.NONE]
    eigenvalues, columns, mode_labels, radiating = [], [], [], []
    deflated = False
    for label in order:
        idx = np.array([c for c in range(n) if labels[c] == label], dtype=int)
        if len(idx) == 0:
            continue
        lam, vecs, rad, defl = _solve_block(S[np.ix_(idx, idx)], N[np.ix_(idx, idx)],
                                            idx, null_tol)
        deflated |= defl
        full = np.zeros((n, len(idx)), dtype=complex)
        full[idx] = vecs
        eigenvalues.append(lam)
        columns.append(full)
        radiating.append(rad)
        mode_labels += [label] * len(idx)
    k = np.sqrt(2 * energy) if energy is not None else None
    return ModeSet(energy, k, np.concatenate(eigenvalues), np.hstack(columns),
                   mode_labels, S, N, channels, positions,
                   np.concatenate(radiating), deflated)


def modes_at(molecule, energy, phases, lmax=1, null_tol=NULL_TOL):
    """Assemble S and N at ``energy`` (hartree) and solve; ``phases`` is a
    (key, l) -> delta mapping valid at that energy."""
    channels = _channels(molecule, lmax)
    k = np.sqrt(2 * energy)
    S = assemble_S(molecule, k, channels)
    N = assemble_N(molecule, k, channels, phases)
    labels = channels.labels(molecule.is_planar)
    return solve_modes(S, N, labels, energy, channels, molecule.positions, null_tol)


def w_coefficients(modes, n):
    """w_ilm = sin(delta)(cot(delta_il) - cot(delta)) for mode ``n``.

    Channels on which the mode has no weight get w = 0, and so do the
    decoupled modes of zero-phase channels.  Modes from the null space of S
    have no finite w.
    """
    if not modes.radiating[n]:
        if modes.is_free(n):
            return np.zeros(len(modes))
        raise ValueError(f"mode {n} lies in the null space of S and does not radiate")
    lam = modes.eigenvalues[n]
    delta = np.arctan2(1.0, lam)
    w = np.sin(delta) * (modes.atomic_cot - lam)
    x = modes.vectors[:, n]
    w[np.abs(x) <= 1e-14 * np.max(np.abs(x))] = 0.0
    return w


# ---------------------------------------------------------------------------
# energy scans and branch tracking
# ---------------------------------------------------------------------------

@dataclass
class Branch:
    id: int
    symmetry: SymmetryLabel
    energies: np.ndarray
    delta: np.ndarray          # unwrapped, continuous
    eigenvalues: np.ndarray
    mode_index: np.ndarray     # column in each ModeSet


@dataclass
class Scan:
    modes: list
    branches: list

    @property
    def energies(self):
        return np.array([m.energy for m in self.modes])


def _wrap_distance(a, b):
    d = np.abs(a - b) % np.pi
    return np.minimum(d, np.pi - d)


def _associate(prev, cur, label):
    ia = prev.block_indices(label)
    ib = cur.block_indices(label)
    Xa = prev.vectors[:, ia]
    Xb = cur.vectors[:, ib]
    # cosine in the S(E_j+1) metric: bounded by 1 even for near-null modes,
    # whose S-norm drifts with energy
    SXb = cur.S @ Xb
    na = np.sqrt(np.abs(np.einsum("ia,ia->a", Xa.conj(), cur.S @ Xa)))
    nb = np.sqrt(np.abs(np.einsum("ib,ib->b", Xb.conj(), SXb)))
    overlap = np.abs(Xa.conj().T @ SXb) / np.maximum(np.outer(na, nb), 1e-300)
    dist = _wrap_distance(prev.phases[ia][:, None], cur.phases[ib][None, :]) / np.pi
    rows, cols = linear_sum_assignment(-overlap + AMBIGUITY * dist)
    live = prev.radiating[ia]
    for r in rows:
        if live[r] and overlap.shape[1] > 1:
            top = np.sort(overlap[r])[-2:]
            if top[1] - top[0] < AMBIGUITY:
                log.warning("ambiguous branch association at E=%.6g hartree (%s); "
                            "resolved by phase proximity", cur.energy, label)
    mapping = dict(zip(np.asarray(ia)[rows], np.asarray(ib)[cols]))
    return mapping


def scan_energies(molecule, energies, phases, lmax=1, workers=1, null_tol=NULL_TOL):
    """Modes on an energy grid (hartree) with branch association.

    ``phases`` must be a PhaseTable on exactly this grid.  Modes at adjacent
    energies are matched by maximal |x_n(E_j)^H S x_m(E_j+1)| inside each
    symmetry block, and phases are unwrapped by multiples of pi.  Non-radiating
    modes (delta = 0 mod pi) keep the branch count constant across the grid.
    """
    energies = np.asarray(energies, dtype=float)
    if len(energies) == 0 or np.any(energies <= 0) or np.any(np.diff(energies) <= 0):
        raise InputError("energy grid must be positive and strictly increasing")
    if len(phases.energies) != len(energies) or not np.allclose(
            phases.energies, energies, rtol=1e-12, atol=0):
        raise InputError("phase table grid differs from the scan grid")
    channels = _channels(molecule, lmax)

    def one(j):
        return modes_at(molecule, energies[j], phases_at(phases, j), channels, null_tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            modes = list(pool.map(one, range(len(energies))))
    else:
        modes = [one(j) for j in range(len(energies))]

    nmodes = len(modes[0])
    track = np.empty((len(energies), nmodes), dtype=int)
    track[0] = np.arange(nmodes)
    for j in range(1, len(energies)):
        mapping = {}
        for label in dict.fromkeys(modes[0].labels):
            mapping.update(_associate(modes[j - 1], modes[j], label))
        track[j] = [mapping[c] for c in track[j - 1]]

    branches = []
    for b in range(nmodes):
        idx = track[:, b]
        lam = np.array([modes[j].eigenvalues[idx[j]] for j in range(len(energies))])
        raw = np.arctan2(1.0, lam)
        delta = raw.copy()
        for j in range(1, len(raw)):
            delta[j] = raw[j] + np.pi * np.round((delta[j - 1] - raw[j]) / np.pi)
        branches.append(Branch(b, modes[0].labels[b], energies.copy(), delta, lam, idx))
    return Scan(modes, branches)
