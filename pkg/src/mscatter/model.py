"""Molecular geometry and channel bookkeeping.

Molecule file format (text, one atom per row)::

    # comment
    units bohr            # optional; bohr is the only unit
    overlap_tol 0.25      # optional; tolerated sphere overlap in bohr
    C1  1.37  -2.29558  0.66988  [z]

Columns are ``label d x y [z]``; z defaults to 0.  The species of an atom is
the alphabetic prefix of its label.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import MoleculeSyntaxError, OverlapError, UnknownSpeciesError
from .radial import species_key

OVERLAP_TOL = 1e-6
PLANAR_TOL = 1e-8
DEFAULT_LMAX = 1


class SymmetryLabel(str, enum.Enum):
    """Reflection symmetry in the z = 0 plane (the Cs group)."""

    A1 = "A'"
    A2 = "A''"
    NONE = "none"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Atom:
    label: str
    radius: float
    position: tuple
    species: str
    text: Optional[tuple] = field(default=None, compare=False, repr=False)

    @property
    def xyz(self):
        return np.array(self.position, dtype=float)


@dataclass(frozen=True)
class Violation:
    i: int
    j: int
    labels: tuple
    distance: float
    radii_sum: float

    @property
    def overlap(self):
        return self.radii_sum - self.distance

    def __str__(self):
        a, b = self.labels
        return (f"{a}-{b}: |a_ij|={self.distance:.6g} < d_i+d_j={self.radii_sum:.6g}"
                f" (overlap {self.overlap:.3g} bohr)")


@dataclass(frozen=True)
class Molecule:
    atoms: tuple
    overlap_tol: float = OVERLAP_TOL

    def __post_init__(self):
        if not self.atoms:
            raise MoleculeSyntaxError("molecule has no atoms")

    def __len__(self):
        return len(self.atoms)

    @property
    def positions(self):
        return np.array([a.position for a in self.atoms], dtype=float)

    @property
    def radii(self):
        return np.array([a.radius for a in self.atoms])

    @property
    def species(self):
        return sorted({a.species for a in self.atoms})

    def pair_vector(self, i, j):
        """a_ij = a_i - a_j."""
        return self.positions[i] - self.positions[j]

    @property
    def is_planar(self):
        return bool(np.all(np.abs(self.positions[:, 2]) < PLANAR_TOL))

    def translated(self, shift):
        shift = np.asarray(shift, dtype=float)
        atoms = tuple(Atom(a.label, a.radius, tuple(a.xyz + shift), a.species)
                      for a in self.atoms)
        return Molecule(atoms, self.overlap_tol)

    def rotated(self, rotation):
        rotation = np.asarray(rotation, dtype=float)
        atoms = tuple(Atom(a.label, a.radius, tuple(rotation @ a.xyz), a.species)
                      for a in self.atoms)
        return Molecule(atoms, self.overlap_tol)

    def scaled_radii(self, factor):
        atoms = tuple(Atom(a.label, a.radius * factor, a.position, a.species)
                      for a in self.atoms)
        return Molecule(atoms, self.overlap_tol)

    def potential_keys(self):
        """Key per atom naming its sphere potential: species, or species@radius
        when one species appears with several radii."""
        radii = {}
        for a in self.atoms:
            radii.setdefault(a.species, set()).add(a.radius)
        return [a.species if len(radii[a.species]) == 1 else f"{a.species}@{a.radius:g}"
                for a in self.atoms]


def validate_radii(molecule, tol=OVERLAP_TOL):
    """All atom pairs whose spheres overlap by more than ``tol`` bohr."""
    pos = molecule.positions
    out = []
    for i, j in combinations(range(len(molecule)), 2):
        dist = float(np.linalg.norm(pos[i] - pos[j]))
        rsum = molecule.atoms[i].radius + molecule.atoms[j].radius
        if dist < rsum - tol:
            out.append(Violation(i, j, (molecule.atoms[i].label, molecule.atoms[j].label),
                                 dist, rsum))
    return out


def touching_pairs(molecule, tol=1e-2):
    """Pairs satisfying d_i + d_j = |a_ij| within ``tol`` (informational)."""
    pos = molecule.positions
    out = []
    for i, j in combinations(range(len(molecule)), 2):
        dist = float(np.linalg.norm(pos[i] - pos[j]))
        rsum = molecule.atoms[i].radius + molecule.atoms[j].radius
        if abs(dist - rsum) <= tol:
            out.append((i, j))
    return out


def parse_molecule(text, known_species=None, overlap_tol=None):
    """Parse molecule-file text.

    ``known_species`` (optional) restricts species references.  The overlap
    tolerance comes from the argument, else the file's ``overlap_tol``
    header, else :data:`OVERLAP_TOL`.
    """
    atoms = []
    file_tol = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].lower()
        if head == "units":
            if len(tokens) != 2 or tokens[1].lower() != "bohr":
                raise MoleculeSyntaxError("only 'units bohr' is supported", lineno)
            continue
        if head == "overlap_tol":
            try:
                file_tol = float(tokens[1])
            except (IndexError, ValueError):
                raise MoleculeSyntaxError("overlap_tol needs a number", lineno) from None
            continue
        if len(tokens) not in (4, 5):
            raise MoleculeSyntaxError(f"expected 'label d x y [z]', got {len(tokens)} fields",
                                      lineno)
        label = tokens[0]
        try:
            values = [float(t) for t in tokens[1:]]
        except ValueError:
            raise MoleculeSyntaxError("non-numeric field", lineno) from None
        if not np.all(np.isfinite(values)):
            raise MoleculeSyntaxError("non-finite field", lineno)
        radius, xyz = values[0], values[1:] + [0.0] * (4 - len(values))
        if radius <= 0:
            raise MoleculeSyntaxError(f"radius of {label} must be positive", lineno)
        try:
            species = species_key(label)
        except Exception:
            raise MoleculeSyntaxError(f"bad atom label {label!r}", lineno) from None
        if known_species is not None and species not in known_species:
            raise UnknownSpeciesError(f"line {lineno}: unknown species {species!r} for {label}")
        atoms.append(Atom(label, radius, tuple(xyz), species, tuple(tokens[1:])))
    if not atoms:
        raise MoleculeSyntaxError("molecule file contains no atoms")
    tol = overlap_tol if overlap_tol is not None else (
        file_tol if file_tol is not None else OVERLAP_TOL)
    molecule = Molecule(tuple(atoms), tol)
    violations = validate_radii(molecule, tol)
    if violations:
        raise OverlapError(violations)
    return molecule


def read_molecule(path, known_species=None, overlap_tol=None):
    with open(path) as fh:
        return parse_molecule(fh.read(), known_species, overlap_tol)


def serialize_molecule(molecule):
    lines = ["units bohr"]
    if molecule.overlap_tol != OVERLAP_TOL:
        lines.append(f"overlap_tol {molecule.overlap_tol!r}")
    for a in molecule.atoms:
        fields = a.text or (repr(a.radius),) + tuple(repr(float(c)) for c in a.position)
        lines.append(" ".join((a.label,) + tuple(fields)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def channel_parity(l, m, planar=True):
    """A' for even l + m, A'' for odd; NONE for non-planar molecules."""
    if not planar:
        return SymmetryLabel.NONE
    return SymmetryLabel.A1 if (l + m) % 2 == 0 else SymmetryLabel.A2


class ChannelIndex:
    """Flat index <-> (atom, l, m): atoms in file order, l ascending, m = -l..l."""

    def __init__(self, lmax):
        self.lmax = tuple(int(v) for v in lmax)
        self.triples = [(i, l, m) for i, L in enumerate(self.lmax)
                        for l in range(L + 1) for m in range(-l, l + 1)]
        self._flat = {t: n for n, t in enumerate(self.triples)}
        self.offsets = np.cumsum([0] + [(L + 1) ** 2 for L in self.lmax])

    @classmethod
    def for_molecule(cls, molecule, lmax=DEFAULT_LMAX, overrides=None):
        overrides = overrides or {}
        return cls([overrides.get(a.species, lmax) for a in molecule.atoms])

    def __len__(self):
        return len(self.triples)

    def flat(self, i, l, m):
        return self._flat[(i, l, m)]

    def triple(self, n):
        return self.triples[n]

    def block(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def labels(self, planar=True):
        return [channel_parity(l, m, planar) for _, l, m in self.triples]
