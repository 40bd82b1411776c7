"""Shared test helpers (fixture builders)."""
from pathlib import Path

import numpy as np

import mscatter
from mscatter.model import parse_molecule
from mscatter.radial import AtomicPotential

DATA = Path(mscatter.__file__).parent / "data"
URACIL = DATA / "uracil.mol"
SPECIES = DATA / "species"


def two_site(R, radius=0.1, label="X", axis=(1.0, 0.0, 0.0)):
    """Two identical atoms at -+R/2 along ``axis``."""
    a = [float(v) for v in np.asarray(axis, float) * R / 2]
    text = (f"{label}1 {radius} {-a[0]!r} {-a[1]!r} {-a[2]!r}\n"
            f"{label}2 {radius} {a[0]!r} {a[1]!r} {a[2]!r}\n")
    return parse_molecule(text)


def uracil_potentials(molecule, species):
    return {key: AtomicPotential.from_species(species[a.species], a.radius)
            for a, key in zip(molecule.atoms, molecule.potential_keys())}


#: (criterion number, PASS/FAIL, detail) lines, printed at the end of the run
ACCEPTANCE = []


def report(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok
