"""Generate the bundled model species tables for H, C, N, O.

Each atom is a neutral free atom with single-zeta Slater-type orbitals
(Clementi-Raimondi exponents).  With normalized STOs the enclosed charge
and the outer potential integral are regularized incomplete gamma
functions, so the tables are analytic:

    rho(r) = sum occ * R_n(r)^2 / (4 pi)
    q(r)   = Z - sum occ P(2n+1, 2 zeta r) + r sum occ (zeta/n) Q(2n, 2 zeta r)

so that  V_st = -q(r)/r  is the electrostatic potential of nucleus + cloud.

Usage:  python tools/make_model_species.py [outdir]
"""
import sys
from math import factorial
from pathlib import Path

import numpy as np
from scipy.special import gammainc, gammaincc

from mscatter.constants import ev_to_hartree
from mscatter.radial import RadialTable, Species, format_species

IONIZATION_EV = 8.35      # uracil

# Z, [(n, zeta, occupation), ...]
ATOMS = {
    "H": (1, [(1, 1.0, 1)]),
    "C": (6, [(1, 5.6727, 2), (2, 1.6083, 2), (2, 1.5679, 2)]),
    "N": (7, [(1, 6.6651, 2), (2, 1.9237, 2), (2, 1.9170, 3)]),
    "O": (8, [(1, 7.6579, 2), (2, 2.2458, 2), (2, 2.2266, 4)]),
}

GRID = np.geomspace(1e-4, 3.0, 600)


def tables(z, shells, r=GRID):
    rho = np.zeros_like(r)
    q = np.full_like(r, float(z))
    for n, zeta, occ in shells:
        c2 = (2 * zeta) ** (2 * n + 1) / factorial(2 * n)
        rho += occ * c2 * r ** (2 * n - 2) * np.exp(-2 * zeta * r) / (4 * np.pi)
        q += -occ * gammainc(2 * n + 1, 2 * zeta * r) \
            + r * occ * (zeta / n) * gammaincc(2 * n, 2 * zeta * r)
    return q, rho


def main(outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for label, (z, shells) in ATOMS.items():
        q, rho = tables(z, shells)
        sp = Species(label, ev_to_hartree(IONIZATION_EV), RadialTable(GRID, q),
                     RadialTable(GRID, rho, nonnegative=True))
        note = (f"model species {label}: neutral free atom, Slater-type orbitals\n"
                f"generated by tools/make_model_species.py")
        (outdir / f"{label}.species").write_text(format_species(sp, note))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1]
         / "src/mscatter/data/species")
