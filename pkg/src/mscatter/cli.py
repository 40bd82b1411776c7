"""Command-line pipeline: atomic phases -> molecular phases -> observables.

Every stage writes one CSV into ``--out``.  Atomic phase tables and energy
scans are cached under ``<out>/.cache`` keyed by a hash of everything they
depend on, so later stages reuse earlier work.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from decimal import Decimal
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .constants import ev_to_hartree, hartree_to_ev
from .errors import InputError, NumericalError
from .model import ChannelIndex, SymmetryLabel, read_molecule, serialize_molecule
from .msm import (NULL_TOL, Branch, assemble_N, assemble_S, modes_at, phases_at,
                  scan_energies)
from .observables import find_resonances, reconstruct_wave
from .radial import AtomicPotential, PhaseTable, load_species_dir

log = logging.getLogger("mscatter")

LMAX_LIMIT = 4
_DATA = resources.files("mscatter") / "data"


def default_molecule():
    return Path(str(_DATA / "uracil.mol"))


def default_species_dir():
    return Path(str(_DATA / "species"))


def fmt(value):
    """Locale-independent 12-significant-digit float formatting."""
    return format(float(value), ".12g")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    molecule: Path = field(default_factory=default_molecule)
    species_dir: Path = field(default_factory=default_species_dir)
    emin: float = 0.1
    emax: float = 10.0
    n: int = 100
    lmax: int = 1
    lmax_species: dict = field(default_factory=dict)
    out: Path = Path("out")
    exchange: bool = True
    steps: Optional[int] = None
    overlap_tol: Optional[float] = None
    null_tol: Optional[float] = NULL_TOL      # <= 0 or None: plain Cholesky
    dump_matrices: bool = False
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.emin < self.emax:
            raise InputError("energy range needs 0 < emin < emax")
        if self.n < 2:
            raise InputError("energy grid needs at least 2 points")
        if self.null_tol is not None and self.null_tol <= 0:
            object.__setattr__(self, "null_tol", None)
        for L in [self.lmax, *self.lmax_species.values()]:
            if not 0 <= L <= LMAX_LIMIT:
                raise InputError(f"lmax must lie in 0..{LMAX_LIMIT}")

    @property
    def energies_ev(self):
        return np.linspace(self.emin, self.emax, self.n)

    @property
    def energies(self):
        return ev_to_hartree(self.energies_ev)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_atomic(path, buf.getvalue())
    log.info("wrote %s (%d rows)", path, len(rows))


def dump_matrix(path, M, title):
    lines = [f"# {title} n={M.shape[0]} row-major re im pairs"]
    for row in M:
        lines.append(" ".join(f"{fmt(v.real)} {fmt(v.imag)}" for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class ScanSummary:
    """The parts of an energy scan that downstream stages consume."""

    energies: np.ndarray
    labels: list
    phases: np.ndarray          # (n_energy, n_modes), raw delta in (0, pi)
    branches: list

    @classmethod
    def from_scan(cls, scan):
        return cls(scan.energies, [str(x) for x in scan.modes[0].labels],
                   np.array([m.phases for m in scan.modes]), scan.branches)

    def save(self, path):
        b = self.branches
        buf = io.BytesIO()
        np.savez(buf, energies=self.energies, labels=np.array(self.labels),
                 phases=self.phases,
                 delta=np.array([x.delta for x in b]),
                 eigenvalues=np.array([x.eigenvalues for x in b]),
                 mode_index=np.array([x.mode_index for x in b]),
                 symmetry=np.array([str(x.symmetry) for x in b]))
        _write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            E = z["energies"]
            branches = [Branch(i, SymmetryLabel(s), E.copy(), d, lam, idx)
                        for i, (s, d, lam, idx) in enumerate(zip(
                            z["symmetry"], z["delta"], z["eigenvalues"], z["mode_index"]))]
            return cls(E, [str(s) for s in z["labels"]], z["phases"], branches)


def _write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class Pipeline:
    def __init__(self, config: RunConfig):
        self.config = config

    @cached_property
    def molecule(self):
        return read_molecule(self.config.molecule, overlap_tol=self.config.overlap_tol)

    @cached_property
    def species(self):
        return load_species_dir(self.config.species_dir, self.molecule.species)

    @cached_property
    def potentials(self):
        pots = {}
        for atom, key in zip(self.molecule.atoms, self.molecule.potential_keys()):
            if key not in pots:
                pots[key] = AtomicPotential.from_species(
                    self.species[atom.species], atom.radius, self.config.exchange, key)
        return pots

    @cached_property
    def channels(self):
        return ChannelIndex.for_molecule(self.molecule, self.config.lmax,
                                         self.config.lmax_species)

    @cached_property
    def lmax_by_key(self):
        out = {}
        for key, L in zip(self.molecule.potential_keys(), self.channels.lmax):
            out[key] = max(out.get(key, 0), L)
        return out

    def _digest(self, stage):
        cfg = self.config
        species_text = {s: (Path(cfg.species_dir) / f"{s}.species").read_text()
                        for s in self.molecule.species}
        payload = {
            "version": __version__, "stage": stage,
            "molecule": serialize_molecule(self.molecule),
            "species": species_text, "lmax": self.channels.lmax,
            "energies": [fmt(e) for e in cfg.energies_ev],
            "exchange": cfg.exchange, "steps": cfg.steps,
        }
        if stage == "scan":
            payload["null_tol"] = cfg.null_tol
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]

    def _cache(self, stage):
        return Path(self.config.out) / ".cache" / f"{stage}-{self._digest(stage)}.npz"

    @cached_property
    def phase_table(self):
        path = self._cache("phases")
        if path.exists():
            with np.load(path) as z:
                keys = json.loads(str(z["keys"]))
                table = PhaseTable(self.config.energies)
                for n, (key, l) in enumerate(keys):
                    table.phases[(key, l)] = z["phases"][n]
            log.info("atomic phases from cache %s", path.name)
            return table
        table = PhaseTable.compute(self.potentials, self.lmax_by_key,
                                   self.config.energies, self.config.steps)
        keys = sorted(table.phases)
        buf = io.BytesIO()
        np.savez(buf, keys=json.dumps(keys),
                 phases=np.array([table.phases[k] for k in keys]))
        _write_bytes(path, buf.getvalue())
        return table

    @cached_property
    def scan(self):
        path = self._cache("scan")
        if path.exists():
            log.info("energy scan from cache %s", path.name)
            return ScanSummary.load(path)
        scan = scan_energies(self.molecule, self.config.energies, self.phase_table,
                             self.channels, self.config.workers, self.config.null_tol)
        summary = ScanSummary.from_scan(scan)
        summary.save(path)
        return summary

    # --- stages -----------------------------------------------------------

    def run_phases(self):
        table = self.phase_table
        rows = []
        for key, l in sorted(table.phases):
            for e, d in zip(self.config.energies_ev, table.phases[(key, l)]):
                rows.append((key, l, fmt(e), fmt(d)))
        path = Path(self.config.out) / "atomic_phases.csv"
        write_csv(path, ("species", "l", "E_eV", "delta_rad"), rows)
        return path

    def run_scatter(self):
        scan = self.scan
        rows = []
        for b in scan.branches:
            for e, d, lam in zip(self.config.energies_ev, b.delta, b.eigenvalues):
                rows.append((b.id, str(b.symmetry), fmt(e), fmt(d), fmt(lam)))
        path = Path(self.config.out) / "molecular_phases.csv"
        write_csv(path, ("branch_id", "symmetry", "E_eV", "delta_rad", "lambda"), rows)
        if self.config.dump_matrices:
            self.dump_matrices()
        return path

    def dump_matrices(self):
        folder = Path(self.config.out) / "matrices"
        table = self.phase_table
        for j, (E, e_ev) in enumerate(zip(self.config.energies, self.config.energies_ev)):
            k = np.sqrt(2 * E)
            S = assemble_S(self.molecule, k, self.channels)
            N = assemble_N(self.molecule, k, self.channels, phases_at(table, j))
            dump_matrix(folder / f"S_{j:04d}.txt", S, f"S E_eV={fmt(e_ev)}")
            dump_matrix(folder / f"N_{j:04d}.txt", N, f"N E_eV={fmt(e_ev)}")

    def run_xsec(self):
        scan = self.scan
        planar = self.molecule.is_planar
        labels = np.array(scan.labels)
        k2 = 2 * scan.energies
        rows = []
        for j, e in enumerate(self.config.energies_ev):
            terms = 4 * np.pi / k2[j] * np.sin(scan.phases[j]) ** 2
            if planar:
                a1 = fmt(np.sum(terms[labels == str(SymmetryLabel.A1)]))
                a2 = fmt(np.sum(terms[labels == str(SymmetryLabel.A2)]))
                # exact decimal sum of the printed partials keeps every row additive
                rows.append((fmt(e), format(Decimal(a1) + Decimal(a2), "g"), a1, a2))
            else:
                rows.append((fmt(e), fmt(np.sum(terms)), "", ""))
        path = Path(self.config.out) / "xsec.csv"
        write_csv(path, ("E_eV", "sigma_total_bohr2", "sigma_Aprime", "sigma_Adoubleprime"),
                  rows)
        return path

    def run_resonances(self):
        records = find_resonances(self.scan.branches)
        rows = [(str(r.symmetry), fmt(r.energy_ev),
                 "" if r.width_ev is None else fmt(r.width_ev), r.branch_id)
                for r in records]
        path = Path(self.config.out) / "resonances.csv"
        write_csv(path, ("symmetry", "E_res_eV", "Gamma_eV_or_blank", "branch_id"), rows)
        return path

    def default_box(self):
        pos = self.molecule.positions
        pad = 3.0 + float(self.molecule.radii.max())
        lo, hi = pos.min(axis=0) - pad, pos.max(axis=0) + pad
        return [(lo[0], hi[0]), (lo[1], hi[1]), (0.0, 0.0)]

    def run_wave(self, branch_id, energy_ev, box=None, shape=(41, 41, 1)):
        scan = self.scan
        if not 0 <= branch_id < len(scan.branches):
            raise InputError(f"unknown branch {branch_id} (0..{len(scan.branches) - 1})")
        grid = self.config.energies_ev
        if not grid[0] - 1e-9 <= energy_ev <= grid[-1] + 1e-9:
            raise InputError(f"energy {energy_ev} eV outside the scan grid")
        j = int(np.argmin(np.abs(grid - energy_ev)))
        branch = scan.branches[branch_id]
        modes = modes_at(self.molecule, self.config.energies[j],
                         phases_at(self.phase_table, j), self.channels, self.config.null_tol)
        n = int(branch.mode_index[j])
        if not (modes.radiating[n] or modes.is_free(n)):
            raise InputError(f"branch {branch_id} does not radiate at {fmt(grid[j])} eV")
        log.info("wave of branch %d at grid energy %s eV", branch_id, fmt(grid[j]))
        box = box or self.default_box()
        axes = [np.linspace(a, b, s) for (a, b), s in zip(box, shape)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        psi = reconstruct_wave(self.molecule, modes, n, pts, self.potentials,
                               steps=self.config.steps)
        rows = [(fmt(p[0]), fmt(p[1]), fmt(p[2]), fmt(v.real), fmt(v.imag))
                for p, v in zip(pts, psi)]
        path = Path(self.config.out) / f"wave_{branch_id}.csv"
        write_csv(path, ("x_bohr", "y_bohr", "z_bohr", "re_psi", "im_psi"), rows)
        return path


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); exit 2 is reserved for numerics
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _species_lmax(text):
    try:
        label, value = text.split("=")
        return label, int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SPECIES=L, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--molecule", type=Path, default=default_molecule(),
                        help="molecule file (default: bundled uracil)")
    common.add_argument("--species-dir", type=Path, default=default_species_dir(),
                        help="directory of <species>.species files")
    common.add_argument("--emin", type=float, default=0.1, help="lowest energy, eV")
    common.add_argument("--emax", type=float, default=10.0, help="highest energy, eV")
    common.add_argument("--n", type=int, default=100, help="number of energies")
    common.add_argument("--lmax", type=int, default=1, help="angular cutoff per atom")
    common.add_argument("--lmax-species", type=_species_lmax, action="append", default=[],
                        metavar="SPECIES=L", help="per-species cutoff override")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--overlap-tol", type=float, default=None,
                        help="tolerated sphere overlap in bohr (default: file header)")
    common.add_argument("--steps", type=int, default=None, help="radial grid steps")
    common.add_argument("--no-exchange", action="store_true",
                        help="static potential only")
    common.add_argument("--null-tol", type=float, default=NULL_TOL,
                        help="relative S eigenvalue below which a direction is deflated "
                             "(0: plain Cholesky, fails on a singular S)")
    common.add_argument("--workers", type=int, default=1, help="threads for the scan")
    common.add_argument("--dump-matrices", action="store_true",
                        help="also write S and N per energy (scatter stage)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mscatter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("phases", parents=[common], help="atomic phase shifts")
    sub.add_parser("scatter", parents=[common], help="molecular partial phases")
    sub.add_parser("xsec", parents=[common], help="integral cross sections")
    sub.add_parser("resonances", parents=[common], help="resonance positions and widths")
    wave = sub.add_parser("wave", parents=[common], help="partial wave on a grid")
    wave.add_argument("--branch", type=int, required=True)
    wave.add_argument("--energy", type=float, required=True, help="eV (nearest grid point)")
    for axis in "xyz":
        wave.add_argument(f"--{axis}lim", type=float, nargs=2, metavar=("LO", "HI"))
    wave.add_argument("--shape", type=int, nargs=3, default=(41, 41, 1),
                      metavar=("NX", "NY", "NZ"))
    return parser


def config_from_args(args):
    return RunConfig(molecule=args.molecule, species_dir=args.species_dir,
                     emin=args.emin, emax=args.emax, n=args.n, lmax=args.lmax,
                     lmax_species=dict(args.lmax_species), out=args.out,
                     exchange=not args.no_exchange, steps=args.steps,
                     overlap_tol=args.overlap_tol, null_tol=args.null_tol,
                     dump_matrices=args.dump_matrices, workers=args.workers)


def run(args):
    pipe = Pipeline(config_from_args(args))
    if args.command == "phases":
        return pipe.run_phases()
    if args.command == "scatter":
        return pipe.run_scatter()
    if args.command == "xsec":
        return pipe.run_xsec()
    if args.command == "resonances":
        return pipe.run_resonances()
    box = None
    if args.xlim or args.ylim or args.zlim:
        default = pipe.default_box()
        box = [tuple(lim) if lim else d
               for lim, d in zip((args.xlim, args.ylim, args.zlim), default)]
    return pipe.run_wave(args.branch, args.energy, box, tuple(args.shape))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = run(args)
    except InputError as exc:
        print(f"mscatter: input error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mscatter: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"mscatter: numerical failure: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
