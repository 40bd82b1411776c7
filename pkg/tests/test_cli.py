import csv
from decimal import Decimal
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy import special

from mscatter.cli import Pipeline, RunConfig, main
from mscatter.constants import ev_to_hartree
from mscatter.msm import Branch
from mscatter.model import SymmetryLabel

from oracles import breit_wigner, fold_half_open, square_well_phase, two_site_s_eigen


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_species(folder, label, q_of_r, rho_of_r=lambda r: 0 * r, rmax=4.0, ion_ev=10.0):
    r = np.linspace(1e-4, rmax, 400)
    lines = [f"species {label} I_eV {ion_ev}"]
    lines += [f"{a!r} {b!r} {c!r}" for a, b, c in zip(r.tolist(), q_of_r(r).tolist(),
                                                    rho_of_r(r).tolist())]
    (folder / f"{label}.species").write_text("\n".join(lines) + "\n")


@pytest.fixture()
def fixtures(tmp_path):
    species = tmp_path / "species"
    species.mkdir()
    write_species(species, "Z", lambda r: 0 * r)
    write_species(species, "W", lambda r: 1.2 * r)          # V = -1.2 inside the sphere
    (tmp_path / "free.mol").write_text("# free atom\nZ1 1.0 0 0 0\n")
    (tmp_path / "well.mol").write_text("W1 1.5 0 0 0\n")
    (tmp_path / "pair.mol").write_text("W1 1.0 -1.5 0 0\nW2 1.0 1.5 0 0\n")
    return tmp_path


def run_cli(*args):
    return main([str(a) for a in args])


def common(fx, mol, out, *extra):
    return ["--molecule", fx / mol, "--species-dir", fx / "species", "--out", out, *extra]


# --- phases -----------------------------------------------------------------

def test_null_species_gives_zero_phases(fixtures, tmp_path):
    out = tmp_path / "o"
    assert run_cli("phases", *common(fixtures, "free.mol", out, "--n", 7)) == 0
    header, rows = read_rows(out / "atomic_phases.csv")
    assert header == ["species", "l", "E_eV", "delta_rad"]
    assert len(rows) == 14
    assert all(float(r[3]) == 0.0 for r in rows)


def test_square_well_species_matches_analytic(fixtures, tmp_path):
    out = tmp_path / "o"
    assert run_cli("phases", *common(fixtures, "well.mol", out, "--no-exchange",
                                     "--emin", 0.2, "--emax", 8, "--n", 9)) == 0
    _, rows = read_rows(out / "atomic_phases.csv")
    for key, l, e, d in rows:
        k = math.sqrt(2 * ev_to_hartree(float(e)))
        ref = square_well_phase(int(l), k, 1.2, 1.5)
        assert abs(fold_half_open(float(d) - ref)) < 1e-6


def test_uracil_phase_table_row_count(tmp_path):
    out = tmp_path / "o"
    assert run_cli("phases", "--out", out) == 0
    _, rows = read_rows(out / "atomic_phases.csv")
    assert len(rows) == 2 * 4 * 100
    assert sorted({r[0] for r in rows}) == ["C", "H", "N", "O"]
    energies = [float(r[2]) for r in rows if r[0] == "C" and r[1] == "0"]
    assert energies == sorted(energies) and energies[0] == 0.1 and energies[-1] == 10.0


# --- scatter / xsec -------------------------------------------------------------

def test_single_atom_molecular_file_duplicates_atomic(fixtures, tmp_path):
    out = tmp_path / "o"
    args = common(fixtures, "well.mol", out, "--n", 25)
    assert run_cli("phases", *args) == 0 and run_cli("scatter", *args) == 0
    _, atomic = read_rows(out / "atomic_phases.csv")
    header, mol = read_rows(out / "molecular_phases.csv")
    assert header == ["branch_id", "symmetry", "E_eV", "delta_rad", "lambda"]
    curves = {}
    for _, l, e, d in atomic:
        curves.setdefault(int(l), []).append(float(d))
    by_branch = {}
    for b, _, e, d, _ in mol:
        by_branch.setdefault(int(b), []).append(float(d))
    assert len(by_branch) == 4
    matched = []
    for d in by_branch.values():
        l = min(curves, key=lambda l: np.max(np.abs(fold_half_open(np.subtract(d, curves[l])))))
        np.testing.assert_allclose(fold_half_open(np.subtract(d, curves[l])), 0, atol=1e-11)
        matched.append(l)
    assert sorted(matched) == [0, 1, 1, 1]


def test_two_site_cli_matches_closed_form(fixtures, tmp_path):
    out = tmp_path / "o"
    args = common(fixtures, "pair.mol", out, "--lmax", 0, "--no-exchange", "--n", 15)
    assert run_cli("scatter", *args) == 0
    assert run_cli("xsec", *args) == 0
    assert not (out / "atomic_phases.csv").exists()     # scatter needs no phases CSV
    _, mol = read_rows(out / "molecular_phases.csv")
    E = ev_to_hartree(np.linspace(0.1, 10, 15))
    k = np.sqrt(2 * E)
    cot0 = 1 / np.tan([square_well_phase(0, kk, 1.2, 1.0) for kk in k])
    pairs = np.array([two_site_s_eigen(c, kk * 3.0) for c, kk in zip(cot0, k)])
    lam = {}
    for b, _, e, d, l in mol:
        lam.setdefault(int(b), []).append(float(l))
    got = np.sort(np.array(list(lam.values())).T, axis=1)
    np.testing.assert_allclose(got, np.sort(pairs, axis=1), rtol=1e-6)
    _, xs = read_rows(out / "xsec.csv")
    sig = 4 * np.pi / k**2 * np.sum(1 / (1 + pairs**2), axis=1)
    np.testing.assert_allclose([float(r[1]) for r in xs], sig, rtol=1e-6)


def test_two_site_xsec_against_pipeline_phases(fixtures, tmp_path):
    # same check without the radial solver: the closed form fed with the CLI's own atomic phases
    out = tmp_path / "o"
    args = common(fixtures, "pair.mol", out, "--lmax", 0, "--no-exchange", "--n", 15)
    assert run_cli("phases", *args) == 0 and run_cli("xsec", *args) == 0
    _, atomic = read_rows(out / "atomic_phases.csv")
    d0 = np.array([float(r[3]) for r in atomic])
    E = ev_to_hartree(np.array([float(r[2]) for r in atomic]))
    k = np.sqrt(2 * E)
    pairs = np.array([two_site_s_eigen(c, kk * 3.0) for c, kk in zip(1 / np.tan(d0), k)])
    sig = 4 * np.pi / k**2 * np.sum(1 / (1 + pairs**2), axis=1)
    _, xs = read_rows(out / "xsec.csv")
    np.testing.assert_allclose([float(r[1]) for r in xs], sig, rtol=1e-9)


def test_uracil_scatter_and_xsec(tmp_path):
    out = tmp_path / "o"
    assert run_cli("scatter", "--out", out, "--n", 30) == 0
    assert run_cli("xsec", "--out", out, "--n", 30) == 0
    _, mol = read_rows(out / "molecular_phases.csv")
    labels = {}
    for b, s, *_ in mol:
        labels.setdefault(int(b), set()).add(s)
    assert len(labels) == 48
    assert all(len(v) == 1 for v in labels.values())
    flat = [next(iter(v)) for v in labels.values()]
    assert flat.count("A'") == 36 and flat.count("A''") == 12
    header, xs = read_rows(out / "xsec.csv")
    assert header == ["E_eV", "sigma_total_bohr2", "sigma_Aprime", "sigma_Adoubleprime"]
    for row in xs:
        total, a1, a2 = map(Decimal, row[1:])
        assert total > 0
        assert total == a1 + a2
    assert (out / ".cache").is_dir()


def test_null_species_has_zero_cross_section(fixtures, tmp_path):
    out = tmp_path / "o"
    assert run_cli("xsec", *common(fixtures, "free.mol", out, "--n", 5)) == 0
    _, xs = read_rows(out / "xsec.csv")
    assert all(float(v) == 0.0 for row in xs for v in row[1:])


def test_nonplanar_partials_are_blank(fixtures, tmp_path):
    (fixtures / "bent.mol").write_text("W1 1.0 0 0 0\nW2 1.0 2.5 0 0\nW3 1.0 0 2.5 0.7\n")
    out = tmp_path / "o"
    assert run_cli("xsec", *common(fixtures, "bent.mol", out, "--n", 4)) == 0
    _, xs = read_rows(out / "xsec.csv")
    assert all(row[2] == "" and row[3] == "" and float(row[1]) > 0 for row in xs)


# --- resonances ---------------------------------------------------------------

def test_resonance_stage_recovers_injected_branch(fixtures, tmp_path):
    out = tmp_path / "o"
    cfg = RunConfig(molecule=fixtures / "well.mol", species_dir=fixtures / "species",
                    out=out, n=496, emin=0.1, emax=10.0)
    pipe = Pipeline(cfg)
    E = cfg.energies
    monotone = Branch(1, SymmetryLabel.A1, E, 0.1 + 0.01 * cfg.energies_ev, E * 0, E * 0)
    bw = Branch(0, SymmetryLabel.A2, E, breit_wigner(cfg.energies_ev, 3.3, 0.8), E * 0, E * 0)

    class Fake:
        branches = [bw, monotone]

    pipe.__dict__["scan"] = Fake()
    header, rows = read_rows(pipe.run_resonances())
    assert header == ["symmetry", "E_res_eV", "Gamma_eV_or_blank", "branch_id"]
    assert len(rows) == 1
    sym, e, g, b = rows[0]
    assert sym == "A''" and b == "0"
    assert abs(float(e) - 3.3) < 1e-3 and abs(float(g) - 0.8) < 1e-3


def test_monotone_phases_give_header_only(fixtures, tmp_path):
    out = tmp_path / "o"
    assert run_cli("resonances", *common(fixtures, "free.mol", out, "--n", 10)) == 0
    header, rows = read_rows(out / "resonances.csv")
    assert rows == [] and header[0] == "symmetry"


def test_uracil_resonances_carry_symmetry_labels(tmp_path):
    out = tmp_path / "o"
    assert run_cli("resonances", "--out", out) == 0
    _, rows = read_rows(out / "resonances.csv")
    assert rows
    for sym, e, g, b in rows:
        assert sym in ("A'", "A''")
        assert 0.1 <= float(e) <= 10.0
        assert g == "" or float(g) > 0


# --- wave -----------------------------------------------------------------------

def test_free_atom_wave(fixtures, tmp_path):
    out = tmp_path / "o"
    args = common(fixtures, "free.mol", out, "--lmax", 0, "--n", 5)
    assert run_cli("wave", *args, "--branch", 0, "--energy", 5.05,
                   "--xlim", 0.1, 4, "--ylim", 0, 0, "--shape", 12, 1, 1) == 0
    header, rows = read_rows(out / "wave_0.csv")
    assert header == ["x_bohr", "y_bohr", "z_bohr", "re_psi", "im_psi"]
    k = math.sqrt(2 * ev_to_hartree(5.05))
    x = np.array([float(r[0]) for r in rows])
    psi = np.array([complex(float(r[3]), float(r[4])) for r in rows])
    np.testing.assert_allclose(psi, special.spherical_jn(0, k * x) / math.sqrt(4 * math.pi),
                               atol=1e-8)


def test_two_site_wave_is_swap_symmetric(fixtures, tmp_path):
    out = tmp_path / "o"
    args = common(fixtures, "pair.mol", out, "--lmax", 0, "--n", 5)
    assert run_cli("scatter", *args) == 0
    _, mol = read_rows(out / "molecular_phases.csv")
    assert run_cli("wave", *args, "--branch", 0, "--energy", 2.575,
                   "--xlim", -4, 4, "--ylim", -3, 3, "--shape", 9, 7, 1) == 0
    _, rows = read_rows(out / "wave_0.csv")
    psi = np.array([complex(float(r[3]), float(r[4])) for r in rows]).reshape(9, 7)
    # branch 0 at this energy is one of the two s-modes: even or odd under x -> -x
    even = np.max(np.abs(psi - psi[::-1]))
    odd = np.max(np.abs(psi + psi[::-1]))
    assert min(even, odd) < 1e-8 * np.max(np.abs(psi))


def test_wave_rejects_unknown_branch(fixtures, tmp_path, capsys):
    out = tmp_path / "o"
    args = common(fixtures, "well.mol", out, "--n", 5)
    assert run_cli("wave", *args, "--branch", 99, "--energy", 1.0) == 1
    assert "unknown branch" in capsys.readouterr().err


def test_uracil_wave_default_plane(tmp_path):
    out = tmp_path / "o"
    assert run_cli("wave", "--out", out, "--n", 10, "--branch", 3, "--energy", 10,
                   "--shape", 6, 5, 1) == 0
    _, rows = read_rows(out / "wave_3.csv")
    assert len(rows) == 30
    assert all(float(r[2]) == 0.0 for r in rows)


# --- determinism, caching, errors -----------------------------------------------

def test_outputs_are_byte_identical_and_idempotent(fixtures, tmp_path):
    files = ("atomic_phases.csv", "molecular_phases.csv", "xsec.csv", "resonances.csv")
    snapshots = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = common(fixtures, "pair.mol", out, "--n", 20)
        for stage in ("phases", "scatter", "xsec", "resonances"):
            assert run_cli(stage, *args) == 0
        snapshots.append({f: (out / f).read_bytes() for f in files})
        # a second pass reads the cache and must not change anything
        for stage in ("xsec", "scatter"):
            assert run_cli(stage, *args) == 0
        assert {f: (out / f).read_bytes() for f in files} == snapshots[-1]
    assert snapshots[0] == snapshots[1]


def test_cache_follows_inputs(fixtures, tmp_path):
    out = tmp_path / "o"
    args = common(fixtures, "well.mol", out, "--n", 5)
    assert run_cli("scatter", *args) == 0
    assert run_cli("scatter", *args, "--lmax", 0) == 0
    assert len(list((out / ".cache").glob("scan-*.npz"))) == 2


def test_exit_codes(fixtures, tmp_path, capsys):
    out = tmp_path / "o"
    assert run_cli("phases", "--out", out, "--emin", -1) == 1
    assert run_cli("phases", "--out", out, "--emin", 5, "--emax", 2) == 1
    assert run_cli("phases", "--out", out, "--lmax", 7) == 1
    assert run_cli("phases", *common(fixtures, "missing.mol", out)) == 1
    (fixtures / "overlap.mol").write_text("W1 1.0 0 0 0\nW2 1.0 1.0 0 0\n")
    assert run_cli("phases", *common(fixtures, "overlap.mol", out)) == 1
    (fixtures / "odd.mol").write_text("S1 1.0 0 0 0\n")
    assert run_cli("phases", *common(fixtures, "odd.mol", out)) == 1
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 1
    # plain Cholesky on the near-singular low-energy uracil overlap
    assert run_cli("scatter", "--out", out, "--n", 5, "--null-tol", 0) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_matrix_dump_format(fixtures, tmp_path):
    out = tmp_path / "o"
    args = common(fixtures, "pair.mol", out, "--n", 3, "--dump-matrices")
    assert run_cli("scatter", *args) == 0
    files = sorted((out / "matrices").iterdir())
    assert [f.name for f in files] == [f"{m}_{j:04d}.txt" for m in "NS" for j in range(3)]
    lines = (out / "matrices" / "S_0000.txt").read_text().splitlines()
    assert lines[0].startswith("# S E_eV=0.1 n=8")
    values = np.array([[float(v) for v in line.split()] for line in lines[1:]])
    assert values.shape == (8, 16)
    S = values[:, 0::2] + 1j * values[:, 1::2]
    np.testing.assert_allclose(S, S.conj().T, atol=1e-11)
    np.testing.assert_allclose(np.diag(S), 1.0)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mscatter", "--version"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "0.1.0"
