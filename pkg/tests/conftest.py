import numpy as np
import pytest

from mscatter.constants import ev_to_hartree
from mscatter.model import read_molecule
from mscatter.radial import PhaseTable, load_species_dir

from helpers import SPECIES, URACIL, uracil_potentials


@pytest.fixture(scope="session")
def uracil():
    return read_molecule(URACIL)


@pytest.fixture(scope="session")
def uracil_species(uracil):
    return load_species_dir(SPECIES, uracil.species)


@pytest.fixture(scope="session")
def uracil_pots(uracil, uracil_species):
    return uracil_potentials(uracil, uracil_species)


@pytest.fixture(scope="session")
def uracil_grid20():
    return ev_to_hartree(np.linspace(0.1, 10.0, 20))


@pytest.fixture(scope="session")
def uracil_table20(uracil_pots, uracil_grid20):
    return PhaseTable.compute(uracil_pots, 1, uracil_grid20)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
