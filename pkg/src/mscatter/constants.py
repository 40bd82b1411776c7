from scipy import constants as _c

#: eV per hartree (CODATA)
HARTREE_EV = _c.physical_constants["Hartree energy in eV"][0]


def ev_to_hartree(e):
    return e / HARTREE_EV


def hartree_to_ev(e):
    return e * HARTREE_EV
