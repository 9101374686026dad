import sys
from importlib import resources

import numpy as np
import pytest

from fragsolv.core import Atom, Fragment, FragmentationScheme, MolecularSystem, parse_fragments, parse_xyz

DATA = resources.files("fragsolv") / "data"


def load_bundled(name):
    system = parse_xyz((DATA / f"{name}.xyz").read_text())
    scheme = parse_fragments((DATA / f"{name}.frag").read_text(), system)
    return system, scheme


def make_system(positions, chi, eta, element="X"):
    atoms = tuple(Atom(element, tuple(p), c, e) for p, c, e in zip(positions, chi, eta))
    return MolecularSystem(atoms, "test")


def make_scheme(groups, charges, n_atoms, r_cut=8.0):
    frags = tuple(Fragment(k, tuple(g), q) for k, (g, q) in enumerate(zip(groups, charges)))
    return FragmentationScheme(frags, n_atoms, r_cut)


@pytest.fixture
def toy():
    return load_bundled("toy")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "SUMMARY", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
