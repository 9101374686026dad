"""Fragment-decomposed electrostatics coupled to a grid solvent model."""

from fragsolv.core import (
    Atom,
    CoulombParams,
    Fragment,
    FragmentationScheme,
    MolecularSystem,
    auto_fragment,
    coulomb_kernel,
    parse_fragments,
    parse_xyz,
)
from fragsolv.errors import FragsolvError

__version__ = "0.1.0"
