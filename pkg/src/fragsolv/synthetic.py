"""Seeded random molecular systems for tests, acceptance runs and scripts.

Documented sampling ranges (model units):

* fragment centres uniform in a ball of radius ``spread * max(1, N**(1/3))``
  (``spread`` defaults to 2.5), more than 2.0 apart;
* atoms uniform in a ball of radius ``1.2 + 0.15 * size`` around their centre;
* any two atoms at least ``min_sep`` (default 1.0) apart, by rejection;
* chi uniform in [1.5, 3.5], eta uniform in [2.0, 3.0];
* formal charges drawn from {-1, 0, 0, +1}.
"""

from __future__ import annotations

import numpy as np

from fragsolv.core import Atom, Fragment, FragmentationScheme, MolecularSystem

CHI_RANGE = (1.5, 3.5)
ETA_RANGE = (2.0, 3.0)


def _ball(rng, radius):
    while True:
        p = rng.uniform(-radius, radius, size=3)
        if p @ p <= radius * radius:
            return p


def random_fragment_system(rng, n_fragments, atoms_per_fragment=(2, 6), spread=2.5,
                           min_sep=1.0, charged=True, r_cut=8.0):
    """Return ``(system, scheme)`` with fragments as compact atom clusters."""
    lo, hi = atoms_per_fragment
    sizes = rng.integers(lo, hi + 1, size=n_fragments)
    centres = []
    for _ in range(n_fragments):
        for _attempt in range(1000):
            c = _ball(rng, spread * max(1.0, n_fragments ** (1 / 3)))
            if all(np.linalg.norm(c - o) > 2.0 for o in centres):
                break
        centres.append(c)

    positions = []
    owners = []
    for k, (c, size) in enumerate(zip(centres, sizes)):
        for _ in range(size):
            for _attempt in range(10000):
                p = c + _ball(rng, 1.2 + 0.15 * size)
                if all(np.linalg.norm(p - o) >= min_sep for o in positions):
                    break
            else:
                raise RuntimeError("could not place atom; loosen min_sep")
            positions.append(p)
            owners.append(k)

    atoms = tuple(
        Atom("X", tuple(p), rng.uniform(*CHI_RANGE), rng.uniform(*ETA_RANGE)) for p in positions
    )
    owners = np.array(owners)
    charges = rng.choice([-1.0, 0.0, 0.0, 1.0], size=n_fragments) if charged else np.zeros(n_fragments)
    fragments = tuple(
        Fragment(k, tuple(np.flatnonzero(owners == k)), float(charges[k])) for k in range(n_fragments)
    )
    system = MolecularSystem(atoms, f"random {n_fragments}-fragment system")
    return system, FragmentationScheme(fragments, len(atoms), r_cut)
