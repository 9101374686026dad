"""Molecular data model, input parsers, fragmentation and the Coulomb kernel.

Indices are 0-based everywhere inside the library; fragment files use
1-based atom indices and are converted on read/write.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import erf

from fragsolv.errors import (
    AtomIndexError,
    FormatError,
    ParameterError,
    PartitionError,
    UnknownElementError,
)

DEFAULT_CUTOFF = 8.0
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class CoulombParams:
    gamma: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ParameterError(f"gamma must be finite and > 0, got {self.gamma}")


@dataclass(frozen=True)
class Atom:
    element: str
    position: tuple
    chi: float
    eta: float

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        if len(pos) != 3 or not all(math.isfinite(x) for x in pos):
            raise ParameterError(f"bad position for {self.element}: {self.position}")
        if not self.eta > 0:
            raise ParameterError(f"hardness must be > 0 ({self.element}: {self.eta})")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class MolecularSystem:
    atoms: tuple
    name: str = ""

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise ParameterError("a molecular system needs at least one atom")
        object.__setattr__(self, "atoms", atoms)
        if len(atoms) > 1 and pdist(self.positions).min() <= 1e-8:
            raise ParameterError("two atoms share the same position")

    def __len__(self):
        return len(self.atoms)

    @cached_property
    def positions(self) -> np.ndarray:
        pos = np.array([a.position for a in self.atoms], dtype=float)
        pos.flags.writeable = False
        return pos

    @cached_property
    def chi(self) -> np.ndarray:
        out = np.array([a.chi for a in self.atoms], dtype=float)
        out.flags.writeable = False
        return out

    @cached_property
    def eta(self) -> np.ndarray:
        out = np.array([a.eta for a in self.atoms], dtype=float)
        out.flags.writeable = False
        return out

    def with_chi_shift(self, shift: float) -> "MolecularSystem":
        atoms = [Atom(a.element, a.position, a.chi + shift, a.eta) for a in self.atoms]
        return MolecularSystem(tuple(atoms), self.name)


@dataclass(frozen=True)
class Fragment:
    id: int
    atom_indices: tuple
    formal_charge: float = 0.0
    name: str = ""

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.atom_indices))
        if not idx:
            raise ParameterError(f"fragment {self.id} is empty")
        object.__setattr__(self, "atom_indices", idx)
        if not self.name:
            object.__setattr__(self, "name", f"F{self.id}")

    def __len__(self):
        return len(self.atom_indices)


@dataclass(frozen=True)
class FragmentationScheme:
    fragments: tuple
    n_atoms: int
    r_cut: float = DEFAULT_CUTOFF

    def __post_init__(self):
        frags = tuple(self.fragments)
        object.__setattr__(self, "fragments", frags)
        if not self.r_cut > 0:
            raise ParameterError(f"cutoff must be > 0, got {self.r_cut}")
        ids = [f.id for f in frags]
        if len(set(ids)) != len(ids):
            raise ParameterError("fragment ids must be unique")
        check_partition([f.atom_indices for f in frags], self.n_atoms)

    def __len__(self):
        return len(self.fragments)

    def __iter__(self):
        return iter(self.fragments)

    def by_id(self, fragment_id: int) -> Fragment:
        for f in self.fragments:
            if f.id == fragment_id:
                return f
        raise KeyError(fragment_id)

    @property
    def total_charge(self) -> float:
        return float(sum(f.formal_charge for f in self.fragments))

    @cached_property
    def owner(self) -> np.ndarray:
        """Fragment id for every atom."""
        out = np.empty(self.n_atoms, dtype=int)
        for f in self.fragments:
            out[list(f.atom_indices)] = f.id
        return out

    def reordered(self, order) -> "FragmentationScheme":
        return FragmentationScheme(tuple(self.fragments[i] for i in order), self.n_atoms, self.r_cut)


def check_partition(index_sets, n_atoms: int) -> None:
    seen = set()
    duplicate = set()
    for idx in index_sets:
        for i in idx:
            if not 0 <= i < n_atoms:
                raise AtomIndexError(f"atom index {i + 1} outside 1..{n_atoms}")
            if i in seen:
                duplicate.add(i)
            seen.add(i)
    if duplicate:
        raise PartitionError("duplicate", [i + 1 for i in duplicate])
    uncovered = set(range(n_atoms)) - seen
    if uncovered:
        raise PartitionError("uncovered", [i + 1 for i in uncovered])


def coulomb_kernel(r, params: CoulombParams):
    """Softened Coulomb kernel erf(r/gamma)/r, finite at r = 0.

    Accepts scalars or arrays; returns the same shape.
    """
    gamma = params.gamma
    if not (np.isfinite(gamma) and gamma > 0):
        raise ParameterError(f"gamma must be finite and > 0, got {gamma}")
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ParameterError("non-finite distance passed to coulomb_kernel")
    if np.any(r < 0):
        raise ParameterError("negative distance passed to coulomb_kernel")
    x = r / gamma
    small = x < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        far = erf(x) / r
    # series of erf(x)/x keeps the small-r branch monotone and exact at 0
    x2 = x * x
    near = (_TWO_OVER_SQRT_PI / gamma) * (1.0 - x2 / 3.0 + x2 * x2 / 10.0)
    out = np.where(small, near, far)
    return float(out) if out.ndim == 0 else out


def coulomb_matrix(a: np.ndarray, b: np.ndarray, params: CoulombParams) -> np.ndarray:
    """Kernel between every row of ``a`` and every row of ``b``."""
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return coulomb_kernel(d, params)


# ---------------------------------------------------------------- parsers

def parse_element_params(text: str) -> dict:
    table = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError("expected 'Element chi eta'", lineno)
        try:
            chi, eta = float(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"unparsable number in {raw.strip()!r}", lineno) from None
        if not eta > 0:
            raise FormatError(f"hardness must be > 0 for {parts[0]}", lineno)
        table[parts[0]] = (chi, eta)
    return table


def default_element_params() -> dict:
    text = resources.files("fragsolv").joinpath("data/elements.params").read_text()
    return parse_element_params(text)


def _lookup(table, element, lineno):
    if element in table:
        return table[element]
    if "*" in table:
        return table["*"]
    raise UnknownElementError(f"unknown element {element!r} and no wildcard row", lineno)


def parse_xyz(text: str, params: dict | None = None) -> MolecularSystem:
    table = default_element_params() if params is None else params
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError("missing atom count", 1)
    try:
        count = int(lines[0].split()[0])
    except ValueError:
        raise FormatError(f"atom count {lines[0].strip()!r} is not an integer", 1) from None
    name = lines[1].strip() if len(lines) > 1 else ""
    body = [(i + 3, ln) for i, ln in enumerate(lines[2:]) if ln.strip()]
    if len(body) != count:
        raise FormatError(f"header declares {count} atoms but body has {len(body)}")
    atoms = []
    for lineno, ln in body:
        parts = ln.split()
        if len(parts) < 4:
            raise FormatError(f"expected 'Element x y z', got {ln.strip()!r}", lineno)
        try:
            xyz = tuple(float(p) for p in parts[1:4])
        except ValueError:
            raise FormatError(f"unparsable coordinate in {ln.strip()!r}", lineno) from None
        if not all(math.isfinite(v) for v in xyz):
            raise FormatError("non-finite coordinate", lineno)
        chi, eta = _lookup(table, parts[0], lineno)
        atoms.append(Atom(parts[0], xyz, chi, eta))
    return MolecularSystem(tuple(atoms), name)


def format_xyz(system: MolecularSystem) -> str:
    out = [str(len(system)), system.name]
    for a in system.atoms:
        out.append("%-3s %.10f %.10f %.10f" % (a.element, *a.position))
    return "\n".join(out) + "\n"


def parse_fragments(text: str, system: MolecularSystem) -> FragmentationScheme:
    r_cut = DEFAULT_CUTOFF
    fragments = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0].lower() == "cutoff":
            if len(parts) != 2:
                raise FormatError("expected 'cutoff <value>'", lineno)
            try:
                r_cut = float(parts[1])
            except ValueError:
                raise FormatError(f"bad cutoff {parts[1]!r}", lineno) from None
            continue
        if len(parts) < 3:
            raise FormatError("expected 'name charge i1 ... iN'", lineno)
        try:
            charge = float(parts[1])
            idx = [int(p) - 1 for p in parts[2:]]
        except ValueError:
            raise FormatError(f"unparsable fragment line {raw.strip()!r}", lineno) from None
        for i in idx:
            if not 0 <= i < len(system):
                raise AtomIndexError(f"atom index {i + 1} outside 1..{len(system)}", lineno)
        if len(set(idx)) != len(idx):
            dup = {i + 1 for i in idx if idx.count(i) > 1}
            raise PartitionError("duplicate", dup)
        fragments.append(Fragment(len(fragments), tuple(idx), charge, parts[0]))
    if not fragments:
        raise FormatError("no fragments defined")
    return FragmentationScheme(tuple(fragments), len(system), r_cut)


def format_fragments(scheme: FragmentationScheme) -> str:
    out = [f"cutoff {scheme.r_cut!r}"]
    for f in scheme.fragments:
        idx = " ".join(str(i + 1) for i in f.atom_indices)
        out.append(f"{f.name} {f.formal_charge!r} {idx}")
    return "\n".join(out) + "\n"


def auto_fragment(system: MolecularSystem, max_atoms: int, r_cut: float = DEFAULT_CUTOFF) -> FragmentationScheme:
    if max_atoms < 1:
        raise ParameterError(f"max_atoms must be >= 1, got {max_atoms}")
    n = len(system)
    frags = tuple(
        Fragment(k, tuple(range(start, min(start + max_atoms, n))), 0.0)
        for k, start in enumerate(range(0, n, max_atoms))
    )
    scheme = FragmentationScheme(frags, n, r_cut)
    assert sorted(i for f in scheme for i in f.atom_indices) == list(range(n))
    return scheme


# ---------------------------------------------------------------- synthetic inputs

def synthetic_chain(n_atoms: int, seed: int = 0, name: str | None = None, params: dict | None = None) -> MolecularSystem:
    """Zig-zag heavy-atom backbone with jittered geometry and a repeating C/N/O/H pattern.

    Bond length ~1.5, so 10-atom blocks are compact fragments along the chain.
    """
    table = default_element_params() if params is None else params
    rng = np.random.default_rng(seed)
    pattern = ["N", "C", "C", "O", "H", "C", "H", "H", "C", "H"]
    atoms = []
    for i in range(n_atoms):
        x = 1.25 * i
        y = 0.75 * (i % 2) + 1.6 * math.sin(0.35 * i)
        z = 1.6 * math.cos(0.35 * i)
        pos = np.array([x, y, z]) + rng.uniform(-0.1, 0.1, size=3)
        el = pattern[i % len(pattern)]
        chi, eta = _lookup(table, el, None)
        atoms.append(Atom(el, tuple(pos), chi, eta))
    return MolecularSystem(tuple(atoms), name or f"synthetic chain ({n_atoms} atoms)")
