"""Versioned catalog of physical data and the transforms between representations.

Every record carries its quantity kind and unit tags; transforms check the
kind before touching the payload so that a potential can never be read as
a charge, a grid never as a site list, and so on.
"""

from __future__ import annotations

import enum
import re
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from fragsolv.core import CoulombParams
from fragsolv.errors import FormatError, NotFoundError, ParameterError, SemanticError, SpillError, VersionError
from fragsolv.rism import Grid3D, ScalarField, format_field, grid_potential_at_sites, parse_field

BOHR_PER_ANGSTROM = 1.8897261255

LENGTH_UNITS = {"angstrom": 1.0, "bohr": BOHR_PER_ANGSTROM}


class Kind(str, enum.Enum):
    POINT_CHARGES = "PointCharges"
    CHARGE_DENSITY_GRID = "ChargeDensityGrid"
    POTENTIAL_AT_SITES = "PotentialAtSites"
    POTENTIAL_GRID = "PotentialGrid"

    @property
    def on_sites(self):
        return self in (Kind.POINT_CHARGES, Kind.POTENTIAL_AT_SITES)

    @property
    def length_power(self):
        """Exponent of length in the value's dimension (charge and energy units never change)."""
        return -3 if self is Kind.CHARGE_DENSITY_GRID else 0


@dataclass(frozen=True)
class Quantity:
    kind: Kind
    length_unit: str = "angstrom"
    charge_unit: str = "e"
    energy_unit: str = "model"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.length_unit not in LENGTH_UNITS:
            raise ParameterError(f"unknown length unit {self.length_unit!r}")
        if self.charge_unit != "e":
            raise ParameterError(f"unknown charge unit {self.charge_unit!r}")
        if self.energy_unit != "model":
            raise ParameterError(f"unknown energy unit {self.energy_unit!r}")

    def with_units(self, length_unit):
        return replace(self, length_unit=length_unit)


@dataclass(frozen=True, eq=False)
class SiteList:
    positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        val = np.array(self.values, dtype=float).reshape(-1)
        if len(pos) != len(val):
            raise ParameterError(f"{len(pos)} positions but {len(val)} values")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(val))):
            raise ParameterError("site list contains non-finite numbers")
        pos.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class DataRecord:
    key: str
    quantity: Quantity
    payload: object
    version: int = 0  # 0 until published
    provenance: str = ""

    def __post_init__(self):
        check_payload(self.quantity, self.payload)


def check_payload(quantity, payload):
    want = SiteList if quantity.kind.on_sites else ScalarField
    if not isinstance(payload, want):
        raise SemanticError(
            f"{quantity.kind.value} needs a {want.__name__} payload, got {type(payload).__name__}"
        )


def _require(record, kind, op):
    if record.quantity.kind is not kind:
        raise SemanticError(f"{op} expects {kind.value}, got {record.quantity.kind.value}")


class Catalog:
    """Append-only, per-key versioned store.

    Readers never see a partially written version; publishes to one key are
    serialized so version numbers stay gap-free.
    """

    def __init__(self):
        self._records = {}
        self._lock = threading.Lock()

    def publish(self, key, quantity, payload, provenance=""):
        check_payload(quantity, payload)
        with self._lock:
            versions = self._records.setdefault(key, [])
            record = DataRecord(key, quantity, payload, len(versions) + 1, provenance)
            versions.append(record)
            return record.version

    def fetch(self, key, version=None):
        with self._lock:
            versions = self._records.get(key)
            if versions is None:
                raise NotFoundError(f"no record under key {key!r}")
            if version is None:
                return versions[-1]
            if not 1 <= version <= len(versions):
                raise VersionError(f"{key!r} has versions 1..{len(versions)}, asked for {version}")
            return versions[version - 1]

    def keys(self):
        with self._lock:
            return sorted(self._records)

    def latest_version(self, key):
        with self._lock:
            return len(self._records.get(key, ()))

    def __contains__(self, key):
        return key in self._records

    def dump(self, directory):
        """Write one file per record version plus ``manifest.tsv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = ["key\tkind\tlength_unit\tcharge_unit\tenergy_unit\tversion\tprovenance\tfile"]
        with self._lock:
            snapshot = {k: list(v) for k, v in sorted(self._records.items())}
        for key, versions in snapshot.items():
            if "\t" in key or "\n" in key:
                raise FormatError(f"key {key!r} cannot be written to a manifest")
            for rec in versions:
                stem = re.sub(r"[^A-Za-z0-9_.-]", "_", key)
                ext = "sites" if rec.quantity.kind.on_sites else "grid"
                fname = f"{stem}.v{rec.version}.{ext}"
                text = format_sites(rec.payload) if ext == "sites" else format_field(rec.payload)
                (directory / fname).write_text(text)
                q = rec.quantity
                prov = rec.provenance.replace("\t", " ").replace("\n", " ")
                rows.append(
                    f"{key}\t{q.kind.value}\t{q.length_unit}\t{q.charge_unit}\t{q.energy_unit}\t{rec.version}\t{prov}\t{fname}"
                )
        (directory / "manifest.tsv").write_text("\n".join(rows) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        lines = (directory / "manifest.tsv").read_text().splitlines()
        catalog = cls()
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 8:
                raise FormatError("manifest rows need 8 tab-separated fields", lineno)
            key, kind, lu, cu, eu, version, prov, fname = parts
            quantity = Quantity(Kind(kind), lu, cu, eu)
            text = (directory / fname).read_text()
            payload = parse_sites(text) if quantity.kind.on_sites else parse_field(text)
            got = catalog.publish(key, quantity, payload, prov)
            if got != int(version):
                raise FormatError(f"manifest versions for {key!r} are not contiguous from 1", lineno)
        return catalog


def publish(catalog, key, quantity, payload, provenance=""):
    return catalog.publish(key, quantity, payload, provenance)


def fetch(catalog, key, version=None):
    return catalog.fetch(key, version)


# ---------------------------------------------------------------- site-list files

def format_sites(sites: SiteList) -> str:
    lines = [f"SITES {len(sites)}"]
    for p, v in zip(sites.positions, sites.values):
        lines.append("%.17g %.17g %.17g %.17g" % (p[0], p[1], p[2], v))
    return "\n".join(lines) + "\n"


def parse_sites(text: str) -> SiteList:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("SITES"):
        raise FormatError("expected header 'SITES n'", 1)
    try:
        n = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise FormatError("bad SITES header", 1) from None
    if len(lines) - 1 != n:
        raise FormatError(f"header declares {n} sites but body has {len(lines) - 1}")
    rows = []
    for lineno, ln in enumerate(lines[1:], 2):
        try:
            row = [float(x) for x in ln.split()]
        except ValueError:
            raise FormatError(f"unparsable site line {ln!r}", lineno) from None
        if len(row) != 4:
            raise FormatError("expected 'x y z value'", lineno)
        rows.append(row)
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return SiteList(arr[:, :3], arr[:, 3])


# ---------------------------------------------------------------- transforms

def convert_units(record: DataRecord, target: Quantity) -> DataRecord:
    """Change unit tags, rescaling geometry and values; never changes the kind."""
    if target.kind is not record.quantity.kind:
        raise SemanticError(
            f"unit conversion cannot turn {record.quantity.kind.value} into {target.kind.value}"
        )
    f = LENGTH_UNITS[target.length_unit] / LENGTH_UNITS[record.quantity.length_unit]
    value_scale = f ** record.quantity.kind.length_power
    p = record.payload
    if isinstance(p, SiteList):
        payload = SiteList(p.positions * f, p.values * value_scale)
    else:
        payload = ScalarField(p.grid.scaled(f), p.values * value_scale)
    return DataRecord(record.key, target, payload, 0, f"convert_units({record.provenance})")


def sites_to_grid(record: DataRecord, grid: Grid3D, width: float) -> DataRecord:
    """Spread point charges as per-site renormalized Gaussians of std ``width``."""
    _require(record, Kind.POINT_CHARGES, "sites_to_grid")
    if not width > 0:
        raise ParameterError(f"spreading width must be > 0, got {width}")
    sites = record.payload
    for i, p in enumerate(sites.positions):
        if grid.face_distance(p) < 3.0 * width:
            raise SpillError(f"site {i + 1} is closer than 3*width = {3 * width:g} to a box face")
    pts = grid.points()
    dV = grid.cell_volume
    rho = np.zeros(grid.shape)
    for p, q in zip(sites.positions, sites.values):
        if q == 0.0:
            continue
        g = np.exp(-((pts - p) ** 2).sum(axis=-1) / (2.0 * width * width))
        rho += g * (q / (g.sum() * dV))
    quantity = Quantity(Kind.CHARGE_DENSITY_GRID, record.quantity.length_unit)
    return DataRecord(record.key, quantity, ScalarField(grid, rho), 0, f"sites_to_grid({record.provenance})")


def grid_to_sites(record: DataRecord, sites, params=CoulombParams()) -> DataRecord:
    """Potential of a charge-density grid at ``sites`` (same length unit as the record)."""
    _require(record, Kind.CHARGE_DENSITY_GRID, "grid_to_sites")
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    unit = record.quantity.length_unit
    # the kernel works in angstrom; potentials carry no length dimension
    if unit != "angstrom":
        model = convert_units(record, record.quantity.with_units("angstrom"))
        sites_model = sites / LENGTH_UNITS[unit]
    else:
        model, sites_model = record, sites
    v = grid_potential_at_sites(model.payload, sites_model, params)
    quantity = Quantity(Kind.POTENTIAL_AT_SITES, unit)
    return DataRecord(record.key, quantity, SiteList(sites, v), 0, f"grid_to_sites({record.provenance})")
