"""Single-site 3D-RISM surrogate on a periodic cubic grid.

Picard iteration on the direct correlation function c with the
Ornstein-Zernike relation applied in reciprocal space and a pointwise
KH or HNC closure. Transforms use the continuum normalization

    forward:  f_hat = dV * FFT(f)
    inverse:  f = IFFT(f_hat) / dV        (numpy's IFFT already carries 1/n**3)

so that a product of transforms corresponds to the continuum convolution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fragsolv.core import CoulombParams, coulomb_kernel
from fragsolv.errors import (
    ClosureOverflowError,
    DivergenceError,
    FormatError,
    NonConvergenceError,
    ParameterError,
    SpillError,
)

log = logging.getLogger(__name__)

# exp() overflows float64 just above 709.78
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class Grid3D:
    n: int
    box_len: float
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise ParameterError(f"grid size must be a power of two >= 8, got {self.n}")
        if not (math.isfinite(self.box_len) and self.box_len > 0):
            raise ParameterError(f"box length must be > 0, got {self.box_len}")
        origin = tuple(float(x) for x in self.origin)
        if len(origin) != 3:
            raise ParameterError("origin must be a 3-vector")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "box_len", float(self.box_len))
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered_on(cls, positions, n, box_len):
        centre = np.asarray(positions, dtype=float).mean(axis=0)
        return cls(n, box_len, tuple(centre - box_len / 2))

    @property
    def spacing(self):
        return self.box_len / self.n

    @property
    def cell_volume(self):
        return self.spacing ** 3

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    def axes(self):
        i = np.arange(self.n) * self.spacing
        return tuple(o + i for o in self.origin)

    def points(self):
        """(n, n, n, 3) array of grid-point coordinates."""
        x, y, z = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def face_distance(self, p):
        p = np.asarray(p, dtype=float)
        lo = p - np.asarray(self.origin)
        hi = np.asarray(self.origin) + self.box_len - p
        return float(min(lo.min(), hi.min()))

    def scaled(self, factor):
        return Grid3D(self.n, self.box_len * factor, tuple(o * factor for o in self.origin))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values on a grid, indexed [ix, iy, iz] (z fastest when flattened)."""

    grid: Grid3D
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ParameterError("scalar field contains non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    def integral(self):
        return float(self.values.sum() * self.grid.cell_volume)


def format_field(field: ScalarField) -> str:
    g = field.grid
    lines = ["GRID %d %.17g %.17g %.17g %.17g" % (g.n, g.box_len, *g.origin)]
    flat = field.values.ravel()
    for start in range(0, flat.size, 6):
        lines.append(" ".join("%.8e" % v for v in flat[start:start + 6]))
    return "\n".join(lines) + "\n"


def parse_field(text: str) -> ScalarField:
    lines = text.split("\n", 1)
    head = lines[0].split()
    if len(head) != 6 or head[0] != "GRID":
        raise FormatError("expected header 'GRID n L ox oy oz'", 1)
    try:
        n = int(head[1])
        box, ox, oy, oz = (float(x) for x in head[2:])
        values = np.array(lines[1].split() if len(lines) > 1 else [], dtype=float)
    except ValueError as exc:
        raise FormatError(f"unparsable grid file: {exc}") from None
    try:
        grid = Grid3D(n, box, (ox, oy, oz))
    except ParameterError as exc:
        raise FormatError(str(exc), 1) from None
    if values.size != n ** 3:
        raise FormatError(f"expected {n ** 3} grid values, found {values.size}")
    return ScalarField(grid, values)


@dataclass(frozen=True)
class SolventModel:
    rho: float = 0.0334
    q_s: float = -0.4
    beta: float = 0.05
    a_rep: float = 1.0
    w_rep: float = 1.0

    def __post_init__(self):
        if self.rho < 0:
            raise ParameterError("solvent density must be >= 0")
        if not self.beta > 0:
            raise ParameterError("beta must be > 0")
        if self.a_rep < 0:
            raise ParameterError("repulsion amplitude must be >= 0")
        if not self.w_rep > 0:
            raise ParameterError("repulsion width must be > 0")


WATER_LIKE = SolventModel()


@dataclass(frozen=True)
class RismConfig:
    closure: str = "KH"
    mixing: float = 0.5
    tol: float = 1e-7
    max_iter: int = 500
    denom_guard: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "closure", self.closure.upper())
        if self.closure not in ("KH", "HNC"):
            raise ParameterError(f"unknown closure {self.closure!r}; use KH or HNC")
        if not 0 < self.mixing <= 1:
            raise ParameterError("rism mixing must lie in (0, 1]")
        if not self.tol > 0 or self.max_iter < 1 or not self.denom_guard > 0:
            raise ParameterError("bad rism tolerance settings")


@dataclass(frozen=True, eq=False)
class RismSolution:
    h: ScalarField
    c: ScalarField
    iterations: int
    residual: float
    history: tuple = field(default=(), repr=False)

    @property
    def t(self):
        return self.h.values - self.c.values


def build_solute_potential(system, charges, grid, solvent, params=CoulombParams()):
    """Solute-solvent site potential on every grid point (direct distances, no images)."""
    pos = system.positions
    margin = 3.0 * solvent.w_rep
    for i, p in enumerate(pos):
        if grid.face_distance(p) < margin:
            raise SpillError(
                f"atom {i + 1} ({system.atoms[i].element}) is closer than 3*w_rep = {margin:g} to a box face"
            )
    pts = grid.points()
    u = np.zeros(grid.shape)
    q = charges.q
    for qi, p in zip(q, pos):
        r = np.sqrt(((pts - p) ** 2).sum(axis=-1))
        if qi != 0.0:
            u += qi * solvent.q_s * coulomb_kernel(r, params)
        if solvent.a_rep != 0.0:
            u += solvent.a_rep * np.exp(-(r * r) / solvent.w_rep ** 2)
    return ScalarField(grid, u)


def _closure(d, closure):
    if closure == "KH":
        # exp only where d <= 0, so no overflow is possible
        return np.where(d > 0, d, np.expm1(np.minimum(d, 0.0)))
    if d.max() > _EXP_LIMIT:
        raise ClosureOverflowError(
            f"HNC closure exponent reached {d.max():.3g}; use the KH closure"
        )
    return np.expm1(d)


def _oz(c, rho, dV, guard):
    """Return t = h - c from the single-component OZ relation."""
    c_hat = dV * np.fft.fftn(c)
    denom = 1.0 - rho * c_hat
    small = np.abs(denom).min()
    if small < guard:
        raise DivergenceError(
            f"OZ denominator fell to {small:.3g}; reduce the solvent density or the mixing"
        )
    h_hat = c_hat / denom
    h = np.fft.ifftn(h_hat).real / dV
    return h - c


def solve_rism(u, solvent, cfg=RismConfig()):
    grid = u.grid
    dV = grid.cell_volume
    bu = solvent.beta * u.values
    c = np.zeros(grid.shape)
    history = []
    for it in range(1, cfg.max_iter + 1):
        t = _oz(c, solvent.rho, dV, cfg.denom_guard)
        h_new = _closure(-bu + t, cfg.closure)
        c_new = h_new - t
        residual = float(np.max(np.abs(c_new - c)))
        history.append(residual)
        log.debug("rism iteration %d residual %.3e", it, residual)
        if residual < cfg.tol:
            # unmixed final iterate: h = t + c holds exactly and h >= -1 under KH
            return RismSolution(ScalarField(grid, h_new), ScalarField(grid, c_new), it, residual, tuple(history))
        c = (1.0 - cfg.mixing) * c + cfg.mixing * c_new
    raise NonConvergenceError(
        f"RISM did not converge in {cfg.max_iter} iterations (residual {history[-1]:.3e})",
        state=ScalarField(grid, c),
        history=history,
    )


def solvent_charge_density(sol, solvent):
    """Solvent charge density relative to the uniform bulk: rho * q_s * h."""
    return ScalarField(sol.h.grid, solvent.rho * solvent.q_s * sol.h.values)


def grid_potential_at_sites(rho_c, sites, params=CoulombParams()):
    """Potential of a grid charge density at each site by direct summation."""
    grid = rho_c.grid
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    for i, p in enumerate(sites):
        if grid.face_distance(p) < 0:
            raise SpillError(f"site {i + 1} at {tuple(p)} lies outside the grid box")
    pts = grid.points().reshape(-1, 3)
    w = rho_c.values.ravel() * grid.cell_volume
    nz = w != 0.0
    pts, w = pts[nz], w[nz]
    out = np.empty(len(sites))
    for i, p in enumerate(sites):
        if w.size == 0:
            out[i] = 0.0
            continue
        r = np.sqrt(((pts - p) ** 2).sum(axis=-1))
        out[i] = float(w @ coulomb_kernel(r, params))
    return out
