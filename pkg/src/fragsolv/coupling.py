"""Outer self-consistency loop between the fragment solver and the solvent solver.

Every exchanged dataset goes through a ``mediator.Catalog``; its version
history is the audit trail of the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from fragsolv import fmo, mediator, rism
from fragsolv.core import CoulombParams
from fragsolv.errors import NonConvergenceError, ParameterError
from fragsolv.mediator import Kind, Quantity, SiteList

log = logging.getLogger(__name__)

KEY_CHARGES = "solute.charges"
KEY_DENSITY = "solvent.charge_density"
KEY_POTENTIAL = "solvent.potential_at_solute"


@dataclass(frozen=True)
class GridSpec:
    n: int = 32
    box_len: float = 16.0
    origin: tuple | None = None  # None centres the box on the solute

    def build(self, positions):
        if self.origin is None:
            return rism.Grid3D.centered_on(positions, self.n, self.box_len)
        return rism.Grid3D(self.n, self.box_len, self.origin)


@dataclass(frozen=True)
class CoupledConfig:
    outer_tol: float = 1e-6
    outer_max: int = 50
    charge_mixing: float = 0.5
    grid: GridSpec = GridSpec()
    solvent: rism.SolventModel = rism.WATER_LIKE
    rism: rism.RismConfig = rism.RismConfig()
    scc: fmo.SccConfig = fmo.SccConfig()
    coulomb: CoulombParams = CoulombParams()

    def __post_init__(self):
        if not self.outer_tol > 0 or self.outer_max < 1:
            raise ParameterError("outer_tol must be > 0 and outer_max >= 1")
        if not 0 < self.charge_mixing <= 1:
            raise ParameterError("charge_mixing must lie in (0, 1]")


@dataclass
class CoupledReport:
    outer_iterations: int
    charges: fmo.ChargeState
    e_fmo2: float
    e_interaction: float
    residuals: list
    fmo_report: fmo.FmoEnergyReport
    solvent_density: rism.ScalarField
    potential: np.ndarray
    rism_iterations: list = field(default_factory=list)


def couple_fmo_rism(system, scheme, cfg=CoupledConfig(), catalog=None):
    """Iterate FMO -> charges -> RISM -> solvent density -> site potential -> FMO.

    The potential fed back to the solute is mixed,
    ``v <- (1 - mu) v + mu v_new``; the loop stops once the solute charges
    change by less than ``outer_tol`` between two outer iterations. The
    first iteration never counts as converged since no solvent response has
    been fed back yet.
    """
    catalog = mediator.Catalog() if catalog is None else catalog
    grid = cfg.grid.build(system.positions)
    positions = system.positions
    n = len(system)
    v = np.zeros(n)
    q_prev = None
    residuals = []
    rism_iters = []
    report = None
    for it in range(1, cfg.outer_max + 1):
        report = fmo.fmo2_energy(system, scheme, fmo.ExternalPotential(v), cfg.coulomb, cfg.scc)
        q = report.charges.q
        catalog.publish(KEY_CHARGES, Quantity(Kind.POINT_CHARGES), SiteList(positions, q), f"fmo2 outer {it}")

        charges_rec = catalog.fetch(KEY_CHARGES)
        u = rism.build_solute_potential(
            system, fmo.ChargeState(charges_rec.payload.values), grid, cfg.solvent, cfg.coulomb
        )
        sol = rism.solve_rism(u, cfg.solvent, cfg.rism)
        rism_iters.append(sol.iterations)
        density = rism.solvent_charge_density(sol, cfg.solvent)
        catalog.publish(KEY_DENSITY, Quantity(Kind.CHARGE_DENSITY_GRID), density, f"rism outer {it}")

        pot = mediator.grid_to_sites(catalog.fetch(KEY_DENSITY), positions, cfg.coulomb)
        catalog.publish(KEY_POTENTIAL, pot.quantity, pot.payload, pot.provenance)
        v_new = np.array(catalog.fetch(KEY_POTENTIAL).payload.values)

        residual = float("inf") if q_prev is None else float(np.max(np.abs(q - q_prev)))
        residuals.append(residual)
        log.info("outer %d: max|dq| = %.3e, rism iterations %d", it, residual, sol.iterations)
        q_prev = q
        if residual < cfg.outer_tol:
            return CoupledReport(
                outer_iterations=it,
                charges=report.charges,
                e_fmo2=report.e_fmo2,
                e_interaction=float(q @ v_new),
                residuals=residuals,
                fmo_report=report,
                solvent_density=density,
                potential=v_new,
                rism_iterations=rism_iters,
            )
        v = (1.0 - cfg.charge_mixing) * v + cfg.charge_mixing * v_new

    partial = CoupledReport(
        outer_iterations=cfg.outer_max,
        charges=report.charges,
        e_fmo2=report.e_fmo2,
        e_interaction=float(report.charges.q @ v_new),
        residuals=residuals,
        fmo_report=report,
        solvent_density=density,
        potential=v_new,
        rism_iterations=rism_iters,
    )
    raise NonConvergenceError(
        f"coupled loop did not converge in {cfg.outer_max} outer iterations "
        f"(last max|dq| = {residuals[-1]:.3e})",
        state=partial,
        history=residuals,
    )
