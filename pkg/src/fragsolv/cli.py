"""Command-line entry point.

Subcommands: fragment, fmo, rism, couple, flow, convert. A ``--config``
file holds ``key = value`` lines; command-line flags win over it.

Exit codes: 0 success, 1 usage or parameter error, 2 numerical failure
(non-convergence, divergence, singular solve), 3 I/O or file-format error.

Report CSV (``fmo_report.csv``, written by ``fmo`` and ``couple``)::

    pair,kind,value          one row per fragment pair "I-J" (ids),
                             kind near|far; near rows hold the dimer
                             correction, far rows the classical pair energy
    <blank line>
    key,value                e_monomer_sum, e_pair_es_far, e_pair_corr_near,
                             e_fmo1, e_fmo2, scc_iterations, scc_residual
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from fragsolv import coupling, fmo, mediator, rism, workflow
from fragsolv.core import (
    Atom,
    CoulombParams,
    MolecularSystem,
    auto_fragment,
    default_element_params,
    format_fragments,
    parse_element_params,
    parse_fragments,
    parse_xyz,
)
from fragsolv.errors import (
    FormatError,
    FragsolvError,
    NotFoundError,
    NumericalError,
    ParameterError,
    SemanticError,
    VersionError,
)

log = logging.getLogger("fragsolv")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class UsageError(FragsolvError):
    pass


def exit_code_for(exc):
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (FormatError, OSError, NotFoundError, VersionError)):
        return EXIT_IO
    if isinstance(exc, (UsageError, ParameterError, SemanticError, FragsolvError, ValueError)):
        return EXIT_USAGE
    raise exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config

_FLOAT_KEYS = {
    "gamma", "scc_tol", "scc_mixing", "rho", "q_s", "beta", "a_rep", "w_rep", "rism_mixing",
    "rism_tol", "denom_guard", "box", "outer_tol", "charge_mixing", "cost_a", "cost_b",
    "cost_alpha", "cost_beta_byte", "cutoff", "spread_width", "jitter",
}
_INT_KEYS = {"scc_max_iter", "rism_max_iter", "grid_n", "outer_max", "sweeps", "max_atoms", "workers", "seed"}
_STR_KEYS = {"closure"}


def parse_config(text):
    conf = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _FLOAT_KEYS:
                conf[key] = float(value)
            elif key in _INT_KEYS:
                conf[key] = int(value)
            elif key in _STR_KEYS:
                conf[key] = value
            else:
                raise FormatError(f"unknown config key {key!r}", lineno)
        except ValueError:
            raise FormatError(f"bad value for {key}: {value!r}", lineno) from None
    return conf


def _settings(args):
    conf = parse_config(Path(args.config).read_text()) if args.config else {}
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("grid_n", "grid_n"), ("box", "box")):
        val = getattr(args, flag, None)
        if val is not None:
            conf[key] = val
    return conf


def _coupled_config(conf):
    d = coupling.CoupledConfig()
    return coupling.CoupledConfig(
        outer_tol=conf.get("outer_tol", d.outer_tol),
        outer_max=conf.get("outer_max", d.outer_max),
        charge_mixing=conf.get("charge_mixing", d.charge_mixing),
        grid=coupling.GridSpec(conf.get("grid_n", d.grid.n), conf.get("box", d.grid.box_len)),
        solvent=rism.SolventModel(
            rho=conf.get("rho", d.solvent.rho),
            q_s=conf.get("q_s", d.solvent.q_s),
            beta=conf.get("beta", d.solvent.beta),
            a_rep=conf.get("a_rep", d.solvent.a_rep),
            w_rep=conf.get("w_rep", d.solvent.w_rep),
        ),
        rism=rism.RismConfig(
            closure=conf.get("closure", d.rism.closure),
            mixing=conf.get("rism_mixing", d.rism.mixing),
            tol=conf.get("rism_tol", d.rism.tol),
            max_iter=conf.get("rism_max_iter", d.rism.max_iter),
            denom_guard=conf.get("denom_guard", d.rism.denom_guard),
        ),
        scc=fmo.SccConfig(
            tol=conf.get("scc_tol", d.scc.tol),
            max_iter=conf.get("scc_max_iter", d.scc.max_iter),
            mixing=conf.get("scc_mixing", d.scc.mixing),
        ),
        coulomb=CoulombParams(conf.get("gamma", d.coulomb.gamma)),
    )


def _load_system(args):
    if not args.xyz:
        raise UsageError(f"{args.command}: --xyz is required")
    params = parse_element_params(Path(args.params).read_text()) if args.params else default_element_params()
    return parse_xyz(Path(args.xyz).read_text(), params)


def _load_scheme(args, system, conf):
    if not args.frags:
        raise UsageError(f"{args.command}: --frags is required")
    scheme = parse_fragments(Path(args.frags).read_text(), system)
    if "cutoff" in conf:
        scheme = replace(scheme, r_cut=conf["cutoff"])
    return scheme


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- writers

def format_report(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", "kind", "value"])
    for (i, j), term in sorted(report.per_pair.items()):
        w.writerow([f"{i}-{j}", term.kind, repr(term.value)])
    buf.write("\n")
    w.writerow(["key", "value"])
    for key in ("e_monomer_sum", "e_pair_es_far", "e_pair_corr_near", "e_fmo1", "e_fmo2"):
        w.writerow([key, repr(getattr(report, key))])
    w.writerow(["scc_iterations", report.charges.iteration_count])
    w.writerow(["scc_residual", repr(report.charges.residual)])
    return buf.getvalue()


def _write_charges(path, system, q):
    path.write_text(mediator.format_sites(mediator.SiteList(system.positions, q)))


# ---------------------------------------------------------------- commands

def cmd_fragment(args, conf):
    system = _load_system(args)
    max_atoms = args.max_atoms if args.max_atoms is not None else conf.get("max_atoms", 10)
    scheme = auto_fragment(system, max_atoms, conf.get("cutoff", 8.0))
    out = _out(args)
    (out / "fragments.frag").write_text(format_fragments(scheme))
    print(f"{len(scheme)} fragments written to {out / 'fragments.frag'}")


def cmd_fmo(args, conf):
    system = _load_system(args)
    scheme = _load_scheme(args, system, conf)
    cfg = _coupled_config(conf)
    report = fmo.fmo2_energy(system, scheme, None, cfg.coulomb, cfg.scc)
    out = _out(args)
    (out / "fmo_report.csv").write_text(format_report(report))
    _write_charges(out / "charges.sites", system, report.charges.q)
    print(f"E_FMO1 = {report.e_fmo1!r}\nE_FMO2 = {report.e_fmo2!r}")


def cmd_rism(args, conf):
    if not args.charges:
        raise UsageError("rism: --charges is required")
    sites = mediator.parse_sites(Path(args.charges).read_text())
    cfg = _coupled_config(conf)
    grid = cfg.grid.build(sites.positions)
    # build_solute_potential only needs positions and charges
    system = MolecularSystem(tuple(Atom("X", tuple(p), 0.0, 1.0) for p in sites.positions))
    u = rism.build_solute_potential(system, fmo.ChargeState(sites.values), grid, cfg.solvent, cfg.coulomb)
    sol = rism.solve_rism(u, cfg.solvent, cfg.rism)
    density = rism.solvent_charge_density(sol, cfg.solvent)
    out = _out(args)
    (out / "h.grid").write_text(rism.format_field(sol.h))
    (out / "solvent_density.grid").write_text(rism.format_field(density))
    with open(out / "rism_summary.csv", "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerow(["iterations", sol.iterations])
        w.writerow(["residual", repr(sol.residual)])
        w.writerow(["induced_charge", repr(density.integral())])
    print(f"RISM converged in {sol.iterations} iterations; induced charge {density.integral():.6g}")


def _write_coupled(out, system, rep, catalog):
    (out / "fmo_report.csv").write_text(format_report(rep.fmo_report))
    _write_charges(out / "charges.sites", system, rep.charges.q)
    (out / "solvent_density.grid").write_text(rism.format_field(rep.solvent_density))
    with open(out / "coupled_summary.csv", "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer_iteration", "charge_residual", "rism_iterations"])
        for k, (r, n) in enumerate(zip(rep.residuals, rep.rism_iterations), 1):
            w.writerow([k, repr(r), n])
        w.writerow([])
        w.writerow(["key", "value"])
        w.writerow(["outer_iterations", rep.outer_iterations])
        w.writerow(["e_fmo2", repr(rep.e_fmo2)])
        w.writerow(["e_interaction", repr(rep.e_interaction)])
    catalog.dump(out / "catalog")


def cmd_couple(args, conf):
    system = _load_system(args)
    scheme = _load_scheme(args, system, conf)
    cfg = _coupled_config(conf)
    catalog = mediator.Catalog()
    out = _out(args)
    try:
        rep = coupling.couple_fmo_rism(system, scheme, cfg, catalog)
    except fmo.NonConvergenceError as exc:
        if isinstance(exc.state, coupling.CoupledReport):
            _write_coupled(out, system, exc.state, catalog)
        raise
    _write_coupled(out, system, rep, catalog)
    print(
        f"converged in {rep.outer_iterations} outer iterations; "
        f"E_FMO2 = {rep.e_fmo2!r}, E_interaction = {rep.e_interaction!r}"
    )


def cmd_flow(args, conf):
    system = _load_system(args)
    scheme = _load_scheme(args, system, conf)
    cfg = _coupled_config(conf)
    cost = workflow.CostModel(
        a=conf.get("cost_a", 1.0), b=conf.get("cost_b", 0.0),
        alpha=conf.get("cost_alpha", 0.0), beta_byte=conf.get("cost_beta_byte", 0.0),
    )
    sweeps = conf.get("sweeps")
    if sweeps is None:
        sweeps = fmo.scc_loop(system, scheme, fmo.ExternalPotential.zeros(len(system)), cfg.coulomb, cfg.scc).iteration_count
    kinds = fmo.classify_pairs(system, scheme)
    dag = workflow.build_fmo_dag(scheme, sweeps, cost, {p for p, k in kinds.items() if k == "near"})
    workers = conf.get("workers", 4)
    seed = conf.get("seed", 0)
    if workers < 1:
        raise ParameterError("--workers must be >= 1")
    counts = sorted({1, workers} | {2 ** k for k in range(workers.bit_length()) if 2 ** k <= workers})
    trace = workflow.simulate(dag, workers, seed, conf.get("jitter", 0.0))
    rows = workflow.speedup_curve(dag, counts, seed)
    out = _out(args)
    (out / "trace.csv").write_text(trace.to_csv())
    (out / "speedup.csv").write_text(workflow.speedup_csv(rows))
    print(f"{len(dag)} tasks, {sweeps} SCC sweeps; makespan on {workers} workers = {trace.makespan!r}")


def cmd_convert(args, conf):
    src = Path(args.input)
    text = src.read_text()
    is_sites = text.lstrip().startswith("SITES")
    payload = mediator.parse_sites(text) if is_sites else rism.parse_field(text)
    kind = mediator.Kind(args.kind) if args.kind else (
        mediator.Kind.POINT_CHARGES if is_sites else mediator.Kind.CHARGE_DENSITY_GRID
    )
    record = mediator.DataRecord(src.name, mediator.Quantity(kind, args.from_unit), payload, 0, str(src))
    if args.spread_width is not None:
        grid = coupling.GridSpec(conf.get("grid_n", 32), conf.get("box", 16.0)).build(payload.positions)
        record = mediator.sites_to_grid(record, grid, args.spread_width)
    if args.to_unit:
        record = mediator.convert_units(record, record.quantity.with_units(args.to_unit))
    dest = Path(args.output)
    dest.parent.mkdir(parents=True, exist_ok=True)
    p = record.payload
    dest.write_text(mediator.format_sites(p) if isinstance(p, mediator.SiteList) else rism.format_field(p))
    print(f"{record.quantity.kind.value} [{record.quantity.length_unit}] written to {dest}")


COMMANDS = {
    "fragment": cmd_fragment,
    "fmo": cmd_fmo,
    "rism": cmd_rism,
    "couple": cmd_couple,
    "flow": cmd_flow,
    "convert": cmd_convert,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--xyz", help="XYZ coordinate file")
    common.add_argument("--frags", help="fragment definition file")
    common.add_argument("--params", help="element parameter file (default: bundled table)")
    common.add_argument("--config", help="'key = value' settings file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--grid-n", dest="grid_n", type=int)
    common.add_argument("--box", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fragsolv", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("fragment", parents=[common], help="split a system into fixed-size fragments")
    p.add_argument("--max-atoms", dest="max_atoms", type=int)
    sub.add_parser("fmo", parents=[common], help="gas-phase FMO1/FMO2 energies")
    p = sub.add_parser("rism", parents=[common], help="solvent response to a charges file")
    p.add_argument("--charges", help="SITES file with positions and charges")
    sub.add_parser("couple", parents=[common], help="self-consistent FMO <-> RISM run")
    sub.add_parser("flow", parents=[common], help="simulate the distributed task graph")
    p = sub.add_parser("convert", parents=[common], help="unit and representation transforms")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", choices=[k.value for k in mediator.Kind])
    p.add_argument("--from-unit", dest="from_unit", default="angstrom", choices=sorted(mediator.LENGTH_UNITS))
    p.add_argument("--to-unit", dest="to_unit", choices=sorted(mediator.LENGTH_UNITS))
    p.add_argument("--spread-width", dest="spread_width", type=float,
                   help="spread point charges onto a grid with this Gaussian width")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args, _settings(args))
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except (FragsolvError, OSError, ValueError) as exc:
        code = exit_code_for(exc)
        print(f"fragsolv: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
