import csv

import pytest

from fragsolv import errors
from fragsolv.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_USAGE, UsageError, exit_code_for, main, parse_config
from fragsolv.core import format_xyz, synthetic_chain
from fragsolv.mediator import parse_sites
from fragsolv.rism import parse_field

from conftest import DATA

TOY = ["--xyz", str(DATA / "toy.xyz"), "--frags", str(DATA / "toy.frag")]


def run(tmp_path, *argv, config=None):
    extra = []
    if config is not None:
        path = tmp_path / "run.conf"
        path.write_text(config)
        extra = ["--config", str(path)]
    return main([*argv, *extra])


def summary(path):
    text = path.read_text()
    table, block = text.split("\n\n")
    rows = list(csv.reader(table.splitlines()))
    kv = dict(csv.reader(block.splitlines()))
    return rows, kv


EXIT_CONTRACT = [
    (UsageError("x"), EXIT_USAGE),
    (errors.ParameterError("x"), EXIT_USAGE),
    (errors.SpillError("x"), EXIT_USAGE),
    (errors.SizeGuardError("x"), EXIT_USAGE),
    (errors.CycleError("x"), EXIT_USAGE),
    (errors.SemanticError("x"), EXIT_USAGE),
    (errors.NumericalError("x"), EXIT_NUMERICAL),
    (errors.SingularSystemError("x", 0), EXIT_NUMERICAL),
    (errors.NonConvergenceError("x"), EXIT_NUMERICAL),
    (errors.DivergenceError("x"), EXIT_NUMERICAL),
    (errors.ClosureOverflowError("x"), EXIT_NUMERICAL),
    (errors.FormatError("x", 3), EXIT_IO),
    (errors.UnknownElementError("x", 1), EXIT_IO),
    (errors.PartitionError("uncovered", [1]), EXIT_IO),
    (errors.AtomIndexError("x", 2), EXIT_IO),
    (errors.NotFoundError("x"), EXIT_IO),
    (errors.VersionError("x"), EXIT_IO),
    (FileNotFoundError("x"), EXIT_IO),
]


@pytest.mark.parametrize("exc,code", EXIT_CONTRACT, ids=lambda v: type(v).__name__ if isinstance(v, Exception) else str(v))
def test_exit_code_contract(exc, code):
    assert exit_code_for(exc) == code


def test_every_library_error_is_mapped():
    def subclasses(cls):
        for sub in cls.__subclasses__():
            yield sub
            yield from subclasses(sub)

    mapped = {type(e) for e, _ in EXIT_CONTRACT}
    assert set(subclasses(errors.FragsolvError)) - {UsageError} <= mapped


def test_fmo_toy(tmp_path, capsys):
    assert run(tmp_path, "fmo", *TOY, "--out", str(tmp_path)) == 0
    rows, kv = summary(tmp_path / "fmo_report.csv")
    assert rows[0] == ["pair", "kind", "value"] and rows[1][:2] == ["0-1", "near"]
    assert list(kv) == ["key", "e_monomer_sum", "e_pair_es_far", "e_pair_corr_near", "e_fmo1", "e_fmo2",
                        "scc_iterations", "scc_residual"]
    assert float(kv["e_fmo2"]) == pytest.approx(float(kv["e_monomer_sum"]) + float(rows[1][2]), rel=1e-12)
    sites = parse_sites((tmp_path / "charges.sites").read_text())
    assert len(sites) == 6 and sum(sites.values) == pytest.approx(1.0, abs=1e-10)
    assert "E_FMO2" in capsys.readouterr().out


def test_missing_xyz(tmp_path, capsys):
    assert run(tmp_path, "fmo", "--out", str(tmp_path)) == EXIT_USAGE
    assert "--xyz" in capsys.readouterr().err


def test_unknown_flag(tmp_path):
    assert run(tmp_path, "fmo", "--bogus") == EXIT_USAGE


def test_missing_file(tmp_path):
    assert run(tmp_path, "fmo", "--xyz", str(tmp_path / "nope.xyz"), "--frags", "x") == EXIT_IO


def test_bad_fragment_file(tmp_path):
    frag = tmp_path / "bad.frag"
    frag.write_text("A 0 1 2\n")
    assert run(tmp_path, "fmo", "--xyz", str(DATA / "toy.xyz"), "--frags", str(frag), "--out", str(tmp_path)) == EXIT_IO


def test_scc_nonconvergence(tmp_path):
    assert run(tmp_path, "fmo", *TOY, "--out", str(tmp_path), config="scc_max_iter = 1\nscc_tol = 1e-15\n") == EXIT_NUMERICAL


def test_couple_single_pass_exits_numerical(tmp_path):
    out = tmp_path / "o"
    assert run(tmp_path, "couple", *TOY, "--out", str(out), config="outer_max = 1\n") == EXIT_NUMERICAL
    # partial results are still written for inspection
    assert (out / "coupled_summary.csv").exists()


def test_couple_toy(tmp_path):
    out = tmp_path / "o"
    assert run(tmp_path, "couple", *TOY, "--out", str(out)) == 0
    for name in ("fmo_report.csv", "charges.sites", "solvent_density.grid", "coupled_summary.csv", "catalog/manifest.tsv"):
        assert (out / name).exists()
    rows, kv = summary(out / "coupled_summary.csv")
    assert float(kv["e_interaction"]) < 0
    assert int(kv["outer_iterations"]) == len(rows) - 1
    assert float(rows[-1][1]) < 1e-6
    density = parse_field((out / "solvent_density.grid").read_text())
    assert density.grid.n == 32


def test_couple_without_solvent_matches_gas_phase(tmp_path):
    gas, wet = tmp_path / "gas", tmp_path / "wet"
    assert run(tmp_path, "fmo", *TOY, "--out", str(gas)) == 0
    assert run(tmp_path, "couple", *TOY, "--out", str(wet), config="rho = 0\n") == 0
    assert (gas / "fmo_report.csv").read_bytes() == (wet / "fmo_report.csv").read_bytes()


def test_fragment(tmp_path):
    xyz = tmp_path / "c.xyz"
    xyz.write_text(format_xyz(synthetic_chain(25)))
    assert run(tmp_path, "fragment", "--xyz", str(xyz), "--max-atoms", "10", "--out", str(tmp_path)) == 0
    lines = [ln for ln in (tmp_path / "fragments.frag").read_text().splitlines() if ln and not ln.startswith(("#", "cutoff"))]
    assert len(lines) == 3


def test_rism_from_charges(tmp_path):
    assert run(tmp_path, "fmo", *TOY, "--out", str(tmp_path)) == 0
    assert run(tmp_path, "rism", "--charges", str(tmp_path / "charges.sites"), "--grid-n", "16",
               "--box", "14", "--out", str(tmp_path)) == 0
    h = parse_field((tmp_path / "h.grid").read_text())
    assert h.grid.n == 16 and h.grid.box_len == 14.0
    assert (h.values >= -1).all()
    kv = dict(csv.reader((tmp_path / "rism_summary.csv").read_text().splitlines()))
    assert float(kv["induced_charge"]) < 0


def test_rism_needs_charges(tmp_path):
    assert run(tmp_path, "rism", "--out", str(tmp_path)) == EXIT_USAGE


def test_flow(tmp_path):
    args = ["flow", "--xyz", str(DATA / "chain160.xyz"), "--frags", str(DATA / "chain160.frag"),
            "--workers", "16", "--out", str(tmp_path)]
    assert run(tmp_path, *args, config="sweeps = 4\ncost_a = 0.001\ncost_b = 0.05\n") == 0
    speed = list(csv.DictReader((tmp_path / "speedup.csv").read_text().splitlines()))
    assert [int(r["workers"]) for r in speed] == [1, 2, 4, 8, 16]
    spans = [float(r["makespan"]) for r in speed]
    assert spans == sorted(spans, reverse=True)
    trace = (tmp_path / "trace.csv").read_text()
    assert trace.startswith("task_id,kind,worker,start,end\n")
    first = trace
    assert run(tmp_path, *args, config="sweeps = 4\ncost_a = 0.001\ncost_b = 0.05\n") == 0
    assert (tmp_path / "trace.csv").read_text() == first


def test_flow_bad_workers(tmp_path):
    assert run(tmp_path, "flow", *TOY, "--workers", "0", "--out", str(tmp_path)) == EXIT_USAGE


def test_convert_units(tmp_path):
    src = tmp_path / "q.sites"
    src.write_text("SITES 1\n1 2 3 0.5\n")
    dest = tmp_path / "q_bohr.sites"
    assert run(tmp_path, "convert", "--input", str(src), "--output", str(dest), "--to-unit", "bohr") == 0
    back = parse_sites(dest.read_text())
    assert back.positions[0, 0] == 1.8897261255 and back.values[0] == 0.5


def test_convert_spread(tmp_path):
    src = tmp_path / "q.sites"
    src.write_text("SITES 2\n8 8 8 1\n9 8 8 -0.25\n")
    dest = tmp_path / "rho.grid"
    assert run(tmp_path, "convert", "--input", str(src), "--output", str(dest), "--spread-width", "0.5") == 0
    assert parse_field(dest.read_text()).integral() == pytest.approx(0.75, rel=1e-7)  # file keeps 9 digits


def test_convert_kind_guard(tmp_path):
    src = tmp_path / "v.sites"
    src.write_text("SITES 1\n8 8 8 1\n")
    rc = run(tmp_path, "convert", "--input", str(src), "--output", str(tmp_path / "x"),
             "--kind", "PotentialAtSites", "--spread-width", "0.5")
    assert rc == EXIT_USAGE


def test_config_parsing():
    conf = parse_config("# settings\nrho = 0.02  # thinner\nouter_max = 7\nclosure = HNC\n")
    assert conf == {"rho": 0.02, "outer_max": 7, "closure": "HNC"}
    with pytest.raises(errors.FormatError):
        parse_config("mystery = 1\n")
    with pytest.raises(errors.FormatError):
        parse_config("outer_max = many\n")


def test_flags_override_config(tmp_path):
    src = tmp_path / "q.sites"
    src.write_text("SITES 1\n0 0 0 1\n")
    assert run(tmp_path, "rism", "--charges", str(src), "--grid-n", "8", "--out", str(tmp_path), config="grid_n = 16\n") == 0
    assert parse_field((tmp_path / "h.grid").read_text()).grid.n == 8


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "couple" in capsys.readouterr().out
