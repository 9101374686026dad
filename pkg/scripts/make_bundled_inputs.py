"""Regenerate the synthetic chain inputs shipped in src/fragsolv/data/."""

from pathlib import Path

from fragsolv.core import auto_fragment, format_fragments, format_xyz, synthetic_chain

DATA = Path(__file__).resolve().parents[1] / "src" / "fragsolv" / "data"

for n_atoms, name in [(75, "chain75"), (138, "chain138"), (160, "chain160")]:
    system = synthetic_chain(n_atoms, seed=n_atoms, name=f"synthetic chain, {n_atoms} atoms")
    (DATA / f"{name}.xyz").write_text(format_xyz(system))
    (DATA / f"{name}.frag").write_text(format_fragments(auto_fragment(system, 10)))
    print(name, len(auto_fragment(system, 10)), "fragments")
