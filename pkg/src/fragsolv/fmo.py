"""Fragment-decomposed charge-equilibration solver.

Model energy of a set of atoms S at charges q::

    E_int(S; q) = sum_i (chi_i q_i + eta_i q_i**2 / 2) + sum_{i<j} J(r_ij) q_i q_j

and the embedding term for S in fixed environment charges::

    E_ext(S; q) = sum_i q_i (v_i + sum_{k not in S} q_k J(r_ik))

Monomers are solved under per-fragment charge constraints, dimers under
one combined constraint, and the reference (oracle) solve under a single
global constraint. Each solve is a small symmetric KKT system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.linalg

from fragsolv.core import CoulombParams, FragmentationScheme, MolecularSystem, coulomb_matrix
from fragsolv.errors import NonConvergenceError, ParameterError, SingularSystemError, SizeGuardError

log = logging.getLogger(__name__)

ORACLE_MAX_ATOMS = 2000


@dataclass(frozen=True)
class ChargeState:
    q: np.ndarray
    iteration_count: int = 0
    residual: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if not np.all(np.isfinite(q)):
            raise ParameterError("charges must be finite")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))


@dataclass(frozen=True)
class ExternalPotential:
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ParameterError("external potential must be a finite 1-D array")
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))

    def __len__(self):
        return len(self.v)


@dataclass(frozen=True)
class SccConfig:
    tol: float = 1e-8
    max_iter: int = 200
    mixing: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterError("scc tol must be > 0")
        if self.max_iter < 1:
            raise ParameterError("scc max_iter must be >= 1")
        if not 0 < self.mixing <= 1:
            raise ParameterError("scc mixing must lie in (0, 1]")


@dataclass(frozen=True)
class PairTerm:
    kind: str  # "near" or "far"
    value: float


@dataclass(frozen=True)
class FmoEnergyReport:
    e_monomer_sum: float
    e_pair_es_far: float
    e_pair_corr_near: float
    e_fmo1: float
    e_fmo2: float
    per_pair: dict
    charges: ChargeState
    monomer_energies: dict = field(default_factory=dict)

    def check_consistency(self, es_all_pairs: float, tol: float = 1e-12) -> None:
        scale = max(1.0, abs(self.e_fmo2), abs(self.e_fmo1))
        assert abs(self.e_fmo1 - (self.e_monomer_sum + es_all_pairs)) <= tol * scale
        near = sum(p.value for p in self.per_pair.values() if p.kind == "near")
        far = sum(p.value for p in self.per_pair.values() if p.kind == "far")
        assert abs(self.e_fmo2 - (self.e_monomer_sum + near + far)) <= tol * scale


# ---------------------------------------------------------------- kernels

class _Model:
    """Full kernel matrix and per-atom parameters for one (system, params)."""

    def __init__(self, system: MolecularSystem, params: CoulombParams):
        self.system = system
        self.params = params
        self.J = coulomb_matrix(system.positions, system.positions, params)
        self.chi = system.chi
        self.eta = system.eta

    def hessian(self, idx):
        H = self.J[np.ix_(idx, idx)].copy()
        H[np.diag_indices_from(H)] = self.eta[idx]
        return H

    def e_int(self, idx, q_sub):
        Joff = self.J[np.ix_(idx, idx)].copy()
        np.fill_diagonal(Joff, 0.0)
        return float(
            self.chi[idx] @ q_sub
            + 0.5 * self.eta[idx] @ (q_sub * q_sub)
            + 0.5 * q_sub @ Joff @ q_sub
        )

    def env_potential(self, idx, q_env):
        """Potential at atoms ``idx`` from all charges outside ``idx``."""
        masked = np.array(q_env, dtype=float)
        masked[idx] = 0.0
        return self.J[idx] @ masked


def _check(system, scheme, v=None):
    if scheme.n_atoms != len(system):
        raise ParameterError(f"scheme covers {scheme.n_atoms} atoms, system has {len(system)}")
    if v is not None and len(v) != len(system):
        raise ParameterError(f"external potential has {len(v)} values for {len(system)} atoms")


def _kkt_solve(H, linear, total, label=None):
    """Minimize q.H.q/2 + linear.q subject to sum(q) = total."""
    n = len(linear)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        # indefinite H can still be positive definite on the constraint plane
        if n > 1:
            Z = scipy.linalg.null_space(np.ones((1, n)))
            if np.linalg.eigvalsh(Z.T @ H @ Z).min() <= 0:
                raise SingularSystemError(
                    f"KKT system for fragment {label} is not positive definite on the constraint plane",
                    label,
                ) from None
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = H
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    rhs = np.append(-linear, total)
    try:
        sol = scipy.linalg.solve(K, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise SingularSystemError(f"singular KKT system for fragment {label}", label) from None
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError(f"non-finite KKT solution for fragment {label}", label)
    return sol[:n]


def _solve_unit(model, idx, total, v, env_q, label):
    idx = np.asarray(idx)
    ext = v[idx] + model.env_potential(idx, env_q)
    q = _kkt_solve(model.hessian(idx), model.chi[idx] + ext, total, label)
    return q, model.e_int(idx, q), float(q @ ext)


# ---------------------------------------------------------------- public solves

def solve_monomer(system, scheme, fragment_id, env_charges, v, params, _model=None):
    """Embedded monomer solve.

    Returns ``(q_I, E_int_I, E_emb_I)``; ``q_I`` is ordered like the
    fragment's (sorted) atom indices.
    """
    _check(system, scheme, v)
    model = _model or _Model(system, params)
    frag = scheme.by_id(fragment_id)
    return _solve_unit(model, frag.atom_indices, frag.formal_charge, v.v, env_charges.q, fragment_id)


def solve_dimer(system, scheme, pair, env_charges, v, params, _model=None):
    """Embedded dimer solve with one combined charge constraint over I and J.

    Returns ``(q_IJ, E_int_IJ)`` with ``q_IJ`` ordered by atom index.
    """
    _check(system, scheme, v)
    model = _model or _Model(system, params)
    fi, fj = scheme.by_id(pair[0]), scheme.by_id(pair[1])
    idx = sorted(fi.atom_indices + fj.atom_indices)
    q, e_int, _ = _solve_unit(model, idx, fi.formal_charge + fj.formal_charge, v.v, env_charges.q, pair)
    return q, e_int


def isolated_monomers(system, scheme, v, params, _model=None):
    """Monomer charges with no environment; the starting guess for SCC."""
    model = _model or _Model(system, params)
    q = np.zeros(len(system))
    empty = np.zeros(len(system))
    for frag in scheme:
        q[list(frag.atom_indices)] = _solve_unit(
            model, frag.atom_indices, frag.formal_charge, v.v, empty, frag.id
        )[0]
    return q


def scc_loop(system, scheme, v, params, cfg=SccConfig(), executor=None, store=None, _model=None):
    """Self-consistent monomer charges by Jacobi sweeps.

    Every sweep reads only the previous sweep's charges, so the result does
    not depend on fragment order. With ``executor`` the monomer solves of a
    sweep run concurrently; results are published to ``store`` (a
    ``workflow.DataStore``) and read back after the sweep barrier.
    """
    _check(system, scheme, v)
    model = _model or _Model(system, params)
    q = isolated_monomers(system, scheme, v, params, model)
    frags = sorted(scheme, key=lambda f: f.id)
    residual = float("inf")
    history = []
    for sweep in range(1, cfg.max_iter + 1):
        env = q.copy()

        def job(frag, env=env):
            return _solve_unit(model, frag.atom_indices, frag.formal_charge, v.v, env, frag.id)[0]

        if executor is None:
            results = [job(f) for f in frags]
        else:
            results = list(executor.map(job, frags))
        if store is not None:
            for f, qf in zip(frags, results):
                store.put(("monomer", sweep, f.id), qf)
            results = [store.get(("monomer", sweep, f.id)) for f in frags]
        q_new = np.empty_like(q)
        for f, qf in zip(frags, results):
            q_new[list(f.atom_indices)] = qf
        if cfg.mixing != 1.0:
            q_new = (1.0 - cfg.mixing) * q + cfg.mixing * q_new
        residual = float(np.max(np.abs(q_new - q)))
        history.append(residual)
        q = q_new
        log.debug("scc sweep %d residual %.3e", sweep, residual)
        if residual < cfg.tol:
            return ChargeState(q, sweep, residual)
    raise NonConvergenceError(
        f"SCC did not converge in {cfg.max_iter} sweeps (residual {residual:.3e}); try smaller mixing",
        state=ChargeState(q, cfg.max_iter, residual),
        history=history,
    )


def es_pair_energy(I, J, charges, system, params, _model=None):
    """Classical interaction W_IJ between fragments I and J (``Fragment`` objects)."""
    if J.id < I.id:
        I, J = J, I  # fixed summation order makes W_IJ == W_JI bit for bit
    ii, jj = list(I.atom_indices), list(J.atom_indices)
    if _model is not None:
        Jm = _model.J[np.ix_(ii, jj)]
    else:
        pos = system.positions
        Jm = coulomb_matrix(pos[ii], pos[jj], params)
    q = charges.q
    return float(q[ii] @ Jm @ q[jj])


def min_distance(system, I, J):
    pos = system.positions
    a, b = pos[list(I.atom_indices)], pos[list(J.atom_indices)]
    return float(np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min())


def classify_pairs(system, scheme):
    """{(I, J): "near" | "far"} for id pairs I < J, by minimum interatomic distance."""
    frags = sorted(scheme, key=lambda f: f.id)
    return {
        (a.id, b.id): "near" if min_distance(system, a, b) < scheme.r_cut else "far"
        for a, b in combinations(frags, 2)
    }


def fmo2_energy(system, scheme, v=None, params=CoulombParams(), cfg=SccConfig(), executor=None):
    """FMO1 and FMO2 energies.

    Fragment energies include the one-body external-potential term
    ``q . v`` so that the whole-system reference and the fragment sums
    describe the same functional.
    """
    if v is None:
        v = ExternalPotential.zeros(len(system))
    _check(system, scheme, v)
    model = _Model(system, params)
    state = scc_loop(system, scheme, v, params, cfg, executor=executor, _model=model)
    q = state.q
    frags = sorted(scheme, key=lambda f: f.id)

    e_mono = {}
    for f in frags:
        idx = list(f.atom_indices)
        e_mono[f.id] = model.e_int(idx, q[idx]) + float(q[idx] @ v.v[idx])

    kinds = classify_pairs(system, scheme)
    by_id = {f.id: f for f in frags}

    def dimer(pair):
        fi, fj = by_id[pair[0]], by_id[pair[1]]
        idx = sorted(fi.atom_indices + fj.atom_indices)
        qd, e_int, _ = _solve_unit(model, idx, fi.formal_charge + fj.formal_charge, v.v, q, pair)
        return e_int + float(qd @ v.v[idx])

    near_pairs = [p for p, k in kinds.items() if k == "near"]
    if executor is None:
        e_dimer = [dimer(p) for p in near_pairs]
    else:
        e_dimer = list(executor.map(dimer, near_pairs))
    e_dimer = dict(zip(near_pairs, e_dimer))

    per_pair = {}
    es_all = corr_near = es_far = 0.0
    for pair, kind in kinds.items():
        w = es_pair_energy(by_id[pair[0]], by_id[pair[1]], state, system, params, model)
        es_all += w
        if kind == "near":
            value = e_dimer[pair] - e_mono[pair[0]] - e_mono[pair[1]]
            corr_near += value
        else:
            value = w
            es_far += value
        per_pair[pair] = PairTerm(kind, value)

    mono_sum = sum(e_mono[f.id] for f in frags)
    report = FmoEnergyReport(
        e_monomer_sum=mono_sum,
        e_pair_es_far=es_far,
        e_pair_corr_near=corr_near,
        e_fmo1=mono_sum + es_all,
        e_fmo2=mono_sum + corr_near + es_far,
        per_pair=per_pair,
        charges=state,
        monomer_energies=e_mono,
    )
    report.check_consistency(es_all)
    return report


def total_energy(system, q, v=None, params=CoulombParams(), _model=None):
    """Whole-system model energy E_int(all; q) + q . v."""
    model = _model or _Model(system, params)
    q = np.asarray(q, dtype=float)
    idx = np.arange(len(system))
    e = model.e_int(idx, q)
    if v is not None:
        e += float(q @ v.v)
    return e


def oracle_energy(system, scheme, v=None, params=CoulombParams()):
    """Dense whole-system solve under one global charge constraint."""
    n = len(system)
    if n > ORACLE_MAX_ATOMS:
        raise SizeGuardError(f"oracle limited to {ORACLE_MAX_ATOMS} atoms, got {n}")
    if v is None:
        v = ExternalPotential.zeros(n)
    _check(system, scheme, v)
    model = _Model(system, params)
    idx = np.arange(n)
    q = _kkt_solve(model.hessian(idx), model.chi + v.v, scheme.total_charge, "whole")
    energy = model.e_int(idx, q) + float(q @ v.v)
    return energy, ChargeState(q)
