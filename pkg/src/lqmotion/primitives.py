"""Motion-primitive derivation for each chain and active constraint set.

For chain i with stacked cost block K_i and constraint block L_i, the
optimal arcs satisfy the scalar pivot equation

    sum_o cost[o] * y^(o)  +  sum_{r active} sum_j (-1)^j L[r,j] * mu_r^(j) = 0

obtained by expanding (2 z'K_i + mu'L_i) . D_i with the integrator relations
(every chain variable is a derivative of the pivot y). With an empty active
set this is a homogeneous constant-coefficient ODE of order 2 k_i whose
basis is exponential-polynomial; with an active row the trajectory is pinned
by the constraint identity and the same equation determines mu in closed
form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .brunovsky import BrunovskyForm, chain_slices, is_chain_separable
from .errors import (
    ChainCouplingError,
    DegenerateOde,
    DependentActiveSet,
    InfeasibleActiveSet,
    UnderdeterminedMultipliers,
    UnsupportedActiveSet,
)
from .modes import (
    ExpPoly,
    Mode,
    cluster_roots,
    mode_to_exppoly,
    modes_from_roots,
    poly_eval,
    poly_roots,
    solve_particular,
)

ROOT_RESIDUAL_TOL = 1e-9
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class DerivativeOperator:
    """Alternating-sign derivative stack [1, -d/dt, d2/dt2, ...] of length k+1."""

    k: int

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([(-1.0) ** n for n in range(self.k + 1)])


@dataclass(frozen=True)
class SolutionBasis:
    """Real mode basis of one chain's arc family."""

    modes: tuple
    dimension: int

    def as_triples(self):
        return [(m.sigma, m.omega, m.p) for m in self.modes]


def pivot_cost_coeffs(k_block: np.ndarray, k: int) -> np.ndarray:
    """Coefficients of d^0..d^{2k} on the pivot from the cost side.

    Entry o collects 2 * sum_{j+j'=o} (-1)^j K[j', j]; odd cross terms cancel
    in pairs (perfect derivatives contribute nothing).
    """
    coeffs = np.zeros(2 * k + 1)
    for j in range(k + 1):
        for jp in range(k + 1):
            coeffs[j + jp] += 2.0 * (-1.0) ** j * k_block[jp, j]
    return coeffs


def characteristic_roots(coeffs: np.ndarray) -> SolutionBasis:
    """Clustered roots of the pivot polynomial as a real mode basis.

    Roots come from companion-matrix eigenvalues and each clustered root is
    re-checked against the polynomial (relative residual <= 1e-9).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if not np.any(np.abs(coeffs) > 0):
        raise DegenerateOde("all ODE coefficients are zero")
    clustered = poly_roots(coeffs)
    scale_coef = np.max(np.abs(coeffs))
    for lam, mult in clustered:
        scale = scale_coef * max(1.0, abs(lam)) ** (len(coeffs) - 1)
        resid = abs(poly_eval(coeffs, lam))
        # a multiple root flattens the polynomial; allow the cluster radius
        allowed = ROOT_RESIDUAL_TOL * scale * max(1.0, 10.0 ** (mult - 1))
        if resid > allowed:
            raise DegenerateOde(
                f"root {lam} fails polynomial residual check: {resid:.2e} > {allowed:.2e}")
    modes = modes_from_roots(clustered)
    order = int(np.nonzero(np.abs(coeffs) > 0)[0][-1])
    if len(modes) != order:
        raise DegenerateOde(
            f"basis dimension {len(modes)} does not match ODE order {order}")
    return SolutionBasis(modes=tuple(modes), dimension=len(modes))


@dataclass(frozen=True)
class PrimitiveOde:
    """Scalar pivot equation for one chain under one active set."""

    chain: int
    active_set: frozenset
    lhs_coeffs: np.ndarray            # cost-side operator on the pivot, length 2k+1
    rhs_mu_coeffs: dict               # row -> operator coeffs applied to mu_r
    pinned_states: tuple              # ((state level, value), ...) from single-entry rows

    @property
    def order(self) -> int:
        nz = np.nonzero(np.abs(self.lhs_coeffs) > 0)[0]
        return int(nz[-1]) if nz.size else 0


@dataclass
class ChainPrimitive:
    """Arc structure of one chain for a fixed active set.

    free chains carry the 2k-dimensional optimality basis; constrained
    chains carry the constraint-identity basis plus the closed-form
    multiplier representation (homogeneous mu modes and per-trajectory-mode
    particular parts).
    """

    chain: int
    k: int
    row: int | None
    cost_op: np.ndarray
    traj_modes: tuple
    traj_particular: ExpPoly | None
    mu_op: np.ndarray | None = None
    mu_modes: tuple = ()
    mu_parts: tuple = ()              # aligned with traj_modes
    mu_part_fixed: ExpPoly | None = None
    pinned_states: tuple = ()

    @property
    def is_free(self) -> bool:
        return self.row is None

    @property
    def n_traj(self) -> int:
        return len(self.traj_modes)

    @property
    def n_mu(self) -> int:
        return len(self.mu_modes)

    def basis(self) -> SolutionBasis:
        return SolutionBasis(modes=self.traj_modes, dimension=len(self.traj_modes))


@dataclass
class MotionPrimitive:
    """Per-chain arc structures for one active constraint set."""

    active_set: frozenset
    chains: list = field(default_factory=list)

    def chain_struct(self, i: int) -> ChainPrimitive:
        return self.chains[i]


def _chain_row_entries(form: BrunovskyForm, row: int, chain: int):
    cols = chain_slices(form)[chain]
    return form.Lmat[row, cols]


def check_active_set(form: BrunovskyForm, active_set) -> None:
    """Reject dependent or contradictory active rows.

    Dependence: rank(L_S) < |S|. Contradiction: L_S z = e_S inconsistent
    (rank of the augmented matrix exceeds rank of L_S).
    """
    rows = sorted(active_set)
    if not rows:
        return
    L = form.Lmat[rows]
    e = form.eVec[rows]
    sv = np.linalg.svd(L, compute_uv=False)
    scale = sv[0] if sv[0] > 0 else 1.0
    rank = int(np.sum(sv > 1e-10 * scale))
    if rank < len(rows):
        aug = np.hstack([L, e[:, None]])
        sva = np.linalg.svd(aug, compute_uv=False)
        rank_aug = int(np.sum(sva > 1e-10 * max(sva[0], scale)))
        if rank_aug > rank:
            raise InfeasibleActiveSet(f"rows {rows} pin contradictory equalities")
        raise DependentActiveSet(f"rows {rows} are linearly dependent")


def derive_ode(form: BrunovskyForm, chain: int, active_set) -> PrimitiveOde:
    """Scalar pivot optimality equation for one chain and active set."""
    active_set = frozenset(active_set)
    check_active_set(form, active_set)
    if not is_chain_separable(form.Kmat, form):
        raise ChainCouplingError(
            "stacked cost couples different chains; per-chain reduction unavailable")
    k = form.chains[chain]
    cost_op = pivot_cost_coeffs(form.k_block(chain), k)
    rhs = {}
    pins = []
    for row in sorted(active_set):
        entries = _chain_row_entries(form, row, chain)
        if not np.any(np.abs(entries) > ZERO_TOL):
            continue
        op = np.array([(-1.0) ** j * entries[j] for j in range(k + 1)])
        rhs[row] = op
        state_nz = np.nonzero(np.abs(entries[:k]) > ZERO_TOL)[0]
        if abs(entries[k]) <= ZERO_TOL and len(state_nz) == 1:
            j = int(state_nz[0])
            pins.append((j, form.eVec[row] / entries[j]))
    return PrimitiveOde(
        chain=chain, active_set=active_set, lhs_coeffs=cost_op,
        rhs_mu_coeffs=rhs, pinned_states=tuple(pins))


def _constrained_chain(form: BrunovskyForm, chain: int, row: int,
                       cost_op: np.ndarray) -> ChainPrimitive:
    """Arc structure when one row is held active on this chain."""
    k = form.chains[chain]
    entries = _chain_row_entries(form, row, chain)
    nz = np.nonzero(np.abs(entries) > ZERO_TOL)[0]
    if nz.size == 0:
        raise UnsupportedActiveSet(f"row {row} does not touch chain {chain}")
    h = int(nz[-1])
    row_op = entries[: h + 1].astype(float)
    e_r = form.eVec[row]

    if h == 0:
        traj_modes = ()
        traj_particular = ExpPoly.single(0.0, [e_r / entries[0]])
    else:
        basis = characteristic_roots(row_op)
        traj_modes = basis.modes
        traj_particular = solve_particular(row_op, ExpPoly.single(0.0, [e_r])) \
            if abs(e_r) > 0 else None

    mu_op = np.array([(-1.0) ** j * entries[j] for j in range(k + 1)])
    mu_nz = np.nonzero(np.abs(mu_op) > ZERO_TOL)[0]
    if mu_nz.size == 0:
        raise UnderdeterminedMultipliers(
            f"row {row} never reaches chain {chain}'s control")
    mu_order = int(mu_nz[-1])
    if mu_order == 0:
        mu_modes = ()
    else:
        mu_modes = characteristic_roots(mu_op[: mu_order + 1]).modes

    def mu_part_for(traj_expr: ExpPoly) -> ExpPoly:
        rhs = traj_expr.apply_operator(cost_op).scale(-1.0)
        if not rhs.terms:
            return ExpPoly.zero()
        return solve_particular(mu_op[: mu_order + 1], rhs)

    mu_parts = tuple(mu_part_for(mode_to_exppoly(m)) for m in traj_modes)
    mu_part_fixed = mu_part_for(traj_particular) if traj_particular is not None else None

    pins = []
    state_nz = np.nonzero(np.abs(entries[:k]) > ZERO_TOL)[0]
    if abs(entries[k]) <= ZERO_TOL and len(state_nz) == 1:
        j = int(state_nz[0])
        pins.append((j, e_r / entries[j]))
        pins.extend((jj, 0.0) for jj in range(j + 1, k))

    return ChainPrimitive(
        chain=chain, k=k, row=row, cost_op=cost_op,
        traj_modes=traj_modes, traj_particular=traj_particular,
        mu_op=mu_op, mu_modes=tuple(mu_modes), mu_parts=mu_parts,
        mu_part_fixed=mu_part_fixed, pinned_states=tuple(pins))


def derive_primitive(form: BrunovskyForm, active_set) -> MotionPrimitive:
    """Full per-chain arc structure for one active set."""
    active_set = frozenset(active_set)
    check_active_set(form, active_set)
    if not is_chain_separable(form.Kmat, form):
        raise ChainCouplingError(
            "stacked cost couples different chains; per-chain reduction unavailable")

    touched = {}
    for row in sorted(active_set):
        hit = [i for i in range(form.m)
               if np.any(np.abs(_chain_row_entries(form, row, i)) > ZERO_TOL)]
        if not hit:
            raise UnderdeterminedMultipliers(f"row {row} touches no chain")
        if len(hit) > 1:
            raise UnsupportedActiveSet(
                f"row {row} spans chains {hit}; single-chain rows only")
        touched.setdefault(hit[0], []).append(row)

    prim = MotionPrimitive(active_set=active_set)
    for i, k in enumerate(form.chains):
        cost_op = pivot_cost_coeffs(form.k_block(i), k)
        rows = touched.get(i, [])
        if not rows:
            basis = characteristic_roots(cost_op)
            prim.chains.append(ChainPrimitive(
                chain=i, k=k, row=None, cost_op=cost_op,
                traj_modes=basis.modes, traj_particular=None))
        elif len(rows) == 1:
            prim.chains.append(_constrained_chain(form, i, rows[0], cost_op))
        else:
            raise UnsupportedActiveSet(
                f"chain {i} carries {len(rows)} active rows; one per chain supported")
    return prim


def enumerate_primitives(form: BrunovskyForm, max_rows: int | None = None):
    """Derive one primitive per feasibility-pruned subset of constraint rows.

    Subsets with linearly dependent rows or contradictory pinned equalities
    are pruned; the pruning reason is recorded. Results are cached by the
    caller via PrimitiveCache if reuse is wanted.
    """
    c = form.c
    rows = range(c)
    pruned = []
    primitives = []
    limit = c if max_rows is None else min(c, max_rows)
    for size in range(limit + 1):
        for subset in combinations(rows, size):
            fs = frozenset(subset)
            try:
                check_active_set(form, fs)
            except (DependentActiveSet, InfeasibleActiveSet) as exc:
                pruned.append((fs, type(exc).__name__))
                continue
            primitives.append(derive_primitive(form, fs))
    return primitives, pruned


def multiplier_closed_form(form: BrunovskyForm, chain: int, active_set):
    """Closed-form multiplier structure for one chain (spec: mu elimination).

    Returns the ChainPrimitive whose mu_modes / mu_parts express mu in the
    arc's own mode basis. Empty active sets yield mu identically zero.
    """
    active_set = frozenset(active_set)
    if not active_set:
        prim = derive_primitive(form, frozenset())
        return prim.chains[chain]
    prim = derive_primitive(form, active_set)
    return prim.chains[chain]


def primitive_residual(struct: ChainPrimitive, traj_coeffs, mu_coeffs,
                       ts, ta: float, tb: float) -> float:
    """Sup-norm of the pivot optimality equation over sample times.

    Evaluates cost_op(y) + mu_op(mu) with the arc's analytic derivatives;
    solved arcs should sit at roundoff level.
    """
    ts = np.asarray(ts, dtype=float)
    order = len(struct.cost_op) - 1
    total = np.zeros_like(ts)
    for o, co in enumerate(struct.cost_op):
        if co == 0.0:
            continue
        for cval, mode in zip(traj_coeffs, struct.traj_modes):
            total += co * cval * mode.eval(ts, o, ta, tb)
        if struct.traj_particular is not None:
            total += co * struct.traj_particular.eval(ts, o, ta, tb)
    if struct.row is not None:
        mu_order = len(struct.mu_op) - 1
        for o, co in enumerate(struct.mu_op):
            if co == 0.0:
                continue
            for dval, mode in zip(mu_coeffs, struct.mu_modes):
                total += co * dval * mode.eval(ts, o, ta, tb)
            for cval, part in zip(traj_coeffs, struct.mu_parts):
                total += co * cval * part.eval(ts, o, ta, tb)
            if struct.mu_part_fixed is not None:
                total += co * struct.mu_part_fixed.eval(ts, o, ta, tb)
    return float(np.max(np.abs(total)))


def mu_value(struct: ChainPrimitive, traj_coeffs, mu_coeffs, t, ta, tb, order=0):
    """Multiplier value on the arc from its closed-form representation."""
    if struct.row is None:
        return np.zeros_like(np.asarray(t, dtype=float))
    total = np.zeros_like(np.asarray(t, dtype=float))
    for dval, mode in zip(mu_coeffs, struct.mu_modes):
        total = total + dval * mode.eval(t, order, ta, tb)
    for cval, part in zip(traj_coeffs, struct.mu_parts):
        total = total + cval * part.eval(t, order, ta, tb)
    if struct.mu_part_fixed is not None:
        total = total + struct.mu_part_fixed.eval(t, order, ta, tb)
    return total


class PrimitiveCache:
    """Versioned on-disk cache of derived primitives, keyed by active set."""

    VERSION = 1

    def __init__(self, form: BrunovskyForm):
        self.form = form
        self._store: dict = {}

    def get(self, active_set) -> MotionPrimitive:
        key = frozenset(active_set)
        if key not in self._store:
            self._store[key] = derive_primitive(self.form, key)
        return self._store[key]

    def to_json(self) -> str:
        payload = {"version": self.VERSION, "chains": list(self.form.chains),
                   "primitives": []}
        for key, prim in sorted(self._store.items(), key=lambda kv: sorted(kv[0])):
            payload["primitives"].append({
                "active_set": sorted(key),
                "bases": [[(m.sigma, m.omega, m.p, m.trig) for m in ch.traj_modes]
                          for ch in prim.chains],
                "cost_ops": [ch.cost_op.tolist() for ch in prim.chains],
            })
        return json.dumps(payload, indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def load(self, path) -> int:
        """Re-derive cached active sets, validating stored bases against the
        freshly derived roots (stale caches are rejected)."""
        data = json.loads(Path(path).read_text())
        if data.get("version") != self.VERSION:
            raise ValueError(f"unsupported cache version {data.get('version')}")
        if tuple(data.get("chains", ())) != tuple(self.form.chains):
            raise ValueError("cache was built for different chain lengths")
        count = 0
        for entry in data["primitives"]:
            key = frozenset(entry["active_set"])
            prim = derive_primitive(self.form, key)
            for ch, stored_modes, stored_op in zip(
                    prim.chains, entry["bases"], entry["cost_ops"]):
                op = np.asarray(stored_op, dtype=float)
                if not np.allclose(op, ch.cost_op, rtol=1e-12, atol=1e-12):
                    raise ValueError(f"cache mismatch for active set {sorted(key)}")
                for sigma, omega, p, trig in stored_modes:
                    defining = ch.cost_op if ch.is_free else None
                    if defining is not None:
                        lam = complex(sigma, omega)
                        scale = np.max(np.abs(defining)) * max(1.0, abs(lam)) ** (len(defining) - 1)
                        if abs(poly_eval(defining, lam)) > 1e-6 * scale:
                            raise ValueError(
                                f"cached mode {(sigma, omega, p)} fails the ODE residual")
            self._store[key] = prim
            count += 1
        return count
