"""Junction systems: joining motion primitives into optimal trajectories.

For a fixed sequence of constraint activations the unknown arc coefficients
enter every optimality condition linearly; only the junction times are
nonlinear. The solver therefore runs an outer root-find over junction times
around an exact inner linear solve:

  inner (fixed times): boundary conditions, state continuity, costate
  continuity orthogonal to the constraint atoms, touch identities;
  outer (one scalar per junction): Hamiltonian jump at touches, the
  control-level costate match at entries/exits of state-pinned arcs, the
  activation identity / multiplier-zero condition for control-row arcs.

Costate atoms follow the direct-adjoining convention: at a junction the
costate jumps only along the state part of the rows becoming active or
inactive, with one constant multiplier per row per junction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, root

from .brunovsky import BrunovskyForm
from .errors import (
    CountMismatch,
    IllConditioned,
    NoRoot,
    SingularBoundarySystem,
    UnsupportedActiveSet,
)
from .primitives import PrimitiveCache
from .tangency import TangencyStack, derive_tangency, instantaneous_stack
from .trajectory import Arc, Trajectory

COND_LIMIT = 1e12
RESIDUAL_TOL = 1e-8
SCAN_POINTS = 200
ZERO_TOL = 1e-12


@dataclass
class JunctionSpec:
    """One junction: an instantaneous touch or an interval entry/exit."""

    kind: str                       # "touch" | "entry" | "exit"
    row: int
    stack: TangencyStack | None = None
    time: float | None = None

    def __post_init__(self):
        if self.kind not in ("touch", "entry", "exit"):
            raise ValueError(f"unknown junction kind {self.kind!r}")


def touch_spec(form: BrunovskyForm, row: int) -> JunctionSpec:
    return JunctionSpec("touch", row, instantaneous_stack(derive_tangency(form, row)))


def interval_specs(form: BrunovskyForm, row: int) -> list[JunctionSpec]:
    st = derive_tangency(form, row)
    return [JunctionSpec("entry", row, st), JunctionSpec("exit", row, st)]


@dataclass
class JunctionSystem:
    """Assembled layout: arcs, unknown blocks, equation plan, counts."""

    form: BrunovskyForm
    cache: PrimitiveCache
    specs: list
    arc_sets: list
    affected: list                   # chains carrying junction unknowns
    counts: dict = field(default_factory=dict)
    bookkeeping: list = field(default_factory=list)

    @property
    def n_junctions(self) -> int:
        return len(self.specs)


def solve_unconstrained(form: BrunovskyForm, cache: PrimitiveCache | None = None) -> Trajectory:
    """Single-arc trajectory from the 2|s_i| boundary conditions per chain."""
    cache = cache or PrimitiveCache(form)
    prim = cache.get(frozenset())
    coeffs = []
    for i, k in enumerate(form.chains):
        view_modes = prim.chains[i].traj_modes
        rows = []
        rhs = []
        off = form.state_offset(i)
        for t, vec in ((0.0, form.s0), (form.T, form.sT)):
            for j in range(k):
                rows.append([m.eval(t, j, 0.0, form.T) for m in view_modes])
                rhs.append(vec[off + j])
        M = np.array(rows)
        b = np.array(rhs)
        sv = np.linalg.svd(M, compute_uv=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularBoundarySystem(
                f"chain {i} boundary system is singular", condition=cond)
        c = np.linalg.solve(M, b)
        c += np.linalg.solve(M, b - M @ c)
        coeffs.append(c)
    arc = Arc(primitive=prim, t_start=0.0, t_end=form.T,
              coeffs=coeffs, mu_coeffs=[np.zeros(0)] * form.m)
    return Trajectory(form=form, arcs=[arc], junction_times=[], junction_info=[])


def _row_chain(form: BrunovskyForm, row: int) -> int:
    hits = [i for i in range(form.m)
            if np.any(np.abs(form.Lmat[row, form.state_indices(i) + [form.control_index(i)]]) > ZERO_TOL)]
    if len(hits) != 1:
        raise UnsupportedActiveSet(f"row {row} touches chains {hits}; single-chain rows only")
    return hits[0]


def _atom_direction(form: BrunovskyForm, row: int, chain: int) -> np.ndarray:
    """State part of the row on its chain (the costate-jump direction)."""
    return form.Lmat[row, form.state_indices(chain)].copy()


def assemble(sequence, form: BrunovskyForm, cache: PrimitiveCache | None = None) -> JunctionSystem:
    """Build the junction system for an ordered activation sequence.

    Raises CountMismatch (with a per-category breakdown) when the inner
    linear system cannot be square or the outer residual count does not
    match the number of junction times.
    """
    cache = cache or PrimitiveCache(form)
    specs = list(sequence)
    active = frozenset()
    arc_sets = [active]
    for spec in specs:
        if spec.kind == "touch":
            if spec.row in active:
                raise UnsupportedActiveSet(f"touch of already-active row {spec.row}")
        elif spec.kind == "entry":
            if spec.row in active:
                raise UnsupportedActiveSet(f"re-entry of active row {spec.row}")
            active = active | {spec.row}
        else:
            if spec.row not in active:
                raise UnsupportedActiveSet(f"exit of inactive row {spec.row}")
            active = active - {spec.row}
        arc_sets.append(active)
    if arc_sets[-1]:
        raise UnsupportedActiveSet("sequence must end on an unconstrained arc")

    affected = sorted({_row_chain(form, s.row) for s in specs})
    system = JunctionSystem(form=form, cache=cache, specs=specs,
                            arc_sets=arc_sets, affected=affected)

    # count the inner system and outer residuals
    inner_rows = 0
    inner_cols = 0
    outer = 0
    for i in affected:
        inner_rows += 2 * form.chains[i]          # boundary
    for a, aset in enumerate(arc_sets):
        prim = cache.get(aset)
        for i in affected:
            st = prim.chains[i]
            inner_cols += st.n_traj + st.n_mu
    per_junction = []
    for spec in specs:
        chain = _row_chain(form, spec.row)
        k = form.chains[chain]
        stack = spec.stack or derive_tangency(form, spec.row)
        q = stack.q
        cont = sum(form.chains[i] for i in affected)
        cost_eqs = 0
        touch_eqs = 0
        held = 0
        for i in affected:
            ki = form.chains[i]
            if i != chain:
                cost_eqs += ki
                continue
            dvec = _atom_direction(form, spec.row, chain)
            if spec.kind == "touch":
                cost_eqs += ki - 1 if np.any(np.abs(dvec) > ZERO_TOL) else ki
                touch_eqs += 1
            else:
                if q == 0:
                    cost_eqs += ki        # no atom for control rows
                else:
                    cost_eqs += ki - 1 - (q - 1)
                    held += q - 1
        inner_rows += cont + cost_eqs + touch_eqs
        outer += max(held, 1)
        per_junction.append({
            "kind": spec.kind, "row": spec.row, "q": q,
            "continuity": cont, "costate": cost_eqs, "touch": touch_eqs,
            "outer": max(held, 1),
        })
    system.counts = {
        "inner_rows": inner_rows, "inner_cols": inner_cols,
        "outer_residuals": outer, "junction_times": len(specs),
        "per_junction": per_junction,
    }
    n, c = form.n, form.c
    system.bookkeeping = [{
        "unknowns": 2 * n + c + 1,
        "equations": {"state_continuity": n, "costate_jump": n,
                      "constraint": c, "hamiltonian": 1},
    } for _ in specs]
    if inner_rows != inner_cols or outer != len(specs):
        raise CountMismatch(
            f"junction system counts do not balance: inner {inner_rows} equations vs "
            f"{inner_cols} unknowns, outer {outer} residuals vs {len(specs)} times",
            breakdown=system.counts)
    return system


class _InnerSolve:
    """Linear solve of all arc coefficients at fixed junction times."""

    def __init__(self, system: JunctionSystem, times):
        self.system = system
        form = system.form
        self.times = list(times)
        bounds = [0.0] + self.times + [form.T]
        self.arc_bounds = [(bounds[i], bounds[i + 1]) for i in range(len(system.arc_sets))]
        self.prims = [system.cache.get(aset) for aset in system.arc_sets]
        self.base = solve_unconstrained(form, system.cache)

        self.layout = {}
        ncols = 0
        for a, prim in enumerate(self.prims):
            for i in system.affected:
                st = prim.chains[i]
                self.layout[(a, i, "traj")] = slice(ncols, ncols + st.n_traj)
                ncols += st.n_traj
                self.layout[(a, i, "mu")] = slice(ncols, ncols + st.n_mu)
                ncols += st.n_mu
        self.ncols = ncols
        self.views = {}
        for a, prim in enumerate(self.prims):
            ta, tb = self.arc_bounds[a]
            for i in system.affected:
                arc = Arc(prim, ta, tb, None, None)
                self.views[(a, i)] = arc.view(form, i)
        self.solution = None
        self.cond = None
        self.linear_residual = None

    def _add(self, rows, rhs, a, i, row_t, row_m, const, value, sign=1.0):
        vec = np.zeros(self.ncols)
        vec[self.layout[(a, i, "traj")]] = sign * row_t
        vec[self.layout[(a, i, "mu")]] = sign * row_m
        rows.append(vec)
        rhs.append(value - sign * const)

    def _add_pair(self, rows, rhs, aL, aR, i, make_row, t):
        """Continuity-style equation: left expression minus right = 0."""
        vec = np.zeros(self.ncols)
        row_t, row_m, cL = make_row(self.views[(aL, i)], t)
        vec[self.layout[(aL, i, "traj")]] = row_t
        vec[self.layout[(aL, i, "mu")]] = row_m
        row_t, row_m, cR = make_row(self.views[(aR, i)], t)
        vec[self.layout[(aR, i, "traj")]] -= row_t
        vec[self.layout[(aR, i, "mu")]] -= row_m
        rows.append(vec)
        rhs.append(cR - cL)

    def solve(self):
        system = self.system
        form = system.form
        rows, rhs = [], []
        # boundary conditions on affected chains
        last = len(self.prims) - 1
        for i in system.affected:
            off = form.state_offset(i)
            for j in range(form.chains[i]):
                rt, rm, cc = self.views[(0, i)].state_row(0.0, j)
                self._add(rows, rhs, 0, i, rt, rm, cc, form.s0[off + j])
                rt, rm, cc = self.views[(last, i)].state_row(form.T, j)
                self._add(rows, rhs, last, i, rt, rm, cc, form.sT[off + j])

        for jn, spec in enumerate(system.specs):
            t = self.times[jn]
            aL, aR = jn, jn + 1
            chain = _row_chain(form, spec.row)
            for i in system.affected:
                ki = form.chains[i]
                for j in range(ki):
                    self._add_pair(rows, rhs, aL, aR, i,
                                   lambda v, tt, _j=j: v.state_row(tt, _j), t)
                if i != chain:
                    for j in range(ki):
                        self._add_pair(rows, rhs, aL, aR, i,
                                       lambda v, tt, _j=j: v.costate_row(tt, _j), t)
                    continue
                dvec = _atom_direction(form, spec.row, chain)
                stack = spec.stack or derive_tangency(form, spec.row)
                q = stack.q
                has_atom = np.any(np.abs(dvec) > ZERO_TOL) and (spec.kind == "touch" or q >= 1)
                if not has_atom:
                    keep = list(range(ki))
                else:
                    jstar = int(np.argmax(np.abs(dvec)))
                    if spec.kind == "touch":
                        keep = [j for j in range(ki) if j != jstar]
                    else:
                        held = set(range(jstar + 1, jstar + q))
                        keep = [j for j in range(ki) if j != jstar and j not in held]
                for j in keep:
                    if has_atom and abs(dvec[j]) > ZERO_TOL:
                        jstar = int(np.argmax(np.abs(dvec)))
                        ratio = dvec[j] / dvec[jstar]

                        def proj_row(v, tt, _j=j, _r=ratio, _js=jstar):
                            rt1, rm1, c1 = v.costate_row(tt, _j)
                            rt2, rm2, c2 = v.costate_row(tt, _js)
                            return rt1 - _r * rt2, rm1 - _r * rm2, c1 - _r * c2

                        self._add_pair(rows, rhs, aL, aR, i, proj_row, t)
                    else:
                        self._add_pair(rows, rhs, aL, aR, i,
                                       lambda v, tt, _j=j: v.costate_row(tt, _j), t)
                if spec.kind == "touch":
                    entries = form.Lmat[spec.row,
                                        form.state_indices(chain) + [form.control_index(chain)]]
                    vec_t = np.zeros(self.ncols)
                    const = 0.0
                    view = self.views[(aL, chain)]
                    rowacc_t = np.zeros(view.struct.n_traj)
                    rowacc_m = np.zeros(view.struct.n_mu)
                    for lev, w in enumerate(entries):
                        if abs(w) <= ZERO_TOL:
                            continue
                        rt, rm, cc = view.state_row(t, lev)
                        rowacc_t += w * rt
                        rowacc_m += w * rm
                        const += w * cc
                    self._add(rows, rhs, aL, chain, rowacc_t, rowacc_m, const,
                              float(form.eVec[spec.row]))

        M = np.array(rows)
        b = np.array(rhs)
        if M.shape[0] != M.shape[1]:
            raise CountMismatch(
                f"inner system is {M.shape[0]}x{M.shape[1]}",
                breakdown=self.system.counts)
        sv = np.linalg.svd(M, compute_uv=False)
        self.cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if not np.isfinite(self.cond) or self.cond > COND_LIMIT:
            raise IllConditioned(f"inner junction solve condition {self.cond:.2e}")
        sol, *_ = np.linalg.lstsq(M, b, rcond=None)
        sol += np.linalg.lstsq(M, b - M @ sol, rcond=None)[0]
        self.linear_residual = float(np.max(np.abs(b - M @ sol))) if b.size else 0.0
        self.solution = sol
        return sol

    def arc_coeffs(self, a: int, i: int):
        system = self.system
        if i in system.affected:
            return (self.solution[self.layout[(a, i, "traj")]],
                    self.solution[self.layout[(a, i, "mu")]])
        return self.base.arcs[0].coeffs[i], np.zeros(0)

    def trajectory(self) -> Trajectory:
        system = self.system
        form = system.form
        arcs = []
        for a, prim in enumerate(self.prims):
            ta, tb = self.arc_bounds[a]
            coeffs, mus = [], []
            for i in range(form.m):
                cc, mm = self.arc_coeffs(a, i)
                coeffs.append(np.asarray(cc, dtype=float))
                mus.append(np.asarray(mm, dtype=float))
            arcs.append(Arc(prim, ta, tb, coeffs, mus))
        info = []
        for jn, spec in enumerate(system.specs):
            t = self.times[jn]
            chain = _row_chain(form, spec.row)
            dvec = _atom_direction(form, spec.row, chain)
            pi = None
            if np.any(np.abs(dvec) > ZERO_TOL):
                jstar = int(np.argmax(np.abs(dvec)))
                vL = self.views[(jn, chain)]
                vR = self.views[(jn + 1, chain)]
                cL, mL = self.arc_coeffs(jn, chain)
                cR, mR = self.arc_coeffs(jn + 1, chain)
                lamL = float(vL.costate(cL, mL, t, jstar))
                lamR = float(vR.costate(cR, mR, t, jstar))
                pi = (lamL - lamR) / dvec[jstar]
            info.append({"kind": spec.kind, "row": spec.row, "time": t, "pi": pi,
                         "condition": self.cond, "linear_residual": self.linear_residual})
        return Trajectory(form=form, arcs=arcs,
                          junction_times=list(self.times), junction_info=info)

    def outer_residuals(self) -> np.ndarray:
        system = self.system
        form = system.form
        out = []
        for jn, spec in enumerate(system.specs):
            t = self.times[jn]
            aL, aR = jn, jn + 1
            chain = _row_chain(form, spec.row)
            stack = spec.stack or derive_tangency(form, spec.row)
            q = stack.q
            cL, mL = self.arc_coeffs(aL, chain)
            cR, mR = self.arc_coeffs(aR, chain)
            vL, vR = self.views[(aL, chain)], self.views[(aR, chain)]
            if spec.kind == "touch" or (q == 1 and spec.kind in ("entry", "exit")):
                hL = sum(self.views[(aL, i)].hamiltonian(*self.arc_coeffs(aL, i), t)
                         for i in system.affected)
                hR = sum(self.views[(aR, i)].hamiltonian(*self.arc_coeffs(aR, i), t)
                         for i in system.affected)
                out.append(float(hL - hR))
            elif q == 0:
                entries = form.Lmat[spec.row,
                                    form.state_indices(chain) + [form.control_index(chain)]]
                if spec.kind == "entry":
                    val = sum(w * float(vL.value(cL, t, lev))
                              for lev, w in enumerate(entries) if abs(w) > ZERO_TOL)
                    out.append(val - float(form.eVec[spec.row]))
                else:
                    out.append(float(vL.mu(cL, mL, t)))
            else:
                dvec = _atom_direction(form, spec.row, chain)
                jstar = int(np.argmax(np.abs(dvec)))
                for j in range(jstar + 1, jstar + q):
                    lamL = float(vL.costate(cL, mL, t, j))
                    lamR = float(vR.costate(cR, mR, t, j))
                    if abs(dvec[j]) > ZERO_TOL:
                        lamL -= dvec[j] / dvec[jstar] * float(vL.costate(cL, mL, t, jstar))
                        lamR -= dvec[j] / dvec[jstar] * float(vR.costate(cR, mR, t, jstar))
                    out.append(lamL - lamR)
        return np.array(out)


def _evaluate_times(system: JunctionSystem, times) -> tuple[np.ndarray, _InnerSolve]:
    solver = _InnerSolve(system, times)
    solver.solve()
    return solver.outer_residuals(), solver


def max_violation(traj: Trajectory, grid: int = 2000) -> float:
    if traj.form.c == 0:
        return -np.inf
    ts = np.linspace(0.0, traj.T, grid)
    return float(np.max(traj.constraint_values(ts)))


def solve_junctions(system: JunctionSystem, initial_guess=None,
                    scan_points: int = SCAN_POINTS,
                    feasibility_tol: float = 1e-8) -> Trajectory:
    """Root-find junction times, solving coefficients exactly at each trial.

    Single junctions: coarse scan (scan_points candidates) for sign changes
    of the matching residual, then bracketed refinement; every root is
    solved and the best feasible trajectory (by energy) is returned. Multiple
    junctions: seeded quasi-Newton on the stacked residuals, seeded by the
    single-junction solution (nested continuation) or the caller's guess.
    """
    form = system.form
    if system.n_junctions == 0:
        return solve_unconstrained(form, system.cache)

    if system.n_junctions == 1:
        lo, hi = 1e-3 * form.T, (1.0 - 1e-3) * form.T

        def resid(t1: float) -> float:
            return float(_evaluate_times(system, [t1])[0][0])

        ts = np.linspace(lo, hi, scan_points)
        vals = np.array([resid(t) for t in ts])
        brackets = [(ts[i], ts[i + 1]) for i in range(len(ts) - 1)
                    if np.isfinite(vals[i]) and np.isfinite(vals[i + 1])
                    and vals[i] * vals[i + 1] < 0]
        if not brackets:
            raise NoRoot("matching residual has no sign change on the scan grid")
        candidates = []
        for a, b in brackets:
            t_root = brentq(resid, a, b, xtol=1e-12, rtol=1e-14)
            res, solver = _evaluate_times(system, [t_root])
            if abs(res[0]) > RESIDUAL_TOL * max(1.0, abs(vals).max()):
                continue
            traj = solver.trajectory()
            candidates.append((max_violation(traj), traj.energy(), traj))
        if not candidates:
            raise NoRoot("no bracketed root refined below the residual tolerance")
        feasible = [c for c in candidates if c[0] <= feasibility_tol]
        pool = feasible or candidates
        pool.sort(key=lambda c: c[1])
        return pool[0][2]

    # multiple junctions: continuation seeds, then a damped quasi-Newton solve
    seeds = []
    if initial_guess is not None:
        seeds.append(np.asarray(initial_guess, dtype=float))
    if system.n_junctions == 2 and not seeds:
        row = system.specs[0].row
        try:
            single = assemble([touch_spec(form, row)], form, system.cache)
            t_touch = solve_junctions(single).junction_times[0]
            for frac in (0.05, 0.15, 0.3):
                d = frac * form.T / 2
                seeds.append(np.array([max(t_touch - d, 1e-3 * form.T),
                                       min(t_touch + d, (1 - 1e-3) * form.T)]))
        except (NoRoot, CountMismatch, UnsupportedActiveSet):
            pass
    if not seeds:
        qs = np.linspace(0.25, 0.75, system.n_junctions + 2)[1:-1]
        seeds.append(qs * form.T)

    def penalized(times: np.ndarray) -> np.ndarray:
        pen = 0.0
        lo, hi = 1e-3 * form.T, (1.0 - 1e-3) * form.T
        tt = np.clip(times, lo, hi)
        for i in range(len(tt) - 1):
            if tt[i + 1] - tt[i] < 1e-6 * form.T:
                pen += 1.0 + (tt[i] - tt[i + 1])
        pen += float(np.sum(np.abs(times - tt)))
        try:
            res, _ = _evaluate_times(system, list(np.sort(tt)))
        except (IllConditioned, CountMismatch):
            return np.full(system.n_junctions, 1e6 * (1.0 + pen))
        return res + 1e6 * pen * np.sign(res + 1e-30)

    best = None
    for seed in seeds:
        sol = root(penalized, np.sort(seed), method="hybr", tol=1e-12)
        tt = np.sort(np.clip(sol.x, 1e-3 * form.T, (1 - 1e-3) * form.T))
        try:
            res, solver = _evaluate_times(system, list(tt))
        except (IllConditioned, CountMismatch):
            continue
        if np.max(np.abs(res)) > RESIDUAL_TOL:
            continue
        traj = solver.trajectory()
        key = (max_violation(traj) > 1e-8, traj.energy())
        if best is None or key < best[0]:
            best = (key, traj)
    if best is None:
        raise NoRoot("no junction-time vector drove the matching residuals to zero")
    return best[1]
