"""Piecewise-analytic trajectories: arcs, evaluation, costates, energy.

An Arc is one motion primitive with solved coefficients on a time interval;
a Trajectory is an ordered list of arcs with junction times. States never
jump at junctions; controls may. Evaluation is right-continuous at
junctions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from .brunovsky import BrunovskyForm
from .errors import OutOfHorizon
from .primitives import ChainPrimitive, MotionPrimitive, mu_value

ENERGY_ABS_TOL = 1e-6


def costate_tables(k_block: np.ndarray, struct: ChainPrimitive):
    """Coefficient tables expressing costates through pivot/mu derivatives.

    lamY[j][o]: weight of y^(o) in the level-j costate; lamMu[j][o]: weight
    of mu^(o). Level-j costate = partial sum of the optimality expansion
    from derivative order j+1 upward.
    """
    k = struct.k
    lamY = np.zeros((k, 2 * k))
    lamMu = np.zeros((k, k + 1))
    entries = None
    if struct.mu_op is not None:
        entries = np.array([(-1.0) ** j * struct.mu_op[j] for j in range(k + 1)])
    for j in range(k):
        for n in range(j + 1, k + 1):
            sign = (-1.0) ** (n - j - 1)
            shift = n - j - 1
            for npr in range(k + 1):
                lamY[j, npr + shift] += sign * 2.0 * k_block[npr, n]
            if entries is not None:
                lamMu[j, shift] += sign * entries[n]
    return lamY, lamMu


class ChainArcView:
    """Evaluation helper binding one chain's primitive structure to an arc."""

    def __init__(self, struct: ChainPrimitive, k_block: np.ndarray,
                 ta: float, tb: float):
        self.struct = struct
        self.k_block = k_block
        self.ta = ta
        self.tb = tb
        self.lamY, self.lamMu = costate_tables(k_block, struct)

    # -- linear rows over (traj coeffs | mu coeffs), plus constant part --

    def state_row(self, t: float, level: int):
        s = self.struct
        row_t = np.array([m.eval(t, level, self.ta, self.tb) for m in s.traj_modes])
        row_m = np.zeros(s.n_mu)
        const = 0.0
        if s.traj_particular is not None:
            const = float(s.traj_particular.eval(t, level, self.ta, self.tb))
        return row_t, row_m, const

    def mu_row(self, t: float, order: int = 0):
        s = self.struct
        row_t = np.array([p.eval(t, order, self.ta, self.tb) for p in s.mu_parts]) \
            if s.mu_parts else np.zeros(s.n_traj)
        row_m = np.array([m.eval(t, order, self.ta, self.tb) for m in s.mu_modes])
        const = 0.0
        if s.mu_part_fixed is not None:
            const = float(s.mu_part_fixed.eval(t, order, self.ta, self.tb))
        return row_t, row_m, const

    def costate_row(self, t: float, j: int):
        s = self.struct
        row_t = np.zeros(s.n_traj)
        row_m = np.zeros(s.n_mu)
        const = 0.0
        for o in range(self.lamY.shape[1]):
            w = self.lamY[j, o]
            if w == 0.0:
                continue
            rt, _, cc = self.state_row(t, o)
            row_t += w * rt
            const += w * cc
        if s.row is not None:
            for o in range(self.lamMu.shape[1]):
                w = self.lamMu[j, o]
                if w == 0.0:
                    continue
                rt, rm, cc = self.mu_row(t, o)
                row_t += w * rt
                row_m += w * rm
                const += w * cc
        return row_t, row_m, const

    # -- numeric evaluation for solved coefficients --

    def value(self, coeffs, t, level: int):
        s = self.struct
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for cval, mode in zip(coeffs, s.traj_modes):
            out = out + cval * mode.eval(t, level, self.ta, self.tb)
        if s.traj_particular is not None:
            out = out + s.traj_particular.eval(t, level, self.ta, self.tb)
        return out

    def mu(self, coeffs, mu_coeffs, t, order: int = 0):
        return mu_value(self.struct, coeffs, mu_coeffs, t, self.ta, self.tb, order)

    def costate(self, coeffs, mu_coeffs, t, j: int):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for o in range(self.lamY.shape[1]):
            w = self.lamY[j, o]
            if w != 0.0:
                out = out + w * self.value(coeffs, t, o)
        if self.struct.row is not None:
            for o in range(self.lamMu.shape[1]):
                w = self.lamMu[j, o]
                if w != 0.0:
                    out = out + w * self.mu(coeffs, mu_coeffs, t, o)
        return out

    def running_cost(self, coeffs, t):
        """z_i' K_i z_i for this chain (the constraint term vanishes on-shell)."""
        k = self.struct.k
        t = np.asarray(t, dtype=float)
        levels = [self.value(coeffs, t, o) for o in range(k + 1)]
        out = np.zeros_like(t)
        for a in range(k + 1):
            for b in range(k + 1):
                w = self.k_block[a, b]
                if w != 0.0:
                    out = out + w * levels[a] * levels[b]
        return out

    def hamiltonian(self, coeffs, mu_coeffs, t):
        """Chain contribution: sum_j lambda_j y^{(j+1)} - running cost."""
        k = self.struct.k
        t = np.asarray(t, dtype=float)
        out = -self.running_cost(coeffs, t)
        for j in range(k):
            out = out + self.costate(coeffs, mu_coeffs, t, j) * self.value(coeffs, t, j + 1)
        return out


@dataclass
class Arc:
    """One primitive with solved coefficients on [t_start, t_end]."""

    primitive: MotionPrimitive
    t_start: float
    t_end: float
    coeffs: list                      # per chain trajectory coefficient arrays
    mu_coeffs: list                   # per chain multiplier coefficient arrays

    def view(self, form: BrunovskyForm, chain: int) -> ChainArcView:
        return ChainArcView(self.primitive.chains[chain], form.k_block(chain),
                            self.t_start, self.t_end)

    @property
    def active_set(self) -> frozenset:
        return self.primitive.active_set


@dataclass
class Trajectory:
    """Ordered arcs spanning [0, T] with junction metadata."""

    form: BrunovskyForm
    arcs: list
    junction_times: list = field(default_factory=list)
    junction_info: list = field(default_factory=list)
    _views: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return self.arcs[-1].t_end

    def _view(self, arc_idx: int, chain: int) -> ChainArcView:
        key = (arc_idx, chain)
        if key not in self._views:
            self._views[key] = self.arcs[arc_idx].view(self.form, chain)
        return self._views[key]

    def arc_index(self, t: float) -> int:
        if t < -1e-12 or t > self.T + 1e-12:
            raise OutOfHorizon(f"t={t} outside [0, {self.T}]")
        for idx, arc in enumerate(self.arcs):
            if t < arc.t_end or idx == len(self.arcs) - 1:
                return idx
        return len(self.arcs) - 1

    def chain_value(self, chain: int, t, level: int):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(t_arr)
        for i, ti in enumerate(t_arr):
            idx = self.arc_index(ti)
            view = self._view(idx, chain)
            out[i] = view.value(self.arcs[idx].coeffs[chain], ti, level)
        return out if np.ndim(t) else float(out[0])

    def evaluate(self, t: float) -> np.ndarray:
        """Stacked point z = [s; a] at time t (right-continuous at junctions)."""
        form = self.form
        z = np.zeros(form.n + form.m)
        idx = self.arc_index(t)
        arc = self.arcs[idx]
        for i, k in enumerate(form.chains):
            view = self._view(idx, i)
            off = form.state_offset(i)
            for j in range(k):
                z[off + j] = view.value(arc.coeffs[i], t, j)
            z[form.control_index(i)] = view.value(arc.coeffs[i], t, k)
        return z

    def evaluate_original(self, t: float):
        z = self.evaluate(t)
        s, a = z[: self.form.n], z[self.form.n:]
        x, u = self.form.to_original(s[None, :], a[None, :])
        return x[0], u[0]

    def sample(self, ts) -> np.ndarray:
        return np.array([self.evaluate(t) for t in np.asarray(ts, dtype=float)])

    def costate(self, t: float, chain: int, j: int) -> float:
        idx = self.arc_index(t)
        arc = self.arcs[idx]
        view = self._view(idx, chain)
        return float(view.costate(arc.coeffs[chain], arc.mu_coeffs[chain], t, j))

    def multiplier(self, t: float, row: int) -> float:
        """Closed-form mu_row(t); zero when the row is inactive at t."""
        idx = self.arc_index(t)
        arc = self.arcs[idx]
        if row not in arc.active_set:
            return 0.0
        for i in range(self.form.m):
            st = arc.primitive.chains[i]
            if st.row == row:
                view = self._view(idx, i)
                return float(view.mu(arc.coeffs[i], arc.mu_coeffs[i], t))
        return 0.0

    def hamiltonian(self, t: float, chains=None) -> float:
        idx = self.arc_index(t)
        arc = self.arcs[idx]
        chains = range(self.form.m) if chains is None else chains
        total = 0.0
        for i in chains:
            view = self._view(idx, i)
            total += float(view.hamiltonian(arc.coeffs[i], arc.mu_coeffs[i], t))
        return total

    def energy(self) -> float:
        """Integral of z'Kz by adaptive quadrature, arc by arc."""
        total = 0.0
        epsabs = ENERGY_ABS_TOL * self.T / max(len(self.arcs), 1)
        for idx, arc in enumerate(self.arcs):
            views = [self._view(idx, i) for i in range(self.form.m)]

            def integrand(t, _arc=arc, _views=views):
                return sum(float(v.running_cost(_arc.coeffs[i], t))
                           for i, v in enumerate(_views))

            val, _ = quad(integrand, arc.t_start, arc.t_end,
                          epsabs=epsabs, epsrel=1e-11, limit=400)
            total += val
        return total

    def constraint_values(self, ts) -> np.ndarray:
        """Rows of Lz - e at sample times (negative = satisfied)."""
        Z = self.sample(ts)
        return Z @ self.form.Lmat.T - self.form.eVec

    def to_csv(self, path, samples: int = 2000) -> None:
        form = self.form
        sn = list(form.state_names) or [f"s{i}" for i in range(form.n)]
        cn = list(form.control_names) or [f"a{i}" for i in range(form.m)]
        ts = np.linspace(0.0, self.T, samples)
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + sn + cn + ["arc_index", "active_set"])
            for t in ts:
                idx = self.arc_index(t)
                z = self.evaluate(t)
                act = "|".join(str(r) for r in sorted(self.arcs[idx].active_set))
                writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in z] + [idx, act])
