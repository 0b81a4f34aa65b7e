"""Relative degree and tangency stacks for constraint rows.

A constraint row enters junction conditions through the stack of its time
derivatives along the canonical dynamics: row, row*A, ..., row*A^{q-1},
where q is the first order at which the control coefficient row*A^{q-1}*B
is nonzero. Interval activations use the full stack; instantaneous touches
only its first row.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .brunovsky import BrunovskyForm
from .errors import NoControlAuthority

CONTROL_TOL = 1e-10


@dataclass(frozen=True)
class TangencyStack:
    """Derivative stack of one constraint row.

    rows: q state-space row vectors (c'A^j for j = 0..q-1); the constraint
    offset applies to row 0 only (value c'A^0 s - e). controlRow carries the
    reduced, control-explicit derivative: state part c'A^q and control part
    c'A^{q-1}B (for q = 0, the original row's C and D parts).
    """

    constraint: int
    q: int
    rows: tuple                 # tuple of state row vectors, length q
    offset: float               # e_c, applied to rows[0]
    control_state: np.ndarray   # state part of the reduced constraint
    control_input: np.ndarray   # control part of the reduced constraint

    def residuals(self, s: np.ndarray) -> np.ndarray:
        """Stack values at a state sample: first row offset by e_c."""
        if self.q == 0:
            return np.zeros(0)
        vals = np.array([row @ s for row in self.rows])
        vals[0] -= self.offset
        return vals


def derive_tangency(form: BrunovskyForm, row: int) -> TangencyStack:
    """Differentiate one constraint row along the dynamics until the control
    appears with a nonzero coefficient."""
    A, B = form.canonical_matrices()
    c_state = form.Lmat[row, : form.n].copy()
    d_ctrl = form.Lmat[row, form.n:].copy()
    e_c = float(form.eVec[row])
    scale = max(1.0, float(np.max(np.abs(form.Lmat[row]))))

    if np.any(np.abs(d_ctrl) > CONTROL_TOL * scale):
        return TangencyStack(
            constraint=row, q=0, rows=(), offset=e_c,
            control_state=c_state, control_input=d_ctrl)

    rows = []
    current = c_state
    for q in range(1, form.n + 1):
        rows.append(current.copy())
        ctrl = current @ B
        if np.any(np.abs(ctrl) > CONTROL_TOL * scale):
            return TangencyStack(
                constraint=row, q=q, rows=tuple(rows), offset=e_c,
                control_state=current @ A, control_input=ctrl)
        current = current @ A
    raise NoControlAuthority(
        f"constraint row {row} never reaches the control within n={form.n} derivatives")


def instantaneous_stack(stack: TangencyStack) -> TangencyStack:
    """Truncate to the first row: the form used when a constraint is active
    only at an isolated instant."""
    if stack.q <= 1:
        return stack
    return replace(stack, q=1, rows=(stack.rows[0],))
