"""Exponential-polynomial mode algebra.

Solution bases of constant-coefficient linear ODEs are spanned by modes
t^p e^{sigma t} cos(omega t) / sin(omega t). Modes are evaluated relative to
an arc [ta, tb]: growing exponentials are anchored at the right end and
decaying ones at the left so every basis function stays bounded by the arc
length scale, which keeps boundary/junction systems well conditioned.

ExpPoly is the workhorse for closed-form manipulation: a finite sum of
e^{lam (t - anchor)} * poly(t - ta) terms over complex lam, closed under
differentiation and under applying/solving constant-coefficient operators.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

ROOT_CLUSTER_TOL = 1e-7


def _anchor(re_lam: float, ta: float, tb: float) -> float:
    return tb if re_lam > 0 else ta


@dataclass(frozen=True)
class Mode:
    """One real basis function (t-ta)^p e^{sigma(t-anchor)} trig(omega(t-anchor)).

    trig is "cos" or "sin"; for omega == 0 only "cos" (i.e. no oscillation) is
    used. The anchor is tb for growing modes (sigma > 0) and ta otherwise.
    """

    sigma: float
    omega: float = 0.0
    p: int = 0
    trig: str = "cos"

    @property
    def lam(self) -> complex:
        return complex(self.sigma, self.omega)

    def eval(self, t, order: int, ta: float, tb: float):
        """order-th time derivative at t (scalar or array)."""
        t = np.asarray(t, dtype=float)
        ac = _anchor(self.sigma, ta, tb)
        lam = self.lam
        tau = t - ta
        E = np.exp(lam * (t - ac))
        val = np.zeros_like(t, dtype=complex)
        for i in range(min(order, self.p) + 1):
            coef = comb(order, i) * factorial(self.p) / factorial(self.p - i)
            val = val + coef * tau ** (self.p - i) * lam ** (order - i) * E
        if self.omega == 0.0:
            return val.real
        return val.imag if self.trig == "sin" else val.real


def eval_basis(modes, t, order: int, ta: float, tb: float) -> np.ndarray:
    """Row of mode derivative values: one column per mode."""
    return np.array([m.eval(t, order, ta, tb) for m in modes], dtype=float)


def cluster_roots(roots: np.ndarray, tol: float = ROOT_CLUSTER_TOL):
    """Group numerically coincident roots; returns [(root, multiplicity)].

    Clustering is relative to max(1, |root|); complex clusters with tiny
    imaginary part collapse to real roots. Conjugate symmetry is restored by
    averaging.
    """
    roots = sorted(roots, key=lambda z: (round(z.real, 9), round(z.imag, 9)))
    clusters = []
    for r in roots:
        placed = False
        for cl in clusters:
            center = np.mean(cl)
            if abs(r - center) <= tol * max(1.0, abs(center)):
                cl.append(r)
                placed = True
                break
        if not placed:
            clusters.append([r])
    out = []
    for cl in clusters:
        center = complex(np.mean(cl))
        if abs(center.imag) <= tol * max(1.0, abs(center)):
            center = complex(center.real, 0.0)
        out.append((center, len(cl)))
    return out


def modes_from_roots(clustered) -> list[Mode]:
    """Real mode list from clustered roots; conjugate pairs become cos/sin pairs."""
    modes = []
    seen_conj = set()
    for lam, mult in clustered:
        if lam.imag < 0:
            continue  # handled with its conjugate
        if lam.imag > 0:
            seen_conj.add(lam)
            for p in range(mult):
                modes.append(Mode(lam.real, lam.imag, p, "cos"))
                modes.append(Mode(lam.real, lam.imag, p, "sin"))
        else:
            for p in range(mult):
                modes.append(Mode(lam.real, 0.0, p, "cos"))
    return modes


def poly_roots(coeffs_ascending: np.ndarray):
    """Roots (with multiplicity clustering) of sum_o c_o lambda^o.

    Uses companion-matrix eigenvalues (numpy.roots); each clustered root is
    checked by direct evaluation of the polynomial.
    """
    c = np.asarray(coeffs_ascending, dtype=float)
    nz = np.nonzero(np.abs(c) > 0)[0]
    if nz.size == 0:
        raise ValueError("zero polynomial")
    deg = nz[-1]
    if deg == 0:
        return []
    cc = c[: deg + 1]
    roots = np.roots(cc[::-1])
    return cluster_roots(roots)


def poly_eval(coeffs_ascending, lam: complex) -> complex:
    out = 0.0 + 0.0j
    for co in reversed(np.asarray(coeffs_ascending, dtype=float)):
        out = out * lam + co
    return out


class ExpPoly:
    """Finite sum over complex lam of e^{lam (t-anchor)} * poly(t - ta)."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        # terms: dict keyed by rounded lam -> (lam, coeff ndarray ascending in (t-ta))
        self.terms = dict(terms or {})

    @staticmethod
    def _key(lam: complex):
        return (round(lam.real, 12), round(lam.imag, 12))

    @classmethod
    def zero(cls) -> "ExpPoly":
        return cls()

    @classmethod
    def single(cls, lam: complex, coeffs) -> "ExpPoly":
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=complex))
        return cls({cls._key(lam): (complex(lam), coeffs)})

    def add_term(self, lam: complex, coeffs) -> None:
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=complex))
        key = self._key(lam)
        if key in self.terms:
            old_lam, old = self.terms[key]
            size = max(len(old), len(coeffs))
            merged = np.zeros(size, dtype=complex)
            merged[: len(old)] += old
            merged[: len(coeffs)] += coeffs
            self.terms[key] = (old_lam, merged)
        else:
            self.terms[key] = (complex(lam), coeffs.copy())

    def __add__(self, other: "ExpPoly") -> "ExpPoly":
        out = ExpPoly({k: (l, c.copy()) for k, (l, c) in self.terms.items()})
        for _, (lam, coeffs) in other.terms.items():
            out.add_term(lam, coeffs)
        return out

    def scale(self, alpha) -> "ExpPoly":
        return ExpPoly({k: (l, alpha * c) for k, (l, c) in self.terms.items()})

    def differentiate(self) -> "ExpPoly":
        out = ExpPoly()
        for _, (lam, coeffs) in self.terms.items():
            dc = lam * coeffs
            if len(coeffs) > 1:
                dc = dc.copy()
                dc[:-1] += coeffs[1:] * np.arange(1, len(coeffs))
            out.add_term(lam, dc)
        return out

    def derivative(self, order: int) -> "ExpPoly":
        out = self
        for _ in range(order):
            out = out.differentiate()
        return out

    def apply_operator(self, op_coeffs) -> "ExpPoly":
        """sum_r op[r] d^r applied to self."""
        out = ExpPoly()
        cur = self
        for r, co in enumerate(np.asarray(op_coeffs, dtype=float)):
            if r > 0:
                cur = cur.differentiate()
            if co != 0.0:
                for _, (lam, coeffs) in cur.terms.items():
                    out.add_term(lam, co * coeffs)
        return out

    def eval(self, t, order: int, ta: float, tb: float):
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t, dtype=complex)
        src = self.derivative(order) if order else self
        for _, (lam, coeffs) in src.terms.items():
            ac = _anchor(lam.real, ta, tb)
            E = np.exp(lam * (t - ac))
            tau = t - ta
            pol = np.zeros_like(t, dtype=complex)
            for q in reversed(range(len(coeffs))):
                pol = pol * tau + coeffs[q]
            total = total + pol * E
        return total.real


def mode_to_exppoly(mode: Mode) -> ExpPoly:
    """Complex representation whose .eval equals the real mode exactly.

    cos modes: (f + conj)/2; sin modes: (f - conj)/(2i); real modes as-is.
    """
    lam = mode.lam
    coeffs = np.zeros(mode.p + 1, dtype=complex)
    if mode.omega == 0.0:
        coeffs[mode.p] = 1.0
        return ExpPoly.single(lam, coeffs)
    out = ExpPoly()
    if mode.trig == "cos":
        chalf, chalf_conj = 0.5, 0.5
    else:
        chalf, chalf_conj = -0.5j, 0.5j
    coeffs[mode.p] = chalf
    out.add_term(lam, coeffs)
    coeffs2 = np.zeros(mode.p + 1, dtype=complex)
    coeffs2[mode.p] = chalf_conj
    out.add_term(lam.conjugate(), coeffs2)
    return out


def solve_particular(op_coeffs, rhs: ExpPoly, tol: float = 1e-9) -> ExpPoly:
    """A particular solution y of sum_r op[r] y^(r) = rhs.

    Per exponential lam in rhs, shift the operator (P(d+lam)) and solve the
    polynomial coefficient matching; resonance (lam a root of P) raises the
    trial degree by the root multiplicity.
    """
    op = np.asarray(op_coeffs, dtype=float)
    out = ExpPoly()
    opscale = max(np.max(np.abs(op)), 1e-300)
    for _, (lam, coeffs) in rhs.terms.items():
        deg = len(coeffs) - 1
        # shifted operator coefficients: P(d + lam) = sum_s shifted[s] d^s
        shifted = np.zeros(len(op), dtype=complex)
        for r, co in enumerate(op):
            if co == 0.0:
                continue
            for s in range(r + 1):
                shifted[s] += co * comb(r, s) * lam ** (r - s)
        lscale = max(1.0, abs(lam)) ** max(len(op) - 1, 1)
        mult = 0
        while mult < len(shifted) and abs(shifted[mult]) <= tol * opscale * lscale:
            mult += 1
        if mult >= len(shifted):
            raise ValueError("operator annihilates the forcing exponential entirely")
        trial_deg = deg + mult
        # match coefficients: unknown gamma_q for q = 0..trial_deg (poly for y)
        # y = sum gamma_q tau^q; P(d+lam) y = sum_s shifted[s] y^(s)
        M = np.zeros((deg + 1, trial_deg + 1), dtype=complex)
        for s in range(len(shifted)):
            if shifted[s] == 0.0:
                continue
            for q in range(s, trial_deg + 1):
                row = q - s
                if row <= deg:
                    M[row, q] += shifted[s] * factorial(q) / factorial(q - s)
        gamma, *_ = np.linalg.lstsq(M, coeffs, rcond=None)
        out.add_term(lam, gamma)
    return out
