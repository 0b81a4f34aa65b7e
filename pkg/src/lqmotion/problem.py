"""Problem container, validation, and problem-file I/O.

A problem is the tuple (A, B, C, D, e, Q, R, N, x0, xT, T): linear dynamics
x' = Ax + Bu, linear inequality constraints Cx + Du <= e, quadratic running
cost x'Qx + u'Ru + 2x'Nu integrated over a fixed horizon [0, T], and fixed
boundary states. Working assumptions: (A, B) controllable, Q symmetric, R
full rank.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ProblemFileError

SYM_TOL = 1e-12
RANK_TOL = 1e-10


def _as_matrix(value, name, shape=None):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


@dataclass(frozen=True)
class LqProblem:
    """Immutable LQ optimal control problem instance.

    ``coordinates`` is ``"original"`` for general (A, B) or ``"brunovsky"``
    when the matrices are already in canonical integrator-chain layout.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    e: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: np.ndarray
    x0: np.ndarray
    xT: np.ndarray
    T: float
    coordinates: str = "original"
    state_names: tuple = ()
    control_names: tuple = ()

    def __post_init__(self):
        n, m = self.n, self.m
        object.__setattr__(self, "A", _as_matrix(self.A, "A", (n, n)))
        object.__setattr__(self, "B", _as_matrix(self.B, "B", (n, m)))
        c = self.c
        object.__setattr__(self, "C", _as_matrix(self.C, "C", (c, n)) if c else np.zeros((0, n)))
        object.__setattr__(self, "D", _as_matrix(self.D, "D", (c, m)) if c else np.zeros((0, m)))
        object.__setattr__(self, "e", np.asarray(self.e, dtype=float).reshape(c))
        object.__setattr__(self, "Q", _as_matrix(self.Q, "Q", (n, n)))
        object.__setattr__(self, "R", _as_matrix(self.R, "R", (m, m)))
        object.__setattr__(self, "N", _as_matrix(self.N, "N", (n, m)))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(n))
        object.__setattr__(self, "xT", np.asarray(self.xT, dtype=float).reshape(n))
        if self.T <= 0:
            raise DimensionMismatch(f"horizon T must be positive, got {self.T}")
        if self.coordinates not in ("original", "brunovsky"):
            raise ProblemFileError(f"coordinates must be 'original' or 'brunovsky', got {self.coordinates!r}")
        for arr in (self.A, self.B, self.C, self.D, self.e, self.Q, self.R, self.N, self.x0, self.xT):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return np.atleast_2d(np.asarray(self.A)).shape[0]

    @property
    def m(self) -> int:
        return np.atleast_2d(np.asarray(self.B)).shape[1]

    @property
    def c(self) -> int:
        C = np.asarray(self.C)
        if C.size == 0:
            return 0
        return np.atleast_2d(C).shape[0]

    def names(self):
        """State/control column names for reports; generated if not provided."""
        sn = tuple(self.state_names) or tuple(f"x{i}" for i in range(self.n))
        cn = tuple(self.control_names) or tuple(f"u{i}" for i in range(self.m))
        return sn, cn


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self):
        lines = []
        for c in self.checks:
            tag = "pass" if c.passed else "FAIL"
            lines.append(f"[{tag}] {c.name}: measured {c.measured:.3e} vs {c.threshold:.1e} {c.detail}")
        return "\n".join(lines)


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def validate(problem: LqProblem) -> ValidationReport:
    """Check the working assumptions and report each as pass/fail.

    The three checks: (A, B) controllable (rank of the controllability
    matrix), Q symmetric, R full rank (smallest singular value).
    """
    report = ValidationReport()

    ctrb = controllability_matrix(problem.A, problem.B)
    sv = np.linalg.svd(ctrb, compute_uv=False)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    rank = int(np.sum(sv > RANK_TOL * scale))
    report.checks.append(AssumptionCheck(
        "controllability", rank == problem.n, float(rank), float(problem.n),
        detail=f"(rank {rank} of {problem.n})"))

    asym = float(np.max(np.abs(problem.Q - problem.Q.T))) if problem.Q.size else 0.0
    qscale = max(1.0, float(np.max(np.abs(problem.Q)))) if problem.Q.size else 1.0
    report.checks.append(AssumptionCheck(
        "Q symmetric", asym <= SYM_TOL * qscale, asym, SYM_TOL * qscale,
        detail="(max |Q - Q'|)"))

    rsv = np.linalg.svd(problem.R, compute_uv=False)
    min_sv = float(rsv[-1]) if rsv.size else 0.0
    report.checks.append(AssumptionCheck(
        "R full rank", min_sv > RANK_TOL, min_sv, RANK_TOL,
        detail="(min singular value)"))

    return report


_PROBLEM_KEYS = ("A", "B", "C", "D", "e", "Q", "R", "N", "x0", "xT", "T")


def problem_to_dict(problem: LqProblem) -> dict:
    out = {k: np.asarray(getattr(problem, k)).tolist() for k in _PROBLEM_KEYS}
    out["coordinates"] = problem.coordinates
    if problem.state_names:
        out["state_names"] = list(problem.state_names)
    if problem.control_names:
        out["control_names"] = list(problem.control_names)
    return out


def problem_from_dict(data: dict) -> LqProblem:
    missing = [k for k in _PROBLEM_KEYS if k not in data]
    if missing:
        raise ProblemFileError(f"missing required fields: {', '.join(missing)}")
    known = set(_PROBLEM_KEYS) | {"coordinates", "state_names", "control_names"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ProblemFileError(f"unknown fields: {', '.join(unknown)}")
    kwargs = {}
    for key in _PROBLEM_KEYS:
        try:
            kwargs[key] = np.asarray(data[key], dtype=float) if key != "T" else float(data[key])
        except (TypeError, ValueError) as exc:
            raise ProblemFileError(f"field {key!r}: {exc}") from exc
    try:
        return LqProblem(
            coordinates=data.get("coordinates", "original"),
            state_names=tuple(data.get("state_names", ())),
            control_names=tuple(data.get("control_names", ())),
            **kwargs,
        )
    except DimensionMismatch as exc:
        raise ProblemFileError(str(exc)) from exc


def load_problem(path) -> LqProblem:
    """Load a problem from a JSON file (row-major numeric arrays)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(f"{path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ProblemFileError(f"{path}: top level must be an object")
    try:
        return problem_from_dict(data)
    except ProblemFileError as exc:
        raise ProblemFileError(f"{path}: {exc}") from exc


def save_problem(problem: LqProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2))
