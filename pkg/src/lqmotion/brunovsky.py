"""Transformation to Brunovsky normal form and the stacked cost/constraint matrices.

A controllable pair (A, B) is equivalent, under a state coordinate change
s = Tx x and an input substitution a = F x + G u (G invertible), to m
decoupled integrator chains of lengths k_i summing to n. The stacked vector
z = [s_1; ...; s_m; a_1; ...; a_m] carries the transformed cost z'Kz and
constraints Lz <= e; costs and constraint values are invariant under the
transform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotControllable, ProblemFileError
from .problem import LqProblem, validate

RANK_TOL = 1e-10


def canonical_chain_matrices(chains) -> tuple[np.ndarray, np.ndarray]:
    """Exact canonical (A, B) for the given chain lengths: shifted identity
    blocks and a unit input entry at the top of each chain."""
    n = int(sum(chains))
    m = len(chains)
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    off = 0
    for i, k in enumerate(chains):
        for j in range(k - 1):
            A[off + j, off + j + 1] = 1.0
        B[off + k - 1, i] = 1.0
        off += k
    return A, B


@dataclass(frozen=True)
class BrunovskyForm:
    """Canonical-coordinates view of a validated problem.

    chains: integrator chain lengths (k_1, ..., k_m), sum = n.
    Tx:     state coordinate change, s = Tx x.
    F, G:   input substitution a = F x + G u with G invertible.
    Kmat:   (n+m) x (n+m) symmetric stacked cost, J = z' Kmat z.
    Lmat:   c x (n+m) stacked constraint matrix, constraints Lmat z <= eVec.
    s0, sT: transformed boundary states.
    """

    chains: tuple
    Tx: np.ndarray
    F: np.ndarray
    G: np.ndarray
    Kmat: np.ndarray
    Lmat: np.ndarray
    eVec: np.ndarray
    s0: np.ndarray
    sT: np.ndarray
    T: float
    state_names: tuple = ()
    control_names: tuple = ()

    def __post_init__(self):
        for arr in (self.Tx, self.F, self.G, self.Kmat, self.Lmat, self.eVec, self.s0, self.sT):
            np.asarray(arr).setflags(write=False)

    @property
    def n(self) -> int:
        return int(sum(self.chains))

    @property
    def m(self) -> int:
        return len(self.chains)

    @property
    def c(self) -> int:
        return self.Lmat.shape[0]

    def state_offset(self, chain: int) -> int:
        return int(sum(self.chains[:chain]))

    def state_indices(self, chain: int) -> list[int]:
        off = self.state_offset(chain)
        return list(range(off, off + self.chains[chain]))

    def control_index(self, chain: int) -> int:
        return self.n + chain

    def chain_of_state(self, idx: int) -> tuple[int, int]:
        """Map a state index to (chain, level)."""
        off = 0
        for i, k in enumerate(self.chains):
            if idx < off + k:
                return i, idx - off
            off += k
        raise IndexError(idx)

    def canonical_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        return canonical_chain_matrices(self.chains)

    def to_original(self, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map canonical state/control samples back to original coordinates.

        Accepts single vectors or stacked rows.
        """
        P = np.linalg.inv(self.Tx)
        x = s @ P.T
        u = np.linalg.solve(self.G, (a.T - self.F @ P @ s.T)).T
        return x, u

    def k_block(self, chain: int) -> np.ndarray:
        """Columns of Kmat belonging to one chain, restricted to its own rows."""
        cols = chain_slices(self)[chain]
        return self.Kmat[np.ix_(cols, cols)]

    def l_block(self, chain: int) -> np.ndarray:
        cols = chain_slices(self)[chain]
        return self.Lmat[:, cols]


def chain_slices(form: BrunovskyForm) -> list[list[int]]:
    """Per-chain column index sets of Kmat/Lmat (0-based).

    Chain i owns its state columns followed by its control column n+i; the
    sets partition {0, ..., n+m-1}.
    """
    return [form.state_indices(i) + [form.control_index(i)] for i in range(form.m)]


def is_chain_separable(K: np.ndarray, form: BrunovskyForm, tol: float = 1e-10) -> bool:
    """True when K has no coupling between different chains' columns."""
    slices = chain_slices(form)
    scale = max(1.0, float(np.max(np.abs(K))))
    mask = np.zeros_like(K, dtype=bool)
    for cols in slices:
        mask[np.ix_(cols, cols)] = True
    return bool(np.all(np.abs(K[~mask]) <= tol * scale))


def _staircase_select(A: np.ndarray, B: np.ndarray):
    """Greedy crate-order selection of independent columns A^j b_i.

    Returns per-input chain lengths and the selected columns ordered
    chain-major. Rank decisions use orthogonal projection with a singular
    threshold relative to the largest column norm seen.
    """
    n, m = B.shape
    selected = []            # (input, power, vector)
    basis = np.zeros((n, 0))
    ref = max(np.linalg.norm(B, axis=0).max(), 1.0)
    alive = list(range(m))
    power_vec = [B[:, i].copy() for i in range(m)]
    lengths = [0] * m
    for power in range(n):
        if not alive:
            break
        next_alive = []
        for i in alive:
            v = power_vec[i]
            resid = v - basis @ (basis.T @ v)
            if np.linalg.norm(resid) > RANK_TOL * ref:
                q = resid / np.linalg.norm(resid)
                basis = np.hstack([basis, q[:, None]])
                selected.append((i, power, v.copy()))
                lengths[i] += 1
                next_alive.append(i)
                power_vec[i] = A @ v
        alive = next_alive
    return lengths, selected


def to_brunovsky(problem: LqProblem) -> BrunovskyForm:
    """Compute the canonical form of a validated problem.

    For ``coordinates="brunovsky"`` inputs the matrices must already match
    the canonical pattern; the transform is the identity. Otherwise the
    controllability-staircase construction produces Tx, F, G and the cost
    and constraint matrices are recomputed so that J and Cx + Du - e are
    invariant.
    """
    report = validate(problem)
    ctrl_check = next(c for c in report.checks if c.name == "controllability")
    if not ctrl_check.passed:
        raise NotControllable(
            f"(A, B) is not controllable: rank {int(ctrl_check.measured)} < {problem.n}")

    if problem.coordinates == "brunovsky":
        chains = _detect_canonical(problem.A, problem.B)
        Tx = np.eye(problem.n)
        F = np.zeros((problem.m, problem.n))
        G = np.eye(problem.m)
    else:
        chains, Tx, F, G = _staircase_transform(problem.A, problem.B)

    P = np.linalg.inv(Tx)
    W = np.linalg.inv(G)
    V = -W @ F @ P           # u = V s + W a
    Qt = P.T @ problem.Q @ P + V.T @ problem.R @ V + P.T @ problem.N @ V + V.T @ problem.N.T @ P
    Qt = (Qt + Qt.T) / 2
    Rt = W.T @ problem.R @ W
    Rt = (Rt + Rt.T) / 2
    Nt = P.T @ problem.N @ W + V.T @ problem.R @ W
    K = np.block([[Qt, Nt], [Nt.T, Rt]])
    Ct = problem.C @ P + problem.D @ V
    Dt = problem.D @ W
    L = np.hstack([Ct, Dt]) if problem.c else np.zeros((0, problem.n + problem.m))

    return BrunovskyForm(
        chains=tuple(chains), Tx=Tx, F=F, G=G, Kmat=K, Lmat=L,
        eVec=problem.e.copy(), s0=Tx @ problem.x0, sT=Tx @ problem.xT,
        T=problem.T, state_names=tuple(problem.state_names),
        control_names=tuple(problem.control_names))


def _detect_canonical(A: np.ndarray, B: np.ndarray) -> tuple:
    """Parse chain lengths out of matrices already in canonical layout."""
    n, m = B.shape
    tops = []
    for i in range(m):
        col = B[:, i]
        nz = np.nonzero(np.abs(col) > 0)[0]
        if len(nz) != 1 or not np.isclose(col[nz[0]], 1.0):
            raise ProblemFileError(
                "coordinates='brunovsky' but B is not unit chain-top columns; "
                "use coordinates='original'")
        tops.append(int(nz[0]))
    if tops != sorted(tops):
        raise ProblemFileError("coordinates='brunovsky' requires chains ordered in the state vector")
    bounds = tops + []
    starts = [0] + [t + 1 for t in tops[:-1]]
    chains = tuple(t - s + 1 for s, t in zip(starts, tops))
    Ac, _ = canonical_chain_matrices(chains)
    if not np.array_equal(A, Ac):
        raise ProblemFileError(
            "coordinates='brunovsky' but A does not match the integrator-chain pattern; "
            "use coordinates='original'")
    if sum(chains) != n:
        raise ProblemFileError("chain lengths do not cover the state vector")
    return chains


def _staircase_transform(A: np.ndarray, B: np.ndarray):
    n, m = B.shape
    lengths, selected = _staircase_select(A, B)
    if sum(lengths) != n:
        raise NotControllable(f"staircase selected {sum(lengths)} of {n} directions")
    # drop inputs with empty chains (redundant columns of B)
    order = [i for i in range(m) if lengths[i] > 0]
    if len(order) != m:
        raise NotControllable("B has linearly dependent columns; remove redundant inputs")

    # M columns chain-major: b_i, A b_i, ..., A^{k_i-1} b_i
    cols = []
    last_pos = {}
    pos = 0
    for i in order:
        vecs = sorted([(p, v) for (j, p, v) in selected if j == i])
        for p, v in vecs:
            cols.append(v)
            pos += 1
        last_pos[i] = pos - 1
    M = np.column_stack(cols)
    Minv = np.linalg.inv(M)

    rows = []
    Fr = []
    Gr = []
    for i in order:
        q = Minv[last_pos[i]]
        k = lengths[i]
        r = q.copy()
        for _ in range(k):
            rows.append(r)
            r = r @ A
        Fr.append(r)                     # q A^{k}
        Gr.append(q @ np.linalg.matrix_power(A, k - 1) @ B)
    Tx = np.vstack(rows)
    F = np.vstack(Fr)
    G = np.vstack(Gr)
    if abs(np.linalg.det(G)) < RANK_TOL:
        raise NotControllable("input transform G is singular")
    return tuple(lengths[i] for i in order), Tx, F, G
