"""Search for the L shortest independent integer equation-coefficient vectors.

The effective noise of an integer equation a is the quadratic form a* U a.
For Hermitian U and real integer a only Re(U) contributes, so the search runs
over the real symmetric form S = Re(U).  Both criteria (smallest maximum and
smallest sum over an independent set of L vectors) are solved exactly at desk
scale by bounded lattice enumeration: a reduced basis caps the enumeration
radius, and greedy selection of shortest independent candidates yields the
successive minima of the form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import EnumerationOverflow, OracleTooLarge

ENUM_CAP = 200_000      # candidate cap before the radius is halved
ENUM_RETRIES = 5
REG_SCALE = 1e-10       # S is regularized with REG_SCALE * trace(S)/L * I


# ---------------------------------------------------------------------------
# exact integer linear algebra (fraction-free Gaussian elimination)

def integer_det(A) -> int:
    """Exact determinant of an integer matrix (Bareiss algorithm)."""
    M = [[int(x) for x in row] for row in np.asarray(A)]
    n = len(M)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for i in range(n - 1):
        if M[i][i] == 0:
            for r in range(i + 1, n):
                if M[r][i] != 0:
                    M[i], M[r] = M[r], M[i]
                    sign = -sign
                    break
            else:
                return 0
        for r in range(i + 1, n):
            for c in range(i + 1, n):
                M[r][c] = (M[r][c] * M[i][i] - M[r][i] * M[i][c]) // prev
            M[r][i] = 0
        prev = M[i][i]
    return sign * M[n - 1][n - 1]


def integer_rank(rows) -> int:
    """Exact rank of a stack of integer row vectors."""
    M = [[int(x) for x in row] for row in rows]
    m = len(M)
    if m == 0:
        return 0
    n = len(M[0])
    prev = 1
    rank = 0
    for col in range(n):
        piv = None
        for r in range(rank, m):
            if M[r][col] != 0:
                piv = r
                break
        if piv is None:
            continue
        M[rank], M[piv] = M[piv], M[rank]
        for r in range(rank + 1, m):
            for c in range(col + 1, n):
                M[r][c] = (M[r][c] * M[rank][col] - M[r][col] * M[rank][c]) // prev
            M[r][col] = 0
        prev = M[rank][col]
        rank += 1
        if rank == m:
            break
    return rank


def validate_equation_set(A) -> None:
    """Raise ValueError unless A is a nonsingular integer matrix."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"equation matrix must be square, got shape {A.shape}")
    if not np.all(A == np.round(A)):
        raise ValueError("equation matrix entries must be integers")
    if integer_det(A) == 0:
        raise ValueError("equation matrix is singular")


# ---------------------------------------------------------------------------
# lattice reduction and enumeration under the form q(x) = x S x^T

def _gso(B: np.ndarray, S: np.ndarray):
    """Gram-Schmidt coefficients and squared norms of basis rows under S."""
    n = B.shape[0]
    G = B @ S @ B.T
    mu = np.zeros((n, n))
    q = np.zeros(n)
    for i in range(n):
        q[i] = G[i, i] - sum(mu[i, j] ** 2 * q[j] for j in range(i))
        for k in range(i + 1, n):
            mu[k, i] = (G[k, i] - sum(mu[k, j] * mu[i, j] * q[j] for j in range(i))) / q[i]
    return mu, q


def lll_reduce(S: np.ndarray, delta: float = 0.75) -> np.ndarray:
    """LLL-reduced integer basis (rows) of Z^n under the positive form S."""
    n = S.shape[0]
    B = np.eye(n, dtype=np.int64)
    k = 1
    guard = 0
    while k < n and guard < 10_000:
        guard += 1
        mu, q = _gso(B.astype(float), S)
        for j in range(k - 1, -1, -1):
            r = int(np.round(mu[k, j]))
            if r != 0:
                B[k] -= r * B[j]
                mu, q = _gso(B.astype(float), S)
        if q[k] >= (delta - mu[k, k - 1] ** 2) * q[k - 1]:
            k += 1
        else:
            B[[k - 1, k]] = B[[k, k - 1]]
            k = max(k - 1, 1)
    return B


def _enumerate_within(S: np.ndarray, radius: float, cap: int):
    """All integer vectors x != 0 with x S x^T <= radius, via Fincke-Pohst on
    the Cholesky factor.  Returns None when more than `cap` leaves are hit."""
    n = S.shape[0]
    R = np.linalg.cholesky(S).T  # upper triangular, q(x) = ||R x||^2
    out = []

    def descend(level, partial, used):
        # partial[i] = sum_{j>level} R[i, j] x_j for i <= level
        rii = R[level, level]
        center = -partial[level] / rii
        width = np.sqrt(max(radius - used, 0.0)) / rii
        lo = int(np.ceil(center - width - 1e-12))
        hi = int(np.floor(center + width + 1e-12))
        for xi in range(lo, hi + 1):
            term = (rii * xi + partial[level]) ** 2
            if term > radius - used + 1e-12:
                continue
            if level == 0:
                vec = x_buf.copy()
                vec[0] = xi
                if np.any(vec):
                    out.append(vec.copy())
                    if len(out) > cap:
                        raise _Overflow
            else:
                x_buf[level] = xi
                new_partial = partial + R[:, level] * xi
                descend(level - 1, new_partial, used + term)

    class _Overflow(Exception):
        pass

    x_buf = np.zeros(n, dtype=np.int64)
    try:
        descend(n - 1, np.zeros(n), 0.0)
    except _Overflow:
        return None
    return out


def _canonical(v: np.ndarray) -> tuple:
    """Sign-normalize so the first nonzero entry is positive."""
    for x in v:
        if x != 0:
            return tuple(v) if x > 0 else tuple(-v)
    return tuple(v)


# ---------------------------------------------------------------------------
# problem / solution containers

@dataclass(frozen=True)
class EcvProblem:
    U: np.ndarray              # L x L Hermitian PSD (complex accepted)
    criterion: str = "sum"     # "sum" or "max"
    coeff_bound: int = 3       # box bound for the exhaustive oracle
    enum_cap: int = ENUM_CAP

    def __post_init__(self):
        if self.criterion not in ("sum", "max"):
            raise ValueError(f"criterion must be 'sum' or 'max', got {self.criterion!r}")
        if self.coeff_bound < 1:
            raise ValueError("coeff_bound must be >= 1")


@dataclass(frozen=True)
class EcvSolution:
    A: np.ndarray              # L x L integer matrix, rows sorted by value
    values: np.ndarray         # per-row quadratic forms, non-decreasing
    objective: float           # max or sum of values per the criterion

    def __post_init__(self):
        validate_equation_set(self.A)


def _objective(values: np.ndarray, criterion: str) -> float:
    return float(np.max(values) if criterion == "max" else np.sum(values))


def search(problem: EcvProblem) -> EcvSolution:
    """L independent integer vectors minimizing the max or sum of a* U a.

    Greedy selection of the shortest independent enumerated vectors realizes
    the successive minima of the form, which is optimal for both criteria.
    """
    S_raw = np.asarray(problem.U).real.copy()
    S_raw = 0.5 * (S_raw + S_raw.T)
    L = S_raw.shape[0]
    reg = REG_SCALE * max(np.trace(S_raw), 0.0) / L + 1e-300
    S = S_raw + reg * np.eye(L)

    basis = lll_reduce(S)
    radius = max(float(r @ S @ r) for r in basis) * (1.0 + 1e-9)

    cands = None
    for _ in range(ENUM_RETRIES):
        cands = _enumerate_within(S, radius, problem.enum_cap)
        if cands is not None:
            break
        radius /= 2.0
    if cands is None:
        raise EnumerationOverflow(
            f"more than {problem.enum_cap} candidates within radius after "
            f"{ENUM_RETRIES} halvings"
        )

    uniq = {}
    for v in cands:
        uniq.setdefault(_canonical(v), None)
    vectors = [np.array(t, dtype=np.int64) for t in uniq]
    arr = np.array(vectors)
    values = np.einsum("ij,jk,ik->i", arr, S_raw, arr)
    order = sorted(range(len(vectors)), key=lambda i: (values[i], tuple(arr[i])))

    chosen, chosen_vals = [], []
    for i in order:
        if integer_rank(chosen + [arr[i]]) == len(chosen) + 1:
            chosen.append(arr[i])
            chosen_vals.append(values[i])
            if len(chosen) == L:
                break
    if len(chosen) < L:
        raise EnumerationOverflow(
            "enumeration radius too small to supply L independent vectors"
        )

    A = np.array(chosen, dtype=np.int64)
    vals = np.array(chosen_vals, dtype=float)
    return EcvSolution(A=A, values=vals, objective=_objective(vals, problem.criterion))


# ---------------------------------------------------------------------------
# exhaustive oracle (test-only ground truth; independent of the search path)

def _box_candidates(L: int, bound: int):
    """Sign-canonical nonzero integer vectors with entries in [-bound, bound]."""
    seen = {}
    for tup in itertools.product(range(-bound, bound + 1), repeat=L):
        if any(tup):
            seen.setdefault(_canonical(np.array(tup)), None)
    return np.array(list(seen.keys()), dtype=np.int64)


def _float_rank(rows) -> int:
    # exact for the guarded oracle sizes: nonsingular integer matrices with
    # entries <= 3 and L <= 4 have smallest singular value far above 1e-6
    return int(np.linalg.matrix_rank(np.array(rows, dtype=float), tol=1e-6))


def exhaustive_oracle(problem: EcvProblem) -> EcvSolution:
    """Provably optimal solution by brute force over the coefficient box."""
    S = np.asarray(problem.U).real.copy()
    S = 0.5 * (S + S.T)
    L = S.shape[0]
    if L > 4 or problem.coeff_bound > 3:
        raise OracleTooLarge(f"oracle guard: L={L} (max 4), bound={problem.coeff_bound} (max 3)")

    cands = _box_candidates(L, problem.coeff_bound)
    values = np.einsum("ij,jk,ik->i", cands, S, cands)
    order = sorted(range(len(cands)), key=lambda i: (values[i], tuple(cands[i])))
    cands = cands[order]
    values = values[order]
    n = len(cands)

    if problem.criterion == "max":
        # smallest v such that the candidates with value <= v span L dimensions
        chosen = []
        for i in range(n):
            if _float_rank(list(chosen) + [cands[i]]) == len(chosen) + 1:
                chosen.append(cands[i])
                if len(chosen) == L:
                    break
        if len(chosen) < L:
            raise OracleTooLarge("coefficient box does not span L dimensions")
        vals = np.array([float(c @ S @ c) for c in chosen])
        return EcvSolution(A=np.array(chosen), values=vals,
                           objective=_objective(vals, "max"))

    # sum criterion: depth-first search over ascending candidates with
    # partial-sum pruning
    best = {"sum": np.inf, "rows": None}

    def dfs(start, rows, cur):
        depth = len(rows)
        if depth == L:
            if cur < best["sum"] - 1e-15:
                best["sum"] = cur
                best["rows"] = list(rows)
            return
        need = L - depth
        for i in range(start, n - need + 1):
            lower = cur + values[i] * need  # remaining picks all >= values[i]
            if lower >= best["sum"]:
                break
            if _float_rank(rows + [cands[i]]) == depth + 1:
                dfs(i + 1, rows + [cands[i]], cur + values[i])

    dfs(0, [], 0.0)
    if best["rows"] is None:
        raise OracleTooLarge("coefficient box does not span L dimensions")
    rows = best["rows"]
    vals = np.array([float(c @ S @ c) for c in rows])
    order2 = np.argsort(vals, kind="stable")
    A = np.array(rows)[order2]
    return EcvSolution(A=A, values=vals[order2], objective=_objective(vals, "sum"))
