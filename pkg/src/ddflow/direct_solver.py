"""Sparse LU with separate analyze / factorize / solve phases.

The analysis works on the structure of ``A + A^T`` after a fill-reducing
symmetric permutation. Consecutive indistinguishable rows are handled as one
block, the elimination tree and fill pattern are computed at block level, and
chains of blocks with nested structure are merged into fundamental
supernodes. Because the pattern is symmetric, a supernode's rows in ``L`` and
its columns in ``U`` share one index list.

Numeric factorization is multifrontal: each supernode assembles a dense
frontal matrix from the original entries and its children's update
matrices, factors the fully summed block with partial pivoting confined to
that block, and passes the Schur complement up the tree. Row exchanges never
leave a supernode's diagonal block, so the fill pattern computed by
:func:`analyze` is exactly the stored pattern, whatever the values.

Factors are immutable and can be reused for any number of solves.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas, lapack

from .ordering import Permutation, compress, order, symmetric_graph
from .sparse import CsrMatrix

__all__ = [
    "SingularMatrixError",
    "SymbolicPlan",
    "LuFactors",
    "analyze",
    "factorize",
    "solve",
    "INDEX_BYTES",
    "SCALAR_BYTES",
]

INDEX_BYTES = 8
SCALAR_BYTES = 8
PIVOT_THRESHOLD = 0.1


class SingularMatrixError(ArithmeticError):
    """Raised when a pivot vanishes; ``step`` is the 1-based elimination step."""

    def __init__(self, step: int, pivot: float):
        super().__init__(f"matrix is singular to working precision at elimination step "
                         f"{step} (pivot {pivot:.3e})")
        self.step = step
        self.pivot = pivot


@dataclass(frozen=True, eq=False)
class SymbolicPlan:
    """Result of :func:`analyze`; valid for every matrix with the analysed pattern."""

    n: int
    method: str
    ordering: Permutation
    pattern: CsrMatrix = field(repr=False)
    sn_start: np.ndarray = field(repr=False)       # first permuted column of each supernode
    sn_rows: list = field(repr=False)              # off-diagonal row structure (permuted ids)
    sn_parent: np.ndarray = field(repr=False)
    sn_children: list = field(repr=False)
    extend_add: list = field(repr=False)           # positions of sn_rows in the parent front
    assembly: list = field(repr=False)             # (value positions, flat front positions)
    nnz_lu: int = 0
    analyze_time: float = 0.0

    @property
    def n_supernodes(self) -> int:
        return self.sn_start.size - 1

    @property
    def nnz_l(self) -> int:
        """Entries of ``L`` strictly below the diagonal."""
        return (self.nnz_lu - self.n) // 2

    @property
    def memory_bytes(self) -> int:
        return self.nnz_lu * (INDEX_BYTES + SCALAR_BYTES)

    def widths(self) -> np.ndarray:
        return np.diff(self.sn_start)


@dataclass(frozen=True, eq=False)
class LuFactors:
    plan: SymbolicPlan
    diag: list = field(repr=False)     # packed L11\U11 per supernode
    pivots: list = field(repr=False)   # row order inside each diagonal block
    upper: list = field(repr=False)    # U12 blocks, width x len(rows)
    lower: list = field(repr=False)    # L21 blocks, len(rows) x width
    n_weak_pivots: int = 0
    n_perturbed: int = 0
    factorize_time: float = 0.0

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def nnz(self) -> int:
        """Stored entries of ``L`` (without its unit diagonal) plus ``U``."""
        return int(sum(d.size + u.size + l.size
                       for d, u, l in zip(self.diag, self.upper, self.lower)))

    @property
    def memory_bytes(self) -> int:
        return self.nnz * (INDEX_BYTES + SCALAR_BYTES)

    def to_dense(self):
        """``(rows, cols, L, U)`` with ``A[rows][:, cols] == L @ U``; for small checks only."""
        plan = self.plan
        n = plan.n
        L = np.zeros((n, n))
        U = np.zeros((n, n))
        q = np.arange(n)
        starts = plan.sn_start.tolist()
        for s in range(plan.n_supernodes):
            a, e = starts[s], starts[s + 1]
            q[a:e] = a + self.pivots[s]
            U[a:e, a:e] = np.triu(self.diag[s])
            rows = plan.sn_rows[s]
            U[a:e, rows] = self.upper[s]
            L[rows, a:e] = self.lower[s]
        L = L[q]
        for s in range(plan.n_supernodes):
            a, e = starts[s], starts[s + 1]
            L[a:e, a:e] = np.tril(self.diag[s], -1) + np.eye(e - a)
        perm = plan.ordering.perm
        return perm[q], perm.copy(), L, U


def _blocks(graph, perm: Permutation):
    """Maximal runs of consecutive permuted positions holding indistinguishable rows."""
    n = graph.n
    _, members = compress(graph)
    group = np.empty(n, dtype=np.int64)
    for gi, m in enumerate(members):
        group[m] = gi
    g_new = group[perm.perm]
    start = np.flatnonzero(np.concatenate([[True], g_new[1:] != g_new[:-1]])) if n else \
        np.zeros(0, dtype=np.int64)
    return np.append(start, n)


def analyze(pattern: CsrMatrix, method: str = "nd", ordering: Permutation | None = None
            ) -> SymbolicPlan:
    """Ordering, supernode partition and fill pattern for ``pattern``.

    ``method`` is ``"md"``, ``"nd"`` or ``"natural"``; a precomputed
    ``ordering`` overrides it.
    """
    t0 = time.perf_counter()
    if pattern.n_rows != pattern.n_cols:
        raise ValueError(f"analyze needs a square pattern, got {pattern.shape}")
    n = pattern.n_rows
    graph = symmetric_graph(pattern)
    perm = ordering if ordering is not None else order(pattern, method)
    if len(perm) != n:
        raise ValueError("ordering length does not match the pattern")
    inv = perm.inverse

    bstart = _blocks(graph, perm)
    nb = bstart.size - 1
    block_of = np.repeat(np.arange(nb), np.diff(bstart))  # permuted position -> block

    # block adjacency (only higher blocks are needed)
    src = block_of[inv[np.repeat(np.arange(n), np.diff(graph.ptr))]]
    dst = block_of[inv[graph.adj]]
    up = dst > src
    key = np.unique(src[up] * max(nb, 1) + dst[up])
    ks, kd = np.divmod(key, max(nb, 1))
    bptr = np.searchsorted(ks, np.arange(nb + 1))
    kd = kd.tolist()
    bptr = bptr.tolist()

    # block elimination tree and structures
    struct: list = [None] * nb
    bparent = [-1] * nb
    children: list = [[] for _ in range(nb)]
    for j in range(nb):
        s = set(kd[bptr[j]:bptr[j + 1]])
        for c in children[j]:
            s.update(struct[c])
        s.discard(j)
        st = sorted(s)
        struct[j] = st
        if st:
            bparent[j] = st[0]
            children[st[0]].append(j)

    # fundamental supernodes: chains j -> j+1 with a single child and nested structure
    sn_first = [0] if nb else []
    for j in range(nb - 1):
        if not (bparent[j] == j + 1 and len(children[j + 1]) == 1
                and len(struct[j]) == len(struct[j + 1]) + 1):
            sn_first.append(j + 1)
    sn_first.append(nb)
    ns = len(sn_first) - 1
    sn_of_block = np.repeat(np.arange(ns), np.diff(sn_first))

    sn_start = bstart[np.array(sn_first, dtype=np.int64)]
    bsizes = np.diff(bstart)
    sn_rows = []
    for s in range(ns):
        last = sn_first[s + 1] - 1
        blocks = struct[last]
        if blocks:
            b = np.array(blocks, dtype=np.int64)
            sz = bsizes[b]
            rows = np.repeat(bstart[b] - np.cumsum(sz) + sz, sz) + np.arange(sz.sum())
        else:
            rows = np.zeros(0, dtype=np.int64)
        rows.setflags(write=False)
        sn_rows.append(rows)

    sn_parent = np.full(ns, -1, dtype=np.int64)
    sn_children: list = [[] for _ in range(ns)]
    for s in range(ns):
        if sn_rows[s].size:
            p = int(sn_of_block[block_of[sn_rows[s][0]]])
            sn_parent[s] = p
            sn_children[p].append(s)

    sn_of_col = np.repeat(np.arange(ns), np.diff(sn_start))
    fronts = [np.concatenate([np.arange(sn_start[s], sn_start[s + 1]), sn_rows[s]])
              for s in range(ns)]
    extend_add = []
    for s in range(ns):
        p = sn_parent[s]
        extend_add.append(np.searchsorted(fronts[p], sn_rows[s]) if p >= 0
                          else np.zeros(0, dtype=np.int64))

    # scatter map of the original entries into the fronts
    r_new = inv[pattern.row_indices()]
    c_new = inv[pattern.col_idx]
    owner = sn_of_col[np.minimum(r_new, c_new)]
    by_sn = np.argsort(owner, kind="stable")
    cuts = np.searchsorted(owner[by_sn], np.arange(ns + 1))
    assembly = []
    for s in range(ns):
        pos = by_sn[cuts[s]:cuts[s + 1]]
        f = fronts[s]
        lr = np.searchsorted(f, r_new[pos])
        lc = np.searchsorted(f, c_new[pos])
        assembly.append((pos, lr * f.size + lc))

    widths = np.diff(sn_start)
    rlen = np.array([r.size for r in sn_rows], dtype=np.int64)
    nnz_lu = int(np.sum(widths * widths + 2 * widths * rlen))

    return SymbolicPlan(
        n=n, method=method if ordering is None else "given", ordering=perm, pattern=pattern,
        sn_start=sn_start, sn_rows=sn_rows, sn_parent=sn_parent, sn_children=sn_children,
        extend_add=extend_add, assembly=assembly, nnz_lu=nnz_lu,
        analyze_time=time.perf_counter() - t0,
    )


def _matrix_values(plan: SymbolicPlan, A: CsrMatrix) -> np.ndarray:
    """Values of ``A`` laid out on the plan's pattern (zeros where ``A`` stores nothing)."""
    P = plan.pattern
    if A.shape != P.shape:
        raise ValueError(f"matrix shape {A.shape} does not match the plan {P.shape}")
    if A.same_pattern(P):
        return A.values
    n = P.n_cols
    pkey = P.row_indices() * n + P.col_idx
    akey = A.row_indices() * n + A.col_idx
    pos = np.searchsorted(pkey, akey)
    pos = np.minimum(pos, pkey.size - 1) if pkey.size else pos
    if akey.size and (pkey.size == 0 or np.any(pkey[pos] != akey)):
        raise ValueError("matrix pattern is not contained in the analysed pattern")
    vals = np.zeros(P.nnz)
    vals[pos] = A.values
    return vals


_getrf = lapack.get_lapack_funcs("getrf", dtype=np.float64)
_trsm = blas.get_blas_funcs("trsm", dtype=np.float64)
_trsv = blas.get_blas_funcs("trsv", dtype=np.float64)


def _swaps_to_order(piv: np.ndarray) -> np.ndarray:
    order = np.arange(piv.size)
    for i, p in enumerate(piv.tolist()):
        if p != i:
            order[i], order[p] = order[p], order[i]
    return order


def _perturbed_lu(F11: np.ndarray, tiny: float):
    """Unblocked partial-pivoting LU replacing vanishing pivots by ``+-tiny``."""
    a = F11.copy()
    w = a.shape[0]
    order = np.arange(w)
    count = 0
    for k in range(w):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if p != k:
            a[[k, p]] = a[[p, k]]
            order[[k, p]] = order[[p, k]]
        if abs(a[k, k]) <= tiny:
            a[k, k] = tiny if a[k, k] >= 0 else -tiny
            count += 1
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, order, count


def factorize(plan: SymbolicPlan, A: CsrMatrix, perturb: bool = False) -> LuFactors:
    """Numeric LU of ``A`` on the plan's pattern.

    Pivots are searched within each supernode's diagonal block. A pivot with
    magnitude at most ``eps * ||A||_inf`` raises :class:`SingularMatrixError`,
    or with ``perturb=True`` is replaced by that magnitude and counted in
    ``n_perturbed``. Columns whose multipliers exceed ``1 / PIVOT_THRESHOLD``
    are counted in ``n_weak_pivots``.
    """
    t0 = time.perf_counter()
    vals = _matrix_values(plan, A)
    norm = A.norm_inf()
    tiny = np.finfo(float).eps * max(norm, np.finfo(float).tiny)
    ns = plan.n_supernodes
    starts = plan.sn_start.tolist()
    diag, pivots, upper, lower = [None] * ns, [None] * ns, [None] * ns, [None] * ns
    pending: dict = {}
    weak = 0
    perturbed = 0
    for s in range(ns):
        w = starts[s + 1] - starts[s]
        rows = plan.sn_rows[s]
        m = w + rows.size
        front = np.zeros((m, m))
        pos, flat = plan.assembly[s]
        front.flat[flat] = vals[pos]
        for c in plan.sn_children[s]:
            loc = plan.extend_add[c]
            front[np.ix_(loc, loc)] += pending.pop(c)

        f11 = front[:w, :w]
        lu, piv, info = _getrf(f11)
        dvals = np.abs(np.diagonal(lu))
        if info > 0 or np.any(dvals <= tiny):
            k = int(np.argmax(dvals <= tiny)) if info == 0 else info - 1
            if not perturb:
                raise SingularMatrixError(starts[s] + k + 1, float(lu[k, k]))
            lu, row_order, cnt = _perturbed_lu(f11, tiny)
            perturbed += cnt
        else:
            row_order = _swaps_to_order(piv)
        if rows.size:
            u12 = _trsm(1.0, lu, front[:w, w:][row_order], lower=1, diag=1)
            l21 = _trsm(1.0, lu, front[w:, :w], side=1, lower=0)
            if np.any(np.abs(l21) > 1.0 / PIVOT_THRESHOLD):
                weak += int(np.count_nonzero(np.max(np.abs(l21), axis=0)
                                             > 1.0 / PIVOT_THRESHOLD))
            if plan.sn_parent[s] >= 0:
                pending[s] = front[w:, w:] - l21 @ u12
        else:
            u12 = np.zeros((w, 0))
            l21 = np.zeros((0, w))
        for a in (lu, row_order, u12, l21):
            a.setflags(write=False)
        diag[s], pivots[s], upper[s], lower[s] = lu, row_order, u12, l21
    return LuFactors(plan, diag, pivots, upper, lower, n_weak_pivots=weak,
                     n_perturbed=perturbed, factorize_time=time.perf_counter() - t0)


def solve(factors: LuFactors, b) -> np.ndarray:
    """Solve ``A x = b`` with previously computed factors (``b`` may be 2-D)."""
    b = np.asarray(b, dtype=np.float64)
    plan = factors.plan
    if b.shape[0] != plan.n or b.ndim > 2:
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({plan.n},) "
                         f"or ({plan.n}, k)")
    perm = plan.ordering.perm
    y = b[perm].copy()
    starts = plan.sn_start.tolist()
    ns = plan.n_supernodes
    rows_all = plan.sn_rows
    vec = y.ndim == 1
    for s in range(ns):
        a, e = starts[s], starts[s + 1]
        z = y[a:e][factors.pivots[s]]
        if vec:
            z = _trsv(factors.diag[s], z, lower=1, diag=1)
        else:
            z = _trsm(1.0, factors.diag[s], z, lower=1, diag=1)
        y[a:e] = z
        rows = rows_all[s]
        if rows.size:
            y[rows] -= factors.lower[s] @ z
    for s in range(ns - 1, -1, -1):
        a, e = starts[s], starts[s + 1]
        rows = rows_all[s]
        z = y[a:e]
        if rows.size:
            z = z - factors.upper[s] @ y[rows]
        if vec:
            y[a:e] = _trsv(factors.diag[s], z, lower=0)
        else:
            y[a:e] = _trsm(1.0, factors.diag[s], z, lower=0)
    x = np.empty_like(y)
    x[perm] = y
    return x
