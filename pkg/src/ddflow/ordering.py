"""Fill-reducing symmetric orderings: minimum degree and nested dissection.

Both orderings work on the structure of ``A + A^T``. Rows with identical
closed neighbourhoods (the three velocity components of a mesh node, say)
are first merged into weighted supervariables; the ordering runs on that
compressed graph and every supervariable is expanded back into consecutive
positions. All tie-breaking is by lowest id, so results are reproducible.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .sparse import CsrMatrix

__all__ = [
    "Permutation",
    "Graph",
    "symmetric_graph",
    "compress",
    "min_degree",
    "nested_dissection",
    "natural",
    "order",
]

LEAF_SIZE = 32


@dataclass(frozen=True, eq=False)
class Permutation:
    """``perm[new] = old``; ``inverse[old] = new``."""

    perm: np.ndarray
    inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        n = p.size
        if not np.array_equal(np.sort(p), np.arange(n)):
            raise ValueError("not a permutation of 0..n-1")
        inv = np.empty(n, dtype=np.int64)
        inv[p] = np.arange(n)
        p.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "perm", p)
        object.__setattr__(self, "inverse", inv)

    def __len__(self):
        return self.perm.size

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(n))


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form without self loops, with vertex weights."""

    ptr: np.ndarray
    adj: np.ndarray
    weight: np.ndarray

    @property
    def n(self) -> int:
        return self.ptr.size - 1

    def neighbors(self, v):
        return self.adj[self.ptr[v]:self.ptr[v + 1]]

    def adjacency_lists(self) -> list[list[int]]:
        a = self.adj.tolist()
        p = self.ptr.tolist()
        return [a[p[i]:p[i + 1]] for i in range(self.n)]


def symmetric_graph(pattern: CsrMatrix) -> Graph:
    """Graph of ``pattern(A) + pattern(A)^T`` with unit weights."""
    if pattern.n_rows != pattern.n_cols:
        raise ValueError(f"ordering needs a square pattern, got {pattern.shape}")
    n = pattern.n_rows
    r = pattern.row_indices()
    c = pattern.col_idx
    off = r != c
    key = np.unique(np.concatenate([r[off] * n + c[off], c[off] * n + r[off]]))
    rows, cols = np.divmod(key, max(n, 1))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return Graph(np.cumsum(ptr), cols, np.ones(n, dtype=np.int64))


def compress(g: Graph):
    """Merge vertices with identical closed neighbourhoods.

    Returns the quotient graph (weights = member counts) and the list of
    member arrays, each sorted, with groups numbered by their lowest member.
    """
    n = g.n
    if n == 0:
        return g, []
    deg = np.diff(g.ptr)
    # cheap hash of the closed neighbourhood, then exact comparison inside buckets
    h = np.bincount(np.repeat(np.arange(n), deg), weights=(g.adj * 2654435761) % 1000003,
                    minlength=n) + np.arange(n) * 2654435761 % 1000003
    key = np.round(h).astype(np.int64) * (n + 1) + deg
    order = np.lexsort((np.arange(n), key))
    rep = np.arange(n)
    adj = g.adjacency_lists()
    i = 0
    while i < n:
        j = i
        while j + 1 < n and key[order[j + 1]] == key[order[i]]:
            j += 1
        if j > i:
            bucket = order[i:j + 1].tolist()
            closed = {v: frozenset(adj[v]) | {v} for v in bucket}
            for a_i, a in enumerate(bucket):
                if rep[a] != a:
                    continue
                for b in bucket[a_i + 1:]:
                    if rep[b] == b and closed[a] == closed[b]:
                        rep[b] = a
        i = j + 1
    reps, group_of = np.unique(rep, return_inverse=True)
    members = [[] for _ in reps]
    for v, gi in enumerate(group_of.tolist()):
        members[gi].append(v)
    members = [np.array(m, dtype=np.int64) for m in members]
    weight = np.array([g.weight[m].sum() for m in members], dtype=np.int64)
    src = group_of[np.repeat(np.arange(n), deg)]
    dst = group_of[g.adj]
    keep = src != dst
    m = reps.size
    k = np.unique(src[keep] * m + dst[keep])
    r, c = np.divmod(k, max(m, 1))
    ptr = np.zeros(m + 1, dtype=np.int64)
    np.add.at(ptr, r + 1, 1)
    return Graph(np.cumsum(ptr), c, weight), members


def _expand(order, members) -> np.ndarray:
    if not members:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([members[v] for v in order])


# --- minimum degree ---------------------------------------------------------

def _md_order(adj, weight, nodes=None) -> list[int]:
    """Approximate minimum external degree on a quotient graph.

    ``adj[v]`` is the neighbour set of vertex ``v``; only the ids in ``nodes``
    (default: all) take part, and their neighbour sets must stay inside
    ``nodes``. After each elimination the degrees of the affected variables
    are replaced by the usual upper bound

        min(d_old + |Lp|, |A_v| + |Lp| + sum_e |Le minus Lp|)

    (all sizes weighted, ``v`` itself excluded), and elements whose variables
    all lie in the new element are absorbed.
    """
    nodes = list(range(len(adj))) if nodes is None else list(nodes)
    w = weight
    var_adj = {v: set(adj[v]) for v in nodes}
    var_elem = {v: set() for v in nodes}
    elem: dict = {}
    welem: dict = {}
    w_of = w.__getitem__
    deg = {v: sum(map(w_of, var_adj[v])) for v in nodes}
    remaining = sum(map(w_of, nodes))
    heap = [(deg[v], v) for v in nodes]
    heapq.heapify(heap)
    done = set()
    out = []
    while heap:
        d, p = heapq.heappop(heap)
        if p in done or d != deg[p]:
            continue
        done.add(p)
        out.append(p)
        remaining -= w[p]
        lp = var_adj.pop(p)
        absorbed = var_elem.pop(p)
        for e in absorbed:
            lp |= elem.pop(e)
            del welem[e]
        lp.discard(p)
        elem[p] = lp
        wlp = sum(map(w_of, lp))
        welem[p] = wlp
        # weighted |Le minus Lp| for every other element touching Lp
        ext: dict = {}
        for v in lp:
            ve = var_elem[v]
            ve -= absorbed
            wv = w[v]
            for e in ve:
                ext[e] = ext.get(e, welem[e]) - wv
        for e, x in ext.items():
            if x == 0:
                for v in elem.pop(e):
                    var_elem[v].discard(e)
                del welem[e]
        for v in lp:
            var_elem[v].add(p)
            va = var_adj[v]
            va.discard(p)
            va -= lp
        for v in lp:
            wv = w[v]
            bound = sum(map(w_of, var_adj[v])) + wlp - wv
            for e in var_elem[v]:
                if e != p:
                    bound += ext.get(e, welem[e])
            dv = min(remaining - wv, deg[v] + wlp - wv, bound)
            deg[v] = dv
            heapq.heappush(heap, (dv, v))
    return out


def min_degree(pattern: CsrMatrix) -> Permutation:
    """Approximate minimum degree ordering of ``pattern + pattern^T``.

    At each step the (super)variable with the smallest approximate weighted
    external degree is eliminated; ties go to the lowest vertex id.
    """
    cg, members = compress(symmetric_graph(pattern))
    adj = [set(a) for a in cg.adjacency_lists()]
    order = _md_order(adj, cg.weight.tolist())
    return Permutation(_expand(order, members))


# --- nested dissection ------------------------------------------------------

def _bfs_levels(adj, start, inside):
    """Level sets of a breadth-first search restricted to ``inside``."""
    seen = {start}
    levels = [[start]]
    while True:
        nxt = []
        for v in levels[-1]:
            for u in adj[v]:
                if u in inside and u not in seen:
                    seen.add(u)
                    nxt.append(u)
        if not nxt:
            return levels
        levels.append(sorted(nxt))


def _pseudo_peripheral(adj, inside, start):
    levels = _bfs_levels(adj, start, inside)
    while True:
        last = levels[-1]
        cand = min(last, key=lambda v: (sum(1 for u in adj[v] if u in inside), v))
        new = _bfs_levels(adj, cand, inside)
        if len(new) <= len(levels):
            return start, levels
        start, levels = cand, new


def _components(adj, nodes):
    inside = set(nodes)
    seen = set()
    comps = []
    for s in sorted(nodes):
        if s in seen:
            continue
        seen.add(s)
        comp = [s]
        q = deque([s])
        while q:
            v = q.popleft()
            for u in adj[v]:
                if u in inside and u not in seen:
                    seen.add(u)
                    comp.append(u)
                    q.append(u)
        comps.append(sorted(comp))
    return comps


def _ratio_score(wa, wb, ws):
    """Separator weight relative to the product of the part weights (lower is better)."""
    return ws * (wa + wb + ws) / (wa * wb)


def _level_separator(adj, weight, nodes):
    """Split ``nodes`` (connected) into (part_a, part_b, separator) with a BFS level set."""
    inside = set(nodes)
    start = min(nodes, key=lambda v: (sum(1 for u in adj[v] if u in inside), v))
    _, levels = _pseudo_peripheral(adj, inside, start)
    if len(levels) < 3:
        return None
    lw = [sum(weight[v] for v in lev) for lev in levels]
    total = sum(lw)
    best = None
    before = 0
    for k in range(1, len(levels) - 1):
        before += lw[k - 1]
        after = total - before - lw[k]
        if before == 0 or after == 0:
            continue
        score = _ratio_score(before, after, lw[k])
        if best is None or score < best[0]:
            best = (score, k)
    if best is None:
        return None
    k = best[1]
    a = [v for lev in levels[:k] for v in lev]
    b = [v for lev in levels[k + 1:] for v in lev]
    sep = list(levels[k])
    # drop separator vertices that do not touch one of the sides
    a_set, b_set = set(a), set(b)
    keep = []
    for v in sep:
        if not any(u in b_set for u in adj[v]):
            a.append(v)
            a_set.add(v)
        elif not any(u in a_set for u in adj[v]):
            b.append(v)
            b_set.add(v)
        else:
            keep.append(v)
    return sorted(a), sorted(b), sorted(keep)


def _spectral_separator(adj, weight, nodes):
    """Fiedler-vector bisection turned into a vertex separator by a minimum vertex cover."""
    import scipy.sparse as sp
    from scipy.sparse.csgraph import maximum_bipartite_matching

    nodes = sorted(nodes)
    m = len(nodes)
    loc = {v: i for i, v in enumerate(nodes)}
    rows, cols = [], []
    for v in nodes:
        for u in adj[v]:
            j = loc.get(u)
            if j is not None:
                rows.append(loc[v])
                cols.append(j)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    deg = np.asarray(A.sum(axis=1)).ravel()
    lap = sp.diags(deg) - A
    fiedler = _fiedler(lap)
    w = np.array([weight[v] for v in nodes], dtype=float)
    order = np.lexsort((np.arange(m), fiedler))
    half = np.searchsorted(np.cumsum(w[order]), 0.5 * w.sum())
    side = np.zeros(m, dtype=bool)
    side[order[half + 1:]] = True
    # bipartite graph of cut edges: rows = side False, cols = side True
    r, c = np.array(rows), np.array(cols)
    cut = (~side[r]) & side[c]
    if not cut.any():
        return None
    left = np.unique(r[cut])
    right = np.unique(c[cut])
    li = {v: i for i, v in enumerate(left.tolist())}
    ri = {v: i for i, v in enumerate(right.tolist())}
    B = sp.csr_matrix((np.ones(int(cut.sum())),
                       ([li[v] for v in r[cut].tolist()], [ri[v] for v in c[cut].tolist()])),
                      shape=(left.size, right.size))
    match = maximum_bipartite_matching(B, perm_type="column")
    # Koenig: Z = vertices reachable from unmatched left vertices by alternating paths
    match_r = np.full(right.size, -1)
    matched_l = match >= 0
    match_r[match[matched_l]] = np.flatnonzero(matched_l)
    zl = np.zeros(left.size, dtype=bool)
    zr = np.zeros(right.size, dtype=bool)
    q = deque(np.flatnonzero(~matched_l).tolist())
    zl[list(q)] = True
    while q:
        i = q.popleft()
        for j in B.indices[B.indptr[i]:B.indptr[i + 1]].tolist():
            if not zr[j] and match[i] != j:
                zr[j] = True
                k = match_r[j]
                if k >= 0 and not zl[k]:
                    zl[k] = True
                    q.append(k)
    cover = np.concatenate([left[~zl], right[zr]])
    sep_mask = np.zeros(m, dtype=bool)
    sep_mask[cover] = True
    a = [nodes[i] for i in np.flatnonzero(~side & ~sep_mask)]
    b = [nodes[i] for i in np.flatnonzero(side & ~sep_mask)]
    s = [nodes[i] for i in np.flatnonzero(sep_mask)]
    if not a or not b:
        return None
    return a, b, s


def _fiedler(lap):
    m = lap.shape[0]
    if m <= 400:
        vals, vecs = np.linalg.eigh(lap.toarray())
        f = vecs[:, 1]
    else:
        from scipy.sparse.linalg import eigsh
        v0 = np.cos(np.arange(m) + 0.5)
        vals, vecs = eigsh(lap.tocsc(), k=2, sigma=-1e-3, which="LM", v0=v0)
        f = vecs[:, np.argsort(vals)[1]]
    # fix the sign so the result does not depend on the eigensolver
    i = int(np.argmax(np.abs(f)))
    return f if f[i] > 0 else -f


def _separator(adj, weight, nodes):
    """Best of the level-set and spectral separators, scored by size and balance."""
    best = None
    for fn in (_level_separator, _spectral_separator):
        split = fn(adj, weight, nodes)
        if split is None:
            continue
        a, b, s = split
        wa, wb, ws = (sum(weight[v] for v in x) for x in (a, b, s))
        score = _ratio_score(wa, wb, ws)
        if best is None or score < best[0]:
            best = (score, split)
    return None if best is None else best[1]


def _nd_order(adj, weight, nodes, leaf_size, out):
    stack = [(nodes, None)]
    # explicit stack of (nodes, separator-to-emit) frames to avoid deep recursion
    while stack:
        nodes, sep = stack.pop()
        if sep is not None:
            out.extend(sep)
            continue
        if len(nodes) <= leaf_size:
            out.extend(_leaf_md(adj, weight, nodes))
            continue
        comps = _components(adj, nodes)
        if len(comps) > 1:
            for comp in reversed(comps):
                stack.append((comp, None))
            continue
        split = _separator(adj, weight, nodes)
        if split is None:
            out.extend(_leaf_md(adj, weight, nodes))
            continue
        a, b, s = split
        stack.append((None, s))
        stack.append((b, None))
        stack.append((a, None))


def _leaf_md(adj, weight, nodes):
    inside = set(nodes)
    sub = {v: {u for u in adj[v] if u in inside} for v in nodes}
    return _md_order(sub, weight, nodes=sorted(nodes))


def nested_dissection(pattern: CsrMatrix, leaf_size: int = LEAF_SIZE) -> Permutation:
    """Recursive nested dissection of ``pattern + pattern^T``.

    Each connected piece larger than ``leaf_size`` vertices is split by the
    better (smaller and more balanced) of two vertex separators: a level set
    of a breadth-first search rooted at a pseudo-peripheral vertex, and a
    minimum vertex cover of the edges cut by a Fiedler-vector bisection. The
    two halves are ordered first and the separator last. Leaves are ordered
    by minimum degree.
    """
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    cg, members = compress(symmetric_graph(pattern))
    adj = [set(a) for a in cg.adjacency_lists()]
    out: list[int] = []
    if cg.n:
        _nd_order(adj, cg.weight.tolist(), list(range(cg.n)), leaf_size, out)
    return Permutation(_expand(out, members))


def natural(pattern: CsrMatrix) -> Permutation:
    if pattern.n_rows != pattern.n_cols:
        raise ValueError(f"ordering needs a square pattern, got {pattern.shape}")
    return Permutation.identity(pattern.n_rows)


_METHODS = {"md": min_degree, "nd": nested_dissection, "natural": natural}


def order(pattern: CsrMatrix, method: str = "nd") -> Permutation:
    try:
        fn = _METHODS[method.lower()]
    except KeyError:
        raise ValueError(f"unknown ordering {method!r}; choose from {sorted(_METHODS)}") from None
    return fn(pattern)
