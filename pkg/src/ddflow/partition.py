"""Subdomain partitioning, overlap growth and restriction/prolongation maps.

Nodes are split by recursive coordinate bisection along the longest axis
of each piece; cuts are placed between coordinate planes when that keeps
the balance, so structured meshes get plane-aligned subdomains. Each owned
set is then grown by breadth-first rings of the node graph to form the
overlapping subdomain on which the local problems are posed.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh

__all__ = [
    "SubdomainMap",
    "bisect_coordinates",
    "graph_growing",
    "partition_nodes",
    "build_subdomain_map",
    "extend_overlap",
    "restrict",
    "prolong",
]

DOFS_PER_NODE = 3


def _cut_index(x: np.ndarray, target: int) -> int:
    """Split point in the sorted coordinates ``x`` nearest ``target``, preferring plane gaps."""
    n = x.size
    gaps = np.flatnonzero(np.diff(x) > 1e-12 * max(1.0, float(np.abs(x).max()))) + 1
    if gaps.size:
        best = int(gaps[np.argmin(np.abs(gaps - target))])
        small, big = sorted((best, n - best))
        t_small, t_big = sorted((target, n - target))
        # accept a plane cut unless it is much worse balanced than an exact split
        if small > 0 and big / max(small, 1) <= 1.2 * t_big / max(t_small, 1):
            return best
    return target


def bisect_coordinates(coords, s: int, ids=None) -> np.ndarray:
    """Owner array from recursive coordinate bisection of ``coords`` into ``s`` parts.

    Each piece is sorted along its longest extent (ties by id) and cut in
    proportion to the number of parts assigned to each side.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    n = coords.shape[0]
    if int(s) != s or s < 1:
        raise ValueError(f"subdomain count must be a positive integer, got {s!r}")
    if s > n:
        raise ValueError(f"cannot split {n} nodes into {s} subdomains")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    owner = np.empty(n, dtype=np.int64)
    stack = [(np.arange(n), 0, int(s))]
    while stack:
        idx, first, parts = stack.pop()
        if parts == 1:
            owner[idx] = first
            continue
        pts = coords[idx]
        extent = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(extent))
        order = np.lexsort((ids[idx], pts[:, axis]))
        idx = idx[order]
        left = parts // 2
        target = int(round(idx.size * left / parts))
        target = min(max(target, left), idx.size - (parts - left))
        cut = _cut_index(pts[order, axis], target)
        if cut < left or idx.size - cut < parts - left:
            cut = target
        stack.append((idx[cut:], first + left, parts - left))
        stack.append((idx[:cut], first, left))
    return owner


def graph_growing(ptr, adj, s: int) -> np.ndarray:
    """Owner array from consecutive chunks of a breadth-first ordering.

    The search starts at a pseudo-peripheral node (lowest id among ties) and
    restarts at the lowest unvisited id for disconnected graphs.
    """
    ptr, adj = np.asarray(ptr), np.asarray(adj)
    n = ptr.size - 1
    if s < 1 or s > n:
        raise ValueError(f"cannot split {n} nodes into {s} subdomains")

    def bfs(start, seen):
        out = [start]
        seen[start] = True
        q = deque([start])
        while q:
            v = q.popleft()
            for u in adj[ptr[v]:ptr[v + 1]].tolist():
                if not seen[u]:
                    seen[u] = True
                    out.append(u)
                    q.append(u)
        return out

    start = 0
    for _ in range(8):
        far = bfs(start, np.zeros(n, dtype=bool))[-1]
        if far == start:
            break
        start = far
    seen = np.zeros(n, dtype=bool)
    order = bfs(start, seen)
    while len(order) < n:
        order += bfs(int(np.argmin(seen)), seen)
    owner = np.empty(n, dtype=np.int64)
    bounds = np.round(np.linspace(0, n, s + 1)).astype(int)
    for d in range(s):
        owner[order[bounds[d]:bounds[d + 1]]] = d
    return owner


def partition_nodes(mesh: Mesh, s: int, method: str = "rcb") -> np.ndarray:
    """Owner id of every mesh node; ``method`` is ``"rcb"`` or ``"bfs"``."""
    if int(s) != s or s < 1:
        raise ValueError(f"subdomain count must be a positive integer, got {s!r}")
    if s > mesh.n_nodes:
        raise ValueError(f"cannot split {mesh.n_nodes} nodes into {s} subdomains")
    if method == "rcb":
        return bisect_coordinates(mesh.coords, int(s))
    if method == "bfs":
        return graph_growing(*mesh.node_adjacency(), int(s))
    raise ValueError(f"unknown partition method {method!r}")


@dataclass(frozen=True, eq=False)
class SubdomainMap:
    """Owned, overlap and interface node sets plus dof-level index maps.

    ``dofs[i]`` lists (sorted) the global dofs of overlapping subdomain i; the
    local index of a dof is its position there. ``owned_local[i]`` are the
    local positions of the dofs owned by i and ``owned_dofs[i]`` their global
    ids, in the same order.
    """

    s: int
    owner: np.ndarray = field(repr=False)
    owned: list = field(repr=False)
    overlap: list = field(repr=False)
    interface: list = field(repr=False)
    dofs: list = field(repr=False)
    owned_local: list = field(repr=False)
    owned_dofs: list = field(repr=False)
    dofs_per_node: int = DOFS_PER_NODE
    layers: int = 1

    @property
    def n_nodes(self) -> int:
        return self.owner.size

    @property
    def n_dofs(self) -> int:
        return self.owner.size * self.dofs_per_node

    def halo(self, i: int) -> np.ndarray:
        return np.setdiff1d(self.overlap[i], self.owned[i])

    def is_interface_dof(self) -> np.ndarray:
        mask = np.zeros(self.n_dofs, dtype=bool)
        for nodes in self.interface:
            mask[_node_dofs(nodes, self.dofs_per_node)] = True
        return mask

    def relaxation(self, alpha_interior: float, alpha_interface: float) -> np.ndarray:
        """Per-dof relaxation factor: interface dofs get ``alpha_interface``."""
        return np.where(self.is_interface_dof(), alpha_interface, alpha_interior)

    def global_to_local(self, i: int, gdofs) -> np.ndarray:
        """Local positions of global dofs in subdomain i (-1 when absent)."""
        gdofs = np.asarray(gdofs)
        d = self.dofs[i]
        pos = np.searchsorted(d, gdofs)
        pos = np.minimum(pos, d.size - 1)
        return np.where(d[pos] == gdofs, pos, -1)

    def to_json(self) -> str:
        """Owner array and set sizes, for external visualization."""
        return json.dumps({
            "s": self.s,
            "layers": self.layers,
            "owner": self.owner.tolist(),
            "owned_sizes": [int(o.size) for o in self.owned],
            "overlap_sizes": [int(o.size) for o in self.overlap],
            "interface_sizes": [int(o.size) for o in self.interface],
        })


def _node_dofs(nodes, k):
    nodes = np.asarray(nodes, dtype=np.int64)
    return (k * nodes[:, None] + np.arange(k)).ravel()


def build_subdomain_map(ptr, adj, owner, layers: int = 1,
                        dofs_per_node: int = DOFS_PER_NODE) -> SubdomainMap:
    """Overlapping subdomains from an owner array on the graph ``(ptr, adj)``."""
    if int(layers) != layers or layers < 0:
        raise ValueError(f"overlap layers must be a non-negative integer, got {layers!r}")
    ptr, adj = np.asarray(ptr, dtype=np.int64), np.asarray(adj, dtype=np.int64)
    owner = np.asarray(owner, dtype=np.int64)
    n = ptr.size - 1
    if owner.shape != (n,):
        raise ValueError("owner array does not match the graph")
    s = int(owner.max()) + 1 if n else 0
    src = np.repeat(np.arange(n), np.diff(ptr))
    foreign = np.zeros(n, dtype=bool)
    np.logical_or.at(foreign, src, owner[adj] != owner[src])

    owned, overlap, interface, dofs, owned_local, owned_dofs = [], [], [], [], [], []
    for d in range(s):
        own = np.flatnonzero(owner == d)
        mask = owner == d
        for _ in range(int(layers)):
            grow = mask.copy()
            grow[adj[mask[src]]] = True
            mask = grow
        ov = np.flatnonzero(mask)
        g = _node_dofs(ov, dofs_per_node)
        od = _node_dofs(own, dofs_per_node)
        for a in (own, ov, g, od):
            a.setflags(write=False)
        owned.append(own)
        overlap.append(ov)
        interface.append(own[foreign[own]])
        dofs.append(g)
        owned_dofs.append(od)
        owned_local.append(np.searchsorted(g, od))
    return SubdomainMap(s, owner, owned, overlap, interface, dofs, owned_local, owned_dofs,
                        dofs_per_node, int(layers))


def extend_overlap(mesh: Mesh, owner, layers: int = 1) -> SubdomainMap:
    """Grow every owned set of ``owner`` by ``layers`` rings of the mesh node graph."""
    return build_subdomain_map(*mesh.node_adjacency(), owner, layers)


def _check(m: SubdomainMap, i: int):
    if not 0 <= i < m.s:
        raise IndexError(f"subdomain {i} out of range for s={m.s}")


def restrict(m: SubdomainMap, i: int, v) -> np.ndarray:
    """``R_i v``: the entries of a global vector on subdomain i."""
    _check(m, i)
    v = np.asarray(v)
    if v.shape[0] != m.n_dofs:
        raise ValueError(f"global vector has length {v.shape[0]}, expected {m.n_dofs}")
    return v[m.dofs[i]]


def prolong(m: SubdomainMap, i: int, v_local) -> np.ndarray:
    """``R_i^T v``: a global vector, zero outside subdomain i."""
    _check(m, i)
    v_local = np.asarray(v_local)
    if v_local.shape[0] != m.dofs[i].size:
        raise ValueError(f"local vector has length {v_local.shape[0]}, "
                         f"expected {m.dofs[i].size}")
    out = np.zeros((m.n_dofs,) + v_local.shape[1:], dtype=v_local.dtype)
    out[m.dofs[i]] = v_local
    return out
