"""Structured hexahedral channel meshes.

Nodes are numbered lexicographically with x varying fastest::

    node(i, j, k) = i + (nx + 1) * (j + (ny + 1) * k)

Elements are 8-node trilinear bricks with the local ordering

    0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0) 4:(0,0,1) 5:(1,0,1) 6:(1,1,1) 7:(0,1,1)

in (xi, eta, zeta) reference coordinates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "Tag",
    "Mesh",
    "build_channel_mesh",
    "boundary_sets",
    "LOCAL_CORNERS",
]

LOCAL_CORNERS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=np.int64,
)


class Tag(IntEnum):
    INTERIOR = 0
    INLET = 1
    OUTLET = 2
    WALL = 3


@dataclass(frozen=True, eq=False)
class Mesh:
    nx: int
    ny: int
    nz: int
    Lx: float
    Ly: float
    Lz: float
    coords: np.ndarray = field(repr=False)
    elems: np.ndarray = field(repr=False)
    boundary_tag: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]

    @property
    def n_dofs(self) -> int:
        """Velocity unknowns (u, v, w per node)."""
        return 3 * self.n_nodes

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    def node_id(self, i, j, k):
        return i + (self.nx + 1) * (j + (self.ny + 1) * k)

    def node_ijk(self, node):
        node = np.asarray(node)
        i = node % (self.nx + 1)
        rest = node // (self.nx + 1)
        return i, rest % (self.ny + 1), rest // (self.ny + 1)

    def to_json(self) -> str:
        """Debug dump of nodes, elements and tags."""
        return json.dumps(
            {
                "shape": [self.nx, self.ny, self.nz],
                "lengths": [self.Lx, self.Ly, self.Lz],
                "coords": self.coords.tolist(),
                "elems": self.elems.tolist(),
                "tags": [Tag(t).name.lower() for t in self.boundary_tag],
            }
        )

    def node_adjacency(self):
        """Node graph of the mesh (nodes sharing an element) as CSR arrays, no self loops."""
        e = self.elems
        rows = np.repeat(e, 8, axis=1).ravel()
        cols = np.tile(e, (1, 8)).ravel()
        keep = rows != cols
        key = np.unique(rows[keep] * self.n_nodes + cols[keep])
        r, c = np.divmod(key, self.n_nodes)
        ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(ptr, r + 1, 1)
        return np.cumsum(ptr), c


def build_channel_mesh(nx: int, ny: int, nz: int,
                       Lx: float = 10.0, Ly: float = 1.0, Lz: float = 1.0) -> Mesh:
    """Uniform ``nx x ny x nz`` brick mesh of the duct ``[0,Lx] x [0,Ly] x [0,Lz]``.

    The inlet is the ``x = 0`` face, the outlet ``x = Lx``; the four faces
    normal to y and z are no-slip walls. Wall tags take precedence on shared
    edges and corners.
    """
    for name, n in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(n) != n or n < 1:
            raise ValueError(f"{name} must be a positive integer, got {n!r}")
    for name, length in (("Lx", Lx), ("Ly", Ly), ("Lz", Lz)):
        if not np.isfinite(length) or length <= 0:
            raise ValueError(f"{name} must be positive, got {length!r}")
    nx, ny, nz = int(nx), int(ny), int(nz)

    k, j, i = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1),
                          indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    coords = np.column_stack([i * (Lx / nx), j * (Ly / ny), k * (Lz / nz)])

    ek, ej, ei = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    ei, ej, ek = ei.ravel(), ej.ravel(), ek.ravel()
    off = LOCAL_CORNERS
    elems = ((ei[:, None] + off[:, 0])
             + (nx + 1) * ((ej[:, None] + off[:, 1]) + (ny + 1) * (ek[:, None] + off[:, 2]))).astype(np.int64)

    tag = np.full(i.size, Tag.INTERIOR, dtype=np.int8)
    tag[i == 0] = Tag.INLET
    tag[i == nx] = Tag.OUTLET
    tag[(j == 0) | (j == ny) | (k == 0) | (k == nz)] = Tag.WALL

    for a in (coords, elems, tag):
        a.setflags(write=False)
    return Mesh(nx, ny, nz, float(Lx), float(Ly), float(Lz), coords, elems, tag)


def boundary_sets(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sorted node ids of the inlet, outlet and wall sets."""
    t = mesh.boundary_tag
    return (np.flatnonzero(t == Tag.INLET),
            np.flatnonzero(t == Tag.OUTLET),
            np.flatnonzero(t == Tag.WALL))
