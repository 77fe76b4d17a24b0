"""Galerkin discretization of the penalty Navier-Stokes equations on Q1 bricks.

Momentum in conservative form with the incompressibility constraint replaced
by a penalty term,

    d/dx_j (u_j u_i) = lam d/dx_i (div u) + d/dx_j ( (d_j u_i + d_i u_j) / Re ),

is tested with the trilinear shape functions. The viscous and penalty terms
are integrated by parts. On the outlet face the transposed-gradient part of
the viscous traction is kept as a boundary integral, so the natural condition
there is ``(1/Re) du_i/dn - p n_i = 0`` with ``p = -lam div u`` ("do nothing"),
which admits the fully developed profile with zero streamwise gradients.
Convection and viscosity use 2x2x2 Gauss points, the penalty term a single
point at the element centre and the outlet integral 2x2 points on the face.

Unknowns are ordered node-major: dof ``3*node + c`` with ``c`` in (u, v, w).
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .mesh import LOCAL_CORNERS, Mesh, boundary_sets
from .sparse import CsrMatrix, from_triplets

__all__ = [
    "FlowParams",
    "AssemblyOutput",
    "DegenerateElementError",
    "element_residual_jacobian",
    "element_batch",
    "assemble",
    "apply_dirichlet",
    "dirichlet_values",
    "Assembler",
    "uniform_inlet_guess",
    "divergence_norm",
    "section_mean_velocity",
    "centerline_velocity",
]

DEFAULT_LAMBDA = 1e7


class DegenerateElementError(ValueError):
    def __init__(self, element, detj):
        super().__init__(f"element {element} has non-positive mapping determinant {detj:.3e}")
        self.element = element


@dataclass(frozen=True)
class FlowParams:
    Re: float = 100.0
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.Re > 0:
            raise ValueError(f"Re must be positive, got {self.Re!r}")
        if not self.lam > 0:
            raise ValueError(f"penalty parameter must be positive, got {self.lam!r}")


@dataclass(frozen=True, eq=False)
class AssemblyOutput:
    F: np.ndarray
    J: CsrMatrix


def _shape(points):
    """Trilinear shape functions and reference gradients at ``points`` in [-1,1]^3."""
    s = 2.0 * LOCAL_CORNERS - 1.0
    p = np.atleast_2d(points)
    f = 1.0 + p[:, None, :] * s[None, :, :]  # (q, a, d)
    N = 0.125 * f.prod(axis=2)
    dN = np.empty(f.shape)
    for d in range(3):
        others = [e for e in range(3) if e != d]
        dN[:, :, d] = 0.125 * s[None, :, d] * f[:, :, others[0]] * f[:, :, others[1]]
    return N, dN


_g = 1.0 / np.sqrt(3.0)
_GAUSS2 = np.array([[x, y, z] for z in (-_g, _g) for y in (-_g, _g) for x in (-_g, _g)])
_N2, _DN2 = _shape(_GAUSS2)
_W2 = np.ones(8)
_N1, _DN1 = _shape(np.zeros((1, 3)))
_W1 = np.array([8.0])


def _geometry(coords, dN, first_elem=0):
    jac = np.einsum("ead,qak->eqdk", coords, dN)
    det = np.linalg.det(jac)
    bad = np.argwhere(det <= 0)
    if bad.size:
        e, q = bad[0]
        raise DegenerateElementError(first_elem + int(e), float(det[e, q]))
    inv = np.linalg.inv(jac)
    G = np.einsum("qad,eqdj->eqaj", dN, inv)
    return det, G


def element_batch(coords, xe, params: FlowParams, jacobian: bool = True, first_elem: int = 0):
    """Residuals ``(E, 24)`` and Jacobians ``(E, 24, 24)`` for a batch of elements."""
    coords = np.asarray(coords, dtype=np.float64)
    U = np.asarray(xe, dtype=np.float64).reshape(-1, 8, 3)
    E = U.shape[0]
    inv_re, lam = 1.0 / params.Re, params.lam

    det, G = _geometry(coords, _DN2, first_elem)
    w = det * _W2
    u = np.einsum("qa,eai->eqi", _N2, U)
    gu = np.einsum("eqaj,eai->eqij", G, U)
    div = np.einsum("eqii->eq", gu)
    conv = np.einsum("eqj,eqij->eqi", u, gu) + u * div[..., None]
    tau = inv_re * (gu + gu.transpose(0, 1, 3, 2))

    det1, G1 = _geometry(coords, _DN1, first_elem)
    w1 = det1[:, 0] * _W1[0]
    G1 = G1[:, 0]
    div1 = np.einsum("eii->e", np.einsum("eaj,eai->eij", G1, U))

    re = (np.einsum("eq,qa,eqi->eai", w, _N2, conv)
          + np.einsum("eq,eqaj,eqij->eai", w, G, tau)
          + (lam * w1 * div1)[:, None, None] * G1)
    re = re.reshape(E, 24)
    if not jacobian:
        return re, None

    wN = w[:, :, None] * _N2[None]
    # d(conv_i)/d(U_bk) = N_b d_k u_i + delta_ik (u . grad N_b + N_b div) + u_i dN_b/dx_k
    K = np.einsum("eqa,qb,eqik->eaibk", wN, _N2, gu, optimize=True)
    K += np.einsum("eqa,eqi,eqbk->eaibk", wN, u, G, optimize=True)
    diag = (np.einsum("eqa,eqj,eqbj->eab", wN, u, G, optimize=True)
            + np.einsum("eqa,qb,eq->eab", wN, _N2, div, optimize=True)
            + inv_re * np.einsum("eq,eqaj,eqbj->eab", w, G, G, optimize=True))
    K += inv_re * np.einsum("eq,eqak,eqbi->eaibk", w, G, G, optimize=True)
    K += lam * w1[:, None, None, None, None] * np.einsum("eai,ebk->eaibk", G1, G1)
    idx = np.arange(3)
    K[:, :, idx, :, idx] += diag[None]
    return re, K.reshape(E, 24, 24)


# face xi = +1 of the reference brick
_FACE_NODES = np.array([1, 2, 5, 6])
_FACE_PTS = np.array([[1.0, y, z] for z in (-_g, _g) for y in (-_g, _g)])
_NF, _DNF = _shape(_FACE_PTS)


def outlet_batch(coords, xe, params: FlowParams, jacobian: bool = True):
    """Outlet-face term ``-(1/Re) int N_a d(u_x)/dx_i dS`` on the ``xi = +1`` face."""
    coords = np.asarray(coords, dtype=np.float64)
    U = np.asarray(xe, dtype=np.float64).reshape(-1, 8, 3)
    E = U.shape[0]
    jac = np.einsum("ead,qak->eqdk", coords, _DNF)
    G = np.einsum("qad,eqdj->eqaj", _DNF, np.linalg.inv(jac))
    dS = np.linalg.norm(np.cross(jac[..., 1], jac[..., 2]), axis=-1)
    wN = (dS / params.Re)[:, :, None] * _NF[None]
    gux = np.einsum("eqai,ea->eqi", G, U[:, :, 0])
    re = -np.einsum("eqa,eqi->eai", wN, gux).reshape(E, 24)
    if not jacobian:
        return re, None
    K = np.zeros((E, 8, 3, 8, 3))
    K[:, :, :, :, 0] = -np.einsum("eqa,eqbi->eaib", wN, G)
    return re, K.reshape(E, 24, 24)


def element_residual_jacobian(coords, xe, p: FlowParams):
    """Element residual (24,) and analytic Jacobian (24, 24) for one brick."""
    re, ke = element_batch(np.asarray(coords)[None], np.asarray(xe)[None], p)
    return re[0], ke[0]


def dirichlet_values(mesh: Mesh):
    """Constrained dof ids and their prescribed values (inlet u=1, walls no-slip)."""
    inlet, _, wall = boundary_sets(mesh)
    nodes = np.concatenate([inlet, wall])
    dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
    g = np.zeros((nodes.size, 3))
    g[: inlet.size, 0] = 1.0
    order = np.argsort(dofs)
    return dofs[order], g.ravel()[order]


class Assembler:
    """Reusable global assembly for one mesh: pattern and scatter map are built once."""

    chunk = 2048

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        n = mesh.n_dofs
        ldofs = (3 * mesh.elems[:, :, None] + np.arange(3)).reshape(-1, 24)
        self.ldofs = ldofs
        rows = np.repeat(ldofs, 24, axis=1).ravel()
        cols = np.tile(ldofs, (1, 24)).ravel()
        pattern = from_triplets((rows, cols, np.zeros(rows.size)), n, n)
        self.pattern = pattern
        # slot of every element entry in the CSR value array
        key = pattern.row_indices() * n + pattern.col_idx
        self.slots = np.searchsorted(key, rows * n + cols)
        self.bc_dofs, self.bc_values = dirichlet_values(mesh)
        self._elem_coords = mesh.coords[mesh.elems]
        diag_slot = np.searchsorted(key, self.bc_dofs * n + self.bc_dofs)
        self._bc_row_slots = np.concatenate(
            [np.arange(pattern.row_ptr[d], pattern.row_ptr[d + 1]) for d in self.bc_dofs]
        ) if self.bc_dofs.size else np.zeros(0, dtype=np.int64)
        self._bc_diag_slots = diag_slot
        ei = np.arange(mesh.n_elems) % mesh.nx
        self.outlet_elems = np.flatnonzero(ei == mesh.nx - 1)
        self._outlet_slots = self.slots.reshape(-1, 576)[self.outlet_elems].ravel()

    def raw(self, X, params: FlowParams, jacobian: bool = True):
        """Assembled residual and Jacobian before boundary conditions."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape != (self.mesh.n_dofs,):
            raise ValueError(f"field vector has shape {X.shape}, expected ({self.mesh.n_dofs},)")
        F = np.zeros(self.mesh.n_dofs)
        vals = np.zeros(self.pattern.nnz) if jacobian else None
        E = self.mesh.n_elems
        for s in range(0, E, self.chunk):
            sl = slice(s, min(s + self.chunk, E))
            re, ke = element_batch(self._elem_coords[sl], X[self.ldofs[sl]], params,
                                   jacobian=jacobian, first_elem=s)
            F += np.bincount(self.ldofs[sl].ravel(), weights=re.ravel(), minlength=F.size)
            if jacobian:
                sslots = self.slots[s * 576:sl.stop * 576]
                vals += np.bincount(sslots, weights=ke.ravel(), minlength=vals.size)
        oe = self.outlet_elems
        re, ke = outlet_batch(self._elem_coords[oe], X[self.ldofs[oe]], params, jacobian)
        F += np.bincount(self.ldofs[oe].ravel(), weights=re.ravel(), minlength=F.size)
        if jacobian:
            vals += np.bincount(self._outlet_slots, weights=ke.ravel(), minlength=vals.size)
        J = self.pattern.with_values(vals) if jacobian else None
        return AssemblyOutput(F, J)

    def apply_dirichlet(self, out: AssemblyOutput, X) -> AssemblyOutput:
        F = out.F.copy()
        F[self.bc_dofs] = np.asarray(X)[self.bc_dofs] - self.bc_values
        J = out.J
        if J is not None:
            vals = J.values.copy()
            vals[self._bc_row_slots] = 0.0
            vals[self._bc_diag_slots] = 1.0
            J = J.with_values(vals)
        return AssemblyOutput(F, J)

    def assemble(self, X, params: FlowParams, jacobian: bool = True) -> AssemblyOutput:
        return self.apply_dirichlet(self.raw(X, params, jacobian), X)

    def residual(self, X, params: FlowParams) -> np.ndarray:
        return self.assemble(X, params, jacobian=False).F


_assemblers: "weakref.WeakKeyDictionary[Mesh, Assembler]" = weakref.WeakKeyDictionary()


def _assembler(mesh: Mesh) -> Assembler:
    a = _assemblers.get(mesh)
    if a is None:
        a = _assemblers[mesh] = Assembler(mesh)
    return a


def assemble(mesh: Mesh, X, p: FlowParams) -> AssemblyOutput:
    """Global residual ``F`` and Jacobian ``J`` with inlet and wall conditions imposed."""
    return _assembler(mesh).assemble(X, p)


def apply_dirichlet(out: AssemblyOutput, sets, X, mesh: Mesh | None = None) -> AssemblyOutput:
    """Replace constrained rows by identity rows and set ``F[i] = X[i] - g_i``.

    ``sets`` is the ``(inlet, outlet, wall)`` triple from :func:`boundary_sets`;
    inlet nodes get ``(1, 0, 0)``, wall nodes ``(0, 0, 0)``. Outlet nodes are
    left free. Columns are not touched.
    """
    inlet, _, wall = (np.asarray(s, dtype=np.int64) for s in sets)
    nodes = np.concatenate([inlet, wall])
    dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
    g = np.zeros((nodes.size, 3))
    g[: inlet.size, 0] = 1.0
    g = g.ravel()
    X = np.asarray(X, dtype=np.float64)
    F = out.F.copy()
    F[dofs] = X[dofs] - g
    J = out.J
    if J is not None:
        is_bc = np.zeros(J.n_rows, dtype=bool)
        is_bc[dofs] = True
        r = J.row_indices()
        vals = J.values.copy()
        on = is_bc[r]
        vals[on] = np.where(J.col_idx[on] == r[on], 1.0, 0.0)
        missing = np.setdiff1d(dofs, r[on & (J.col_idx == r)])
        if missing.size:
            raise ValueError(f"Jacobian pattern lacks diagonal entries for dofs {missing[:5]}")
        J = J.with_values(vals)
    return AssemblyOutput(F, J)


def uniform_inlet_guess(mesh: Mesh) -> np.ndarray:
    """Plug flow ``u = 1, v = w = 0`` at every node."""
    X = np.zeros(mesh.n_dofs)
    X[0::3] = 1.0
    return X


def divergence_norm(mesh: Mesh, X) -> float:
    """L2 norm of ``div u`` sampled at element centroids.

    This is the one-point rule the penalty term is integrated with, so it is
    the divergence the penalty actually controls.
    """
    U = np.asarray(X)[(3 * mesh.elems[:, :, None] + np.arange(3))]
    det, G = _geometry(mesh.coords[mesh.elems], _DN1)
    div = np.einsum("eqaj,eaj->eq", G, U)
    return float(np.sqrt(np.sum(det * _W1 * div ** 2)))


def _trapezoid_weights(n: int, length: float) -> np.ndarray:
    w = np.full(n + 1, length / n)
    w[[0, -1]] *= 0.5
    return w


def section_mean_velocity(mesh: Mesh, X, i: int | None = None) -> float:
    """Trapezoid-rule mean of ``u`` over the cross-section at node plane ``i`` (default outlet)."""
    i = mesh.nx if i is None else int(i)
    if not 0 <= i <= mesh.nx:
        raise ValueError(f"plane index {i} outside 0..{mesh.nx}")
    wy = _trapezoid_weights(mesh.ny, mesh.Ly)
    wz = _trapezoid_weights(mesh.nz, mesh.Lz)
    j, k = np.meshgrid(np.arange(mesh.ny + 1), np.arange(mesh.nz + 1), indexing="ij")
    u = np.asarray(X)[3 * mesh.node_id(i, j, k)]
    return float(np.sum(u * wy[:, None] * wz[None, :]) / (mesh.Ly * mesh.Lz))


def centerline_velocity(mesh: Mesh, X, i: int | None = None) -> float:
    """``u`` on the duct axis at node plane ``i`` (default outlet), bilinear in the section."""
    i = mesh.nx if i is None else int(i)
    if not 0 <= i <= mesh.nx:
        raise ValueError(f"plane index {i} outside 0..{mesh.nx}")
    X = np.asarray(X)
    out = 0.0
    fy, fz = mesh.ny / 2.0, mesh.nz / 2.0
    j0, k0 = int(np.floor(fy)), int(np.floor(fz))
    ty, tz = fy - j0, fz - k0
    for dj, wj in ((0, 1.0 - ty), (1, ty)):
        for dk, wk in ((0, 1.0 - tz), (1, tz)):
            if wj * wk:
                out += wj * wk * X[3 * mesh.node_id(i, j0 + dj, k0 + dk)]
    return float(out)
