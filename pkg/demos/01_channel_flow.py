"""
Laminar flow through a square duct
==================================

Plug flow enters a 10:1:1 duct and develops under no-slip walls. Newton's
method with additive Schwarz inner solves gets the field in a handful of
outer steps.
"""
import numpy as np

from ddflow import FlowParams, build_channel_mesh, extend_overlap, nas_solve, partition_nodes
from ddflow.fem import centerline_velocity, divergence_norm, section_mean_velocity

mesh = build_channel_mesh(20, 6, 6)
print(f"{mesh.n_nodes} nodes, {mesh.n_dofs} unknowns")

# two overlapping slabs, one ring of halo nodes each
smap = extend_overlap(mesh, partition_nodes(mesh, 2), layers=1)
print("owned nodes per subdomain:", [o.size for o in smap.owned])

state = nas_solve(mesh, FlowParams(Re=100.0, lam=1e7), smap)
for rec in state.history:
    print(f"k={rec.k}  |dX|={rec.update_norm:.3e}  inner={rec.inner_iterations}")

# the core accelerates while the wall layer slows down
for i in (0, 5, 10, 20):
    uc = centerline_velocity(mesh, state.X, i)
    um = section_mean_velocity(mesh, state.X, i)
    print(f"x={mesh.Lx * i / mesh.nx:5.1f}  u_center={uc:.3f}  u_center/u_mean={uc / um:.3f}")

# the penalty keeps div u of order 1/lambda
print("divergence norm:", f"{divergence_norm(mesh, state.X):.2e}")

# cross-section of u at the outlet, rows are y, columns z
j, k = np.meshgrid(np.arange(mesh.ny + 1), np.arange(mesh.nz + 1), indexing="ij")
u = state.X[3 * mesh.node_id(mesh.nx, j, k)]
print(np.array2string(u, precision=2, suppress_small=True))
