import numpy as np
import pytest

from ddflow.fem import Assembler, FlowParams
from ddflow.mesh import build_channel_mesh
from ddflow.partition import build_subdomain_map, extend_overlap, partition_nodes
from ddflow.runtime import spawn
from ddflow.schwarz import (NewtonNonConvergence, SchwarzConfig, SchwarzNonConvergence,
                            initial_guess, mnas_solve, nas_solve, newton_solve,
                            schwarz_iterate)
from ddflow.sparse import from_dense, inf_norm, matvec
from oracles import direct_solve, empirical_orders

INNER_TOL = SchwarzConfig().inner_tol


def smap_for(mesh, s, layers=1):
    return extend_overlap(mesh, partition_nodes(mesh, s), layers)


def inner_solve(system, smap, cfg=SchwarzConfig()):
    with spawn(system.J, smap) as pool:
        pool.factorize(system.J)
        return schwarz_iterate(system.J, -system.F, np.zeros(system.F.size), pool, smap, cfg)


@pytest.fixture(scope="module")
def newton_pair():
    mesh = build_channel_mesh(20, 4, 4)
    smap = smap_for(mesh, 2)
    p = FlowParams(100.0, 1e7)
    return mesh, smap, nas_solve(mesh, p, smap), mnas_solve(mesh, p, smap)


def test_config_validation():
    for bad in ({"alpha_interior": 0.0}, {"alpha_interface": 1.5}, {"inner_tol": 0.0},
                {"combine": "multiplicative"}, {"max_inner": 0}):
        with pytest.raises(ValueError):
            SchwarzConfig(**bad)


def test_single_subdomain_is_direct(mesh_20x4x4, first_system_20x4x4):
    J, F = first_system_20x4x4.J, first_system_20x4x4.F
    res = inner_solve(first_system_20x4x4, smap_for(mesh_20x4x4, 1))
    assert res.iterations == 1
    r = matvec(J, res.p) + F
    assert inf_norm(r) / (J.norm_inf() * inf_norm(res.p) + inf_norm(F)) <= 1e-10
    ref = direct_solve(J, -F)
    assert inf_norm(res.p - ref) <= 1e-6 * inf_norm(ref)


def test_single_subdomain_with_stale_factors_keeps_iterating(mesh_20x4x4, first_system_20x4x4):
    J, F = first_system_20x4x4.J, first_system_20x4x4.F
    smap = smap_for(mesh_20x4x4, 1)
    J_old = J.with_values(J.values * 1.05)
    with spawn(J, smap) as pool:
        pool.factorize(J_old)
        res = schwarz_iterate(J, -F, np.zeros(F.size), pool, smap, factors_current=False)
    assert res.iterations > 1
    assert inf_norm(res.p - direct_solve(J, -F)) <= 1e-6


def test_zero_rhs(mesh_20x4x4, first_system_20x4x4):
    smap = smap_for(mesh_20x4x4, 2)
    J = first_system_20x4x4.J
    with spawn(J, smap) as pool:
        pool.factorize(J)
        res = schwarz_iterate(J, np.zeros(J.n_rows), np.zeros(J.n_rows), pool, smap)
    assert res.iterations == 1
    assert np.array_equal(res.p, np.zeros(J.n_rows))


@pytest.mark.parametrize("s,layers", [(2, 1), (2, 2), (4, 1), (4, 2)])
def test_matches_monolithic_solve(mesh_20x4x4, first_system_20x4x4, s, layers):
    res = inner_solve(first_system_20x4x4, smap_for(mesh_20x4x4, s, layers))
    ref = direct_solve(first_system_20x4x4.J, -first_system_20x4x4.F)
    assert inf_norm(res.p - ref) <= 1e-6


@pytest.mark.parametrize("s,layers", [
    (2, 1), (2, 2), (4, 2),
    pytest.param(4, 1, marks=pytest.mark.xfail(
        strict=True, reason="final contraction near 0.9: error is about 13x the last update")),
])
def test_matches_monolithic_solve_to_ten_inner_tol(mesh_20x4x4, first_system_20x4x4, s, layers):
    res = inner_solve(first_system_20x4x4, smap_for(mesh_20x4x4, s, layers))
    ref = direct_solve(first_system_20x4x4.J, -first_system_20x4x4.F)
    assert inf_norm(res.p - ref) <= 10 * INNER_TOL


def test_restricted_equals_sum_without_overlap(mesh_20x4x4, first_system_20x4x4):
    smap = smap_for(mesh_20x4x4, 2, 0)
    a = inner_solve(first_system_20x4x4, smap, SchwarzConfig(max_inner=3, inner_tol=1e3))
    b = inner_solve(first_system_20x4x4, smap,
                    SchwarzConfig(max_inner=3, inner_tol=1e3, combine="sum"))
    assert np.array_equal(a.p, b.p)


def test_literal_sum_double_counts_wide_overlap(mesh_20x4x4, first_system_20x4x4):
    with pytest.raises(SchwarzNonConvergence):
        inner_solve(first_system_20x4x4, smap_for(mesh_20x4x4, 2, 2),
                    SchwarzConfig(combine="sum"))


def jacobi_divergent():
    # block Jacobi on [[1, 2], [2, 1]] has iteration matrix with spectral radius 2
    A = from_dense(np.array([[1.0, 2.0], [2.0, 1.0]]))
    ptr, adj = np.array([0, 1, 2]), np.array([1, 0])
    return A, build_subdomain_map(ptr, adj, [0, 1], 0, dofs_per_node=1)


def test_max_inner_error_carries_history():
    A = from_dense(np.array([[2.0, 1.0], [1.0, 2.0]]))
    ptr, adj = np.array([0, 1, 2]), np.array([1, 0])
    smap = build_subdomain_map(ptr, adj, [0, 1], 0, dofs_per_node=1)
    with spawn(A, smap) as pool:
        pool.factorize(A)
        with pytest.raises(SchwarzNonConvergence) as info:
            schwarz_iterate(A, np.ones(2), np.zeros(2), pool, smap,
                            SchwarzConfig(max_inner=3, alpha_interface=1.0))
    assert len(info.value.history) == 3
    assert info.value.history[1] == pytest.approx(info.value.history[0] / 2)


def test_guard_fires_on_divergence():
    A, smap = jacobi_divergent()
    with spawn(A, smap) as pool:
        pool.factorize(A)
        with pytest.raises(SchwarzNonConvergence, match="stagnated") as info:
            schwarz_iterate(A, np.ones(2), np.zeros(2), pool, smap,
                            SchwarzConfig(guard_window=5))
    assert len(info.value.history) == 6


def test_nas_converges(newton_pair):
    mesh, smap, nas, _ = newton_pair
    assert nas.converged
    assert nas.iterations <= 8
    assert nas.update_norms[-1] <= 1e-6
    assert nas.n_factorizations == smap.s * nas.iterations
    assert all(h.factorized for h in nas.history)
    assert [h.k for h in nas.history] == list(range(nas.iterations))


def test_nas_quadratic_tail(newton_pair):
    # the converging correction comes from a sweep stopped at inner_tol, so it is
    # noise-limited; the tail is the three iterations before it
    _, _, nas, _ = newton_pair
    orders = empirical_orders(nas.update_norms[-4:-1])
    assert orders
    assert all(o >= 1.5 for o in orders), orders


def test_mnas_factorizes_once_and_matches_nas(newton_pair):
    _, smap, nas, mnas = newton_pair
    assert mnas.converged
    assert mnas.n_factorizations == smap.s
    assert [h.factorized for h in mnas.history] == [True] + [False] * (mnas.iterations - 1)
    assert mnas.iterations == nas.iterations
    for a, b in zip(nas.update_norms, mnas.update_norms):
        assert abs(a - b) <= 10 * INNER_TOL
    assert inf_norm(nas.X - mnas.X) <= 1e-5


@pytest.mark.xfail(strict=True, reason="frozen factors did not need more inner iterations "
                                       "at every step on this mesh")
def test_mnas_needs_at_least_as_many_inner_iterations(newton_pair):
    _, _, nas, mnas = newton_pair
    for k in range(1, min(nas.iterations, mnas.iterations)):
        assert mnas.inner_iterations[k] >= nas.inner_iterations[k]


def test_stokes_limit(mesh_20x4x4):
    st = nas_solve(mesh_20x4x4, FlowParams(0.01, 1e7), smap_for(mesh_20x4x4, 2))
    assert st.converged and st.iterations <= 3


def test_outer_guard(mesh_20x4x4):
    with pytest.raises(NewtonNonConvergence) as info:
        nas_solve(mesh_20x4x4, FlowParams(), smap_for(mesh_20x4x4, 2), max_outer=2)
    assert len(info.value.history) == 2


def test_driver_argument_errors(mesh_20x4x4):
    smap = smap_for(mesh_20x4x4, 2)
    with pytest.raises(ValueError):
        newton_solve(mesh_20x4x4, FlowParams(), smap, algorithm="picard")
    with pytest.raises(ValueError):
        newton_solve(mesh_20x4x4, FlowParams(), smap_for(build_channel_mesh(4, 2, 2), 2))


def test_initial_guess_satisfies_boundary_conditions(mesh_20x4x4):
    X = initial_guess(mesh_20x4x4)
    asm = Assembler(mesh_20x4x4)
    F = asm.residual(X, FlowParams())
    assert np.all(F[asm.bc_dofs] == 0.0)


@pytest.mark.parametrize("workers,backend", [(2, "thread"), (1, "serial"), (2, "process")])
def test_trajectory_independent_of_placement(newton_pair, workers, backend):
    mesh, _, _, _ = newton_pair
    smap = smap_for(mesh, 4)
    ref = nas_solve(mesh, FlowParams(), smap, n_workers=4)
    other = nas_solve(mesh, FlowParams(), smap, n_workers=workers, backend=backend)
    assert np.array_equal(ref.X, other.X)
    assert ref.update_norms == other.update_norms
    assert ref.inner_iterations == other.inner_iterations


def test_callback_and_timings(mesh_20x4x4):
    seen = []
    st = nas_solve(mesh_20x4x4, FlowParams(), smap_for(mesh_20x4x4, 2), callback=seen.append)
    assert [r.k for r in seen] == list(range(st.iterations))
    tot = st.timing_totals()
    assert set(tot) == {"assemble", "factorize", "solve", "communication", "residual"}
    assert all(v >= 0 for v in tot.values())
