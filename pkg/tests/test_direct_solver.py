import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddflow.direct_solver import (SCALAR_BYTES, INDEX_BYTES, SingularMatrixError, analyze,
                                  factorize, solve)
from ddflow.fem import Assembler, FlowParams
from ddflow.mesh import build_channel_mesh
from ddflow.schwarz import initial_guess
from ddflow.sparse import from_dense, identity, matvec
from oracles import direct_solve, fill_count


def lu(A, method="nd", **kw):
    return factorize(analyze(A, method), A, **kw)


def rel_residual(A, x, b):
    r = np.max(np.abs(matvec(A, x) - b))
    return r / (A.norm_inf() * np.max(np.abs(x)) + np.max(np.abs(b)))


@pytest.fixture(scope="module")
def fem_jacobian():
    mesh = build_channel_mesh(20, 4, 4)
    return Assembler(mesh).assemble(initial_guess(mesh), FlowParams(100.0, 1e7)).J


def test_diagonal_has_no_fill():
    A = from_dense(np.diag([1.0, 2, 3, 4, 5]))
    plan = analyze(A, "md")
    assert plan.nnz_lu == 5
    assert np.allclose(solve(factorize(plan, A), np.ones(5)), 1 / np.arange(1, 6))


def test_dense_3x3():
    A = from_dense(np.array([[4.0, 1, 2], [1, 5, 1], [2, 1, 6]]))
    assert analyze(A, "nd").nnz_lu == 9


def test_identity_factors():
    rows, cols, L, U = lu(identity(4)).to_dense()
    assert np.array_equal(L, np.eye(4)) and np.array_equal(U, np.eye(4))
    assert np.array_equal(rows, cols)


def test_permutation_matrix_needs_pivoting():
    A = from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(solve(lu(A), [1.0, 2.0]), [2.0, 1.0])


def test_singular_reports_step():
    A = from_dense(np.ones((2, 2)))
    with pytest.raises(SingularMatrixError) as info:
        lu(A)
    assert info.value.step == 2
    assert "step 2" in str(info.value)


def test_perturbation_is_opt_in_and_counted():
    A = from_dense(np.ones((2, 2)))
    f = lu(A, perturb=True)
    assert f.n_perturbed == 1
    assert np.all(np.isfinite(solve(f, [1.0, 1.0])))


def test_hand_solution_and_zero_rhs():
    A = from_dense(np.array([[2.0, 1.0], [1.0, 3.0]]))
    f = lu(A)
    assert np.allclose(solve(f, [3.0, 4.0]), [1.0, 1.0], rtol=0, atol=1e-15)
    assert np.array_equal(solve(f, np.zeros(2)), np.zeros(2))


def test_errors():
    with pytest.raises(ValueError):
        analyze(from_dense(np.ones((2, 3))))
    f = lu(identity(3))
    with pytest.raises(ValueError):
        solve(f, np.ones(4))


def test_factors_are_immutable():
    f = lu(from_dense(np.array([[2.0, 1.0], [1.0, 3.0]])))
    with pytest.raises(ValueError):
        f.diag[0][0, 0] = 1.0
    with pytest.raises(AttributeError):
        f.plan = None


def test_fem_residual(fem_jacobian, rng):
    A = fem_jacobian
    b = rng.standard_normal(A.n_rows)
    for method in ("md", "nd"):
        x = solve(lu(A, method), b)
        assert rel_residual(A, x, b) <= 1e-10


def test_factor_reconstruction(fem_jacobian):
    A = fem_jacobian
    rows, cols, L, U = lu(A).to_dense()
    D = A.to_dense()[rows][:, cols]
    assert np.max(np.abs(L @ U - D)) <= 1e-10 * A.norm_inf()


def test_md_and_nd_agree(rng):
    # lam = 100 keeps cond(J) near 4e4; agreement is bounded by cond * eps
    mesh = build_channel_mesh(20, 4, 4)
    A = Assembler(mesh).assemble(initial_guess(mesh), FlowParams(100.0, 100.0)).J
    b = rng.standard_normal(A.n_rows)
    xm, xn = solve(lu(A, "md"), b), solve(lu(A, "nd"), b)
    assert np.max(np.abs(xm - xn)) <= 1e-9 * np.max(np.abs(xn))
    ref = direct_solve(A, b)
    assert np.max(np.abs(xn - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_md_and_nd_agree_at_working_penalty(fem_jacobian, rng):
    # cond(J) is about 4e9 at lam = 1e7, so forward errors of 1e-7 are expected
    A = fem_jacobian
    b = rng.standard_normal(A.n_rows)
    xm, xn = solve(lu(A, "md"), b), solve(lu(A, "nd"), b)
    ref = direct_solve(A, b)
    scale = np.max(np.abs(ref))
    assert np.max(np.abs(xm - ref)) <= 1e-6 * scale
    assert np.max(np.abs(xn - ref)) <= 1e-6 * scale


@pytest.mark.parametrize("method", ["md", "nd"])
def test_plan_fill_matches_oracle(fem_jacobian, method):
    A = fem_jacobian
    plan = analyze(A, method)
    assert plan.nnz_lu == fill_count(A, plan.ordering.perm)
    f = factorize(plan, A)
    assert f.nnz == plan.nnz_lu
    assert f.memory_bytes == plan.nnz_lu * (INDEX_BYTES + SCALAR_BYTES)


@pytest.mark.slow
def test_plan_fill_matches_oracle_20x8x8():
    mesh = build_channel_mesh(20, 8, 8)
    pattern = Assembler(mesh).pattern
    plan = analyze(pattern, "nd")
    assert plan.nnz_lu == fill_count(pattern, plan.ordering.perm)


def test_reuse_is_bitwise_and_plan_stable(fem_jacobian, rng):
    A = fem_jacobian
    plan = analyze(A, "nd")
    f = factorize(plan, A)
    b = rng.standard_normal(A.n_rows)
    x1 = solve(f, b)
    assert np.array_equal(x1, solve(f, b))
    nnz = plan.nnz_lu
    A2 = A.with_values(A.values * (1 + 0.1 * rng.random(A.nnz)))
    f2 = factorize(plan, A2)
    assert plan.nnz_lu == nnz and f2.nnz == nnz
    assert np.array_equal(x1, solve(f, b))
    assert rel_residual(A2, solve(f2, b), b) <= 1e-10


def test_multiple_right_hand_sides(fem_jacobian, rng):
    A = fem_jacobian
    f = lu(A)
    B = rng.standard_normal((A.n_rows, 3))
    X = solve(f, B)
    for j in range(3):
        assert rel_residual(A, X[:, j], B[:, j]) <= 1e-10


@st.composite
def dominant_systems(draw):
    n = draw(st.integers(1, 30))
    seed = draw(st.integers(0, 2 ** 31))
    r = np.random.default_rng(seed)
    M = r.standard_normal((n, n)) * (r.random((n, n)) < 0.2)
    M += np.diag(np.abs(M).sum(axis=1) + 1.0)
    return from_dense(M), r.standard_normal(n)


@settings(max_examples=100)
@given(dominant_systems(), st.sampled_from(["md", "nd", "natural"]))
def test_random_dominant_systems(system, method):
    A, b = system
    plan = analyze(A, method)
    assert plan.nnz_lu >= A.nnz
    x = solve(factorize(plan, A), b)
    assert rel_residual(A, x, b) <= 1e-10
