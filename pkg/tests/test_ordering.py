import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddflow.ordering import (Permutation, compress, min_degree, natural, nested_dissection,
                             order, symmetric_graph)
from ddflow.sparse import from_dense, from_triplets, identity
from oracles import fill_count, fill_count_sets


def path(n):
    A = np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    return from_dense(A)


def grid_laplacian(n):
    """7-point pattern on an n x n x n grid."""
    idx = np.arange(n ** 3).reshape(n, n, n)
    rows, cols = [idx.ravel()], [idx.ravel()]
    for ax in range(3):
        a = np.take(idx, range(n - 1), axis=ax).ravel()
        b = np.take(idx, range(1, n), axis=ax).ravel()
        rows += [a, b]
        cols += [b, a]
    r, c = np.concatenate(rows), np.concatenate(cols)
    return from_triplets((r, c, np.ones(r.size)), n ** 3, n ** 3)


def test_permutation_validation():
    p = Permutation([2, 0, 1])
    assert p.inverse.tolist() == [1, 2, 0]
    assert np.array_equal(p.perm[p.inverse], np.arange(3))
    with pytest.raises(ValueError):
        Permutation([0, 0, 1])
    with pytest.raises(ValueError):
        p.inverse[0] = 1


def test_path_md_has_no_fill():
    A = path(5)
    p = min_degree(A)
    assert fill_count(A, p.perm) == A.nnz
    assert p.perm[0] == 0            # degree-1 tie broken by the lowest id


def test_dense_pattern_any_order():
    A = from_dense(np.ones((4, 4)))
    for method in ("md", "nd", "natural"):
        assert fill_count(A, order(A, method).perm) == 16


def test_md_beats_natural_on_grid():
    A = grid_laplacian(5)
    assert fill_count(A, min_degree(A).perm) < fill_count(A, natural(A).perm)


def test_nd_beats_natural_on_grid():
    A = grid_laplacian(6)
    assert fill_count(A, nested_dissection(A).perm) <= fill_count(A, natural(A).perm)


def test_nd_single_node():
    assert nested_dissection(identity(1)).perm.tolist() == [0]


def test_nd_path_separator_last():
    p = nested_dissection(path(4), leaf_size=1).perm
    assert p[-1] in (1, 2)
    p7 = nested_dissection(path(7), leaf_size=1).perm
    assert p7[-1] == 3


def test_non_square_rejected():
    A = from_triplets(([0], [1], [1.0]), 2, 3)
    for fn in (min_degree, nested_dissection, natural):
        with pytest.raises(ValueError):
            fn(A)
    with pytest.raises(ValueError):
        order(identity(2), "kway")


def test_compress_merges_indistinguishable_vertices():
    # every node of a 3-dof-per-node block pattern has two twins
    B = np.kron(path(4).to_dense(), np.ones((3, 3)))
    g, members = compress(symmetric_graph(from_dense(B)))
    assert g.n == 4
    assert [m.tolist() for m in members] == [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]]
    assert g.weight.tolist() == [3, 3, 3, 3]


def test_orderings_are_deterministic():
    A = grid_laplacian(4)
    for method in ("md", "nd"):
        assert np.array_equal(order(A, method).perm, order(A, method).perm)


def test_block_pattern_keeps_blocks_together():
    B = from_dense(np.kron(grid_laplacian(3).to_dense(), np.ones((3, 3))))
    for method in ("md", "nd"):
        p = order(B, method).perm
        assert np.array_equal(p.reshape(-1, 3) // 3, np.repeat(p[::3] // 3, 3).reshape(-1, 3))


@st.composite
def random_graphs(draw):
    n = draw(st.integers(1, 40))
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                          max_size=3 * n))
    r = [i for i in range(n)] + [a for a, b in edges]
    c = [i for i in range(n)] + [b for a, b in edges]
    return from_triplets((r, c, np.ones(len(r))), n, n)


@given(random_graphs(), st.sampled_from(["md", "nd"]), st.integers(1, 8))
def test_orderings_are_bijections_and_oracles_agree(A, method, leaf):
    p = (nested_dissection(A, leaf_size=leaf) if method == "nd" else min_degree(A)).perm
    assert np.array_equal(np.sort(p), np.arange(A.n_rows))
    g = symmetric_graph(A)
    adj = [set(x) for x in g.adjacency_lists()]
    assert fill_count(A, p) == fill_count_sets(adj, p.tolist())


@given(random_graphs())
def test_md_is_never_worse_than_natural_on_trees_and_forests(A):
    # on a forest every minimum degree order is fill-free
    g = symmetric_graph(A)
    n = g.n
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for v, nb in enumerate(g.adjacency_lists()):
        for u in nb:
            if u > v and find(u) != find(v):
                parent[find(u)] = find(v)
                edges.append((u, v))
    r = list(range(n)) + [a for a, b in edges] + [b for a, b in edges]
    c = list(range(n)) + [b for a, b in edges] + [a for a, b in edges]
    T = from_triplets((r, c, np.ones(len(r))), n, n)
    assert fill_count(T, min_degree(T).perm) == T.nnz
