from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obmlab.errors import GeometryInvalid, IndexOutOfRange, RegimeViolation
from obmlab.weights import (
    EDGE_CONST,
    BatchGeometry,
    DenseWeights,
    ObmWeights,
    band_rows,
    brute_force_table,
    diag_square_sum,
    diag_square_sum_exact,
    mart_edge_bounds,
    piecewise_weight,
    total_variation,
    uv_vectors,
    window_matrix,
)

G52 = BatchGeometry(5, 2)


def test_geometry_validation():
    with pytest.raises(GeometryInvalid):
        BatchGeometry(5, 6)
    with pytest.raises(GeometryInvalid):
        BatchGeometry(5, 0)
    assert BatchGeometry(11, 5).theorem_regime
    assert not BatchGeometry(10, 5).theorem_regime
    assert BatchGeometry.default(1000).b == 32


def test_n5_b2_diagonal():
    W = ObmWeights(G52, exact=True)
    assert [W.weight(l, l) for l in range(1, 6)] == [Fr(1, 8), Fr(1, 4), Fr(1, 4), Fr(1, 4), Fr(1, 8)]
    assert sum(W.diagonal()) == 1


def test_n5_b2_offdiagonal():
    W = ObmWeights(G52, exact=True)
    assert W.weight(3, 2) == Fr(1, 4)
    assert W.weight(3, 1) == 0


def test_b1_is_uniform_diagonal():
    W = ObmWeights(BatchGeometry(7, 1), exact=True)
    D = W.dense()
    assert all(D[i, i] == Fr(1, 7) for i in range(7))
    assert all(D[i, j] == 0 for i in range(7) for j in range(i))


def test_window_matrix_shape():
    B = window_matrix(G52, exact=True)
    assert B.shape == (4, 5)
    assert all(sum(row) == 1 for row in B)


def test_closed_form_matches_brute_force_exactly():
    for n in range(1, 21):
        for b in range(1, n + 1):
            g = BatchGeometry(n, b)
            assert (ObmWeights(g, exact=True).dense() == brute_force_table(g, exact=True)).all(), (n, b)


def test_closed_form_matches_brute_force_float_grid():
    for n in range(2, 65):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            assert np.max(np.abs(ObmWeights(g).dense() - brute_force_table(g))) <= 1e-13


def test_piecewise_formulas_agree():
    for n in range(2, 49):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            W = ObmWeights(g)
            for l in range(1, n + 1):
                for j in range(max(1, l - b - 1), l + 1):
                    assert abs(piecewise_weight(g, l, j) - W.w(l, j)) <= 1e-15, (n, b, l, j)


def test_piecewise_regime_guard():
    with pytest.raises(RegimeViolation):
        piecewise_weight(BatchGeometry(6, 5), 2, 1)


@pytest.mark.parametrize("n", [2, 17, 100, 512])
def test_trace_one(n):
    for b in range(1, n // 2 + 1):
        assert abs(np.sum(ObmWeights(BatchGeometry(n, b)).diagonal()) - 1) <= 1e-12


def test_band_structure():
    g = BatchGeometry(40, 6)
    W = ObmWeights(g)
    for l in range(1, 41):
        for j in range(1, l):
            assert (W.w(l, j) == 0) == (l - j >= 6)
        assert sum(1 for j in range(1, l) if W.w(l, j) != 0) <= 5


def test_weight_bound_item1():
    for n in range(2, 65):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            assert ObmWeights(g).dense().max() <= 2 / g.m + 1e-15


def test_range_errors():
    W = ObmWeights(G52)
    with pytest.raises(IndexOutOfRange):
        W.weight(2, 3)
    with pytest.raises(IndexOutOfRange):
        W.weight(6, 1)
    with pytest.raises(IndexOutOfRange):
        W.delta("d11", 1, 1)
    with pytest.raises(IndexOutOfRange):
        W.delta("dm", 3, 2)
    with pytest.raises(IndexOutOfRange):
        mart_edge_bounds(G52, 1)


def test_zero_convention_out_of_range():
    W = ObmWeights(G52)
    assert W.w(3, 0) == 0 and W.w(0, 0) == 0 and W.w(6, 6) == 0


def test_delta_families_match_brute_differencing_n5():
    T = brute_force_table(G52, exact=True)

    def w(l, j):
        return T[l - 1, j - 1] if 1 <= j <= l <= 5 else 0

    W = ObmWeights(G52, exact=True)
    for l in range(1, 6):
        for j in range(1, l + 1):
            assert W.delta("d10", l, j) == w(l, j) - w(l - 1, j)
            assert W.delta("d01", l, j) == w(l, j) - w(l, j - 1)
            if l >= 2:
                assert W.delta("d11", l, j) == w(l, j) - w(l, j - 1) - w(l - 1, j) + w(l - 1, j - 1)
        if l >= 2:
            assert W.delta("dm", l, l) == w(l, l - 1) + w(l - 1, l - 2) - w(l, l - 2) - 2 * w(l - 1, l - 1)


def test_d11_lag_b_support_item3():
    for n in range(4, 65):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            W = ObmWeights(g, exact=n <= 24)
            L, J = np.tril_indices(n, -2)
            L, J = L + 1, J + 1
            keep = L >= 3
            L, J = L[keep], J[keep]
            d = W.delta_at("d11", L, J)
            lag = J == L - b
            if W.exact:
                assert all(abs(x) == Fr(2, b * g.m) for x in d[lag])
                assert all(x == 0 for x in d[~lag])
            else:
                np.testing.assert_allclose(np.abs(d[lag]), 2 / (b * g.m), rtol=0, atol=1e-15)
                assert np.all(np.abs(d[~lag]) <= 1e-15)


def test_difference_bounds_proof_range():
    # |d10| for j <= l-2 and |d01| for j <= l-1 stay below 2/(b m)
    for n in range(3, 65):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            W = ObmWeights(g)
            bound = 2 / (b * g.m) + 1e-15
            L, J = np.tril_indices(n, -1)
            L, J = L + 1, J + 1
            assert np.all(np.abs(W.delta_at("d01", L, J)) <= bound)
            inner = J <= L - 2
            assert np.all(np.abs(W.delta_at("d10", L[inner], J[inner])) <= bound)


def test_d10_first_subdiagonal_exceeds_bound_for_wide_batches():
    # d10(l, l-1) = (b-2)/(b m) in the interior and (b-1)/(b m) at the edges: above 2/(b m) once b >= 4
    g = BatchGeometry(40, 8)
    W = ObmWeights(g, exact=True)
    l = 20
    assert W.delta("d10", l, l - 1) == Fr(g.b - 2, g.b * g.m)
    assert abs(W.delta("d10", l, l - 1)) > Fr(2, g.b * g.m)
    worst = max(abs(W.delta("d10", k, k - 1)) for k in range(2, g.n + 1))
    assert worst == Fr(g.b - 1, g.b * g.m)
    # small batches satisfy the bound on the whole grid
    for n in range(3, 40):
        for b in range(1, min(3, n // 2) + 1):
            h = BatchGeometry(n, b)
            V = ObmWeights(h)
            assert all(abs(V.delta("d10", l, l - 1)) <= 2 / (b * h.m) + 1e-15 for l in range(2, n + 1))


def test_uv_vectors_n5():
    u, v = uv_vectors(G52)
    np.testing.assert_allclose(v, [1 / 8, 1 / 4, 1 / 4, 1 / 4, 1 / 8], atol=1e-16)
    np.testing.assert_allclose(u, 1 / 5 - v, atol=1e-16)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 400).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
def test_uv_sums_and_diagonal(nb):
    g = BatchGeometry(*nb)
    u, v = uv_vectors(g)
    assert abs(v.sum() - 1) <= 1e-12
    assert abs(u.sum()) <= 1e-12
    np.testing.assert_allclose(v, ObmWeights(g).diagonal(), atol=1e-16)
    np.testing.assert_allclose(v, window_matrix(g).sum(axis=0) / g.m, atol=1e-15)


def test_telescoping_constants():
    worst_u = worst_v = 0.0
    for n in list(range(3, 200)) + [512, 2048]:
        for b in range(1, n // 2 + 1):
            u, v = uv_vectors(BatchGeometry(n, b))
            worst_v = max(worst_v, n * total_variation(v))
            worst_u = max(worst_u, n * total_variation(u))
    assert worst_v <= 4
    # for u the endpoint terms |1/n - v_1| add up to 2/n on top of the v variation
    assert worst_u <= 6


def test_diag_square_sum_examples():
    assert diag_square_sum_exact(G52) == Fr(7, 32)
    assert sum(x * x for x in ObmWeights(G52, exact=True).diagonal()) == Fr(7, 32)
    assert diag_square_sum(BatchGeometry(9, 1)) == pytest.approx(1 / 9, abs=1e-16)


def test_diag_square_sum_grid():
    for n in range(2, 65):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            d = ObmWeights(g, exact=True).diagonal()
            assert diag_square_sum_exact(g) == sum(x * x for x in d)
            assert diag_square_sum(g) <= 1 / g.m + 1e-15


def test_diag_square_sum_regime():
    with pytest.raises(RegimeViolation):
        diag_square_sum(BatchGeometry(7, 4))


def test_mart_edge_interior_value():
    g = BatchGeometry(30, 5)
    W = ObmWeights(g, exact=True)
    for l in range(g.b + 1, g.m + 1):
        assert W.w(l, l - 1) - W.w(l - 1, l - 1) - W.w(l, l) == Fr(-2, g.b * g.m)


def test_mart_edge_b1():
    g = BatchGeometry(9, 1)
    first, _ = mart_edge_bounds(g, 4, exact=True)
    assert first == Fr(2, 9)


def test_mart_edge_n5_brute():
    T = brute_force_table(G52, exact=True)
    first, second = mart_edge_bounds(G52, 3, exact=True)
    assert first == abs(T[2, 1] - T[1, 1] - T[2, 2])
    assert second == abs(2 * T[2, 2] - T[2, 1])


def test_mart_edge_constant_on_grid():
    for n in range(2, 65):
        for b in range(1, n // 2 + 1):
            g = BatchGeometry(n, b)
            for l in range(2, n + 1):
                e1, e2 = mart_edge_bounds(g, l)
                assert e1 <= 2 / (b * g.m) + 1e-15
                assert e2 <= EDGE_CONST / (b * g.m) + 1e-15


def test_band_rows_cover_nonzero_band():
    W = ObmWeights(BatchGeometry(12, 3), exact=True)
    rows = list(band_rows(W))
    assert len(rows) == sum(min(l, 3) for l in range(1, 13))
    assert all(r[2] != 0 for r in rows)
    assert sum(r[2] for r in rows if r[0] == r[1]) == 1


def test_dense_weights_interface():
    T = brute_force_table(BatchGeometry(6, 2))
    D = DenseWeights(T)
    W = ObmWeights(BatchGeometry(6, 2))
    L, J = np.tril_indices(6)
    for fam in ("d10", "d01", "d11"):
        np.testing.assert_allclose(D.delta_at(fam, L + 1, J + 1), W.delta_at(fam, L + 1, J + 1), atol=1e-15)
