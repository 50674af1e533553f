from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricensor.interference import (
    InterferenceError,
    InterferenceMatrix,
    build_from_edges,
    degree_summary,
    empty,
    exposure,
    gen_poisson_neighbors,
    gen_preferential_attachment,
    read_edge_list,
    treated_counts,
    write_edge_list,
)


def assert_valid(A: InterferenceMatrix) -> None:
    for i, row in enumerate(A.rows):
        assert np.all((row >= 0) & (row < A.n))
        assert i not in row
        assert np.all(np.diff(row) > 0)
        assert A.row_sums[i] == row.size


@st.composite
def networks(draw, max_n=12):
    n = draw(st.integers(2, max_n))
    pairs = draw(
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1]), max_size=40)
    )
    return build_from_edges(pairs, n)


class TestBuild:
    def test_mutual_edge(self):
        A = build_from_edges([(0, 1), (1, 0)], 2)
        assert list(A.row(0)) == [1]
        assert list(A.row(1)) == [0]
        assert list(A.row_sums) == [1, 1]

    def test_empty_graph(self):
        A = build_from_edges([], 3)
        assert list(A.row_sums) == [0, 0, 0]
        assert A == empty(3)

    def test_self_edge_rejected_with_pair(self):
        with pytest.raises(InterferenceError, match=r"\(0, 0\)"):
            build_from_edges([(0, 0)], 1)

    def test_out_of_range_rejected_with_pair(self):
        with pytest.raises(InterferenceError, match=r"\(0, 5\)"):
            build_from_edges([(0, 1), (0, 5)], 3)

    def test_duplicates_collapsed(self):
        A = build_from_edges([(0, 1), (0, 1), (0, 2)], 3)
        assert list(A.row(0)) == [1, 2]

    def test_symmetric_flag(self):
        A = build_from_edges([(0, 2)], 3, symmetric=True)
        assert list(A.row(2)) == [0]
        assert A.is_symmetric()

    def test_direct_csr_validation(self):
        with pytest.raises(InterferenceError):
            InterferenceMatrix(2, np.array([0, 1, 1]), np.array([0]))  # self edge
        with pytest.raises(InterferenceError):
            InterferenceMatrix(3, np.array([0, 2, 2, 2]), np.array([2, 1]))  # unsorted

    @given(networks())
    def test_generated_structures_are_valid(self, A):
        assert_valid(A)


class TestExposure:
    def test_direct_count(self):
        A = build_from_edges([(0, 1), (0, 2)], 3)
        ex = exposure(A, np.array([0, 1, 0]))
        assert ex.T[0] == 1
        assert ex.G[0] == 0.5

    def test_empty_sets_give_zero(self):
        ex = exposure(empty(4), np.array([1, 0, 1, 1]))
        assert np.all(ex.T == 0) and np.all(ex.G == 0)

    def test_denominator_expansion(self):
        A = build_from_edges([(0, 1), (0, 2)], 3)
        ex = exposure(A, np.array([0, 1, 1]), B=np.array([4, 0, 0]))
        assert (ex.T[0], ex.G[0], ex.G_star[0]) == (2, 1.0, 0.5)

    def test_denominator_below_set_size_rejected(self):
        A = build_from_edges([(0, 1), (0, 2)], 3)
        with pytest.raises(InterferenceError, match="B\\[0\\]"):
            exposure(A, np.array([0, 1, 1]), B=np.array([1, 0, 0]))

    def test_zero_denominator_gives_zero(self):
        ex = exposure(empty(2), np.array([1, 0]), B=np.array([0, 0]))
        assert np.all(ex.G_star == 0)

    @given(networks(), st.data())
    def test_flip_increments_by_column(self, A, data):
        z = np.array(data.draw(st.lists(st.integers(0, 1), min_size=A.n, max_size=A.n)))
        j = data.draw(st.integers(0, A.n - 1))
        z0, z1 = z.copy(), z.copy()
        z0[j], z1[j] = 0, 1
        col = np.array([j in A.row(i) for i in range(A.n)], dtype=int)
        np.testing.assert_array_equal(exposure(A, z1).T - exposure(A, z0).T, col)

    @given(networks(), st.data())
    def test_bounds(self, A, data):
        z = np.array(data.draw(st.lists(st.integers(0, 1), min_size=A.n, max_size=A.n)))
        ex = exposure(A, z)
        assert np.all((ex.T >= 0) & (ex.T <= A.row_sums))
        assert np.all((ex.G >= 0) & (ex.G <= 1))

    def test_batched_counts_match(self):
        rng = np.random.default_rng(0)
        A = gen_poisson_neighbors(30, 4, rng)
        Z = rng.integers(0, 2, size=(5, 30))
        T = treated_counts(A, Z)
        for k in range(5):
            np.testing.assert_array_equal(T[k], exposure(A, Z[k]).T)


class TestGenerators:
    def test_poisson_mean_over_seeds(self):
        means = [gen_poisson_neighbors(128, 16, np.random.default_rng(s)).row_sums.mean() for s in range(40)]
        assert all(abs(m - 16) < 1.5 for m in means)
        assert abs(np.mean(means) - 16) < 0.2

    def test_poisson_tiny_mean_is_empty(self):
        A = gen_poisson_neighbors(2, 1e-4, np.random.default_rng(1))
        assert A.n_edges == 0

    def test_poisson_truncated_at_n_minus_one(self):
        A = gen_poisson_neighbors(5, 50, np.random.default_rng(2))
        assert np.all(A.row_sums == 4)
        assert_valid(A)

    def test_poisson_deterministic(self):
        a = gen_poisson_neighbors(50, 5, np.random.default_rng(7))
        b = gen_poisson_neighbors(50, 5, np.random.default_rng(7))
        assert a == b

    def test_poisson_symmetrize(self):
        A = gen_poisson_neighbors(40, 3, np.random.default_rng(3), symmetrize=True)
        assert A.is_symmetric()
        assert_valid(A)

    def test_pa_forced_topology(self):
        A = gen_preferential_attachment(2, 1, np.random.default_rng(0))
        assert A.edges().tolist() == [[0, 1], [1, 0]]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_pa_properties(self, seed):
        A = gen_preferential_attachment(128, 8, np.random.default_rng(seed))
        assert_valid(A)
        assert A.is_symmetric()
        assert A.row_sums.sum() % 2 == 0
        # node j >= m_edges adds exactly m_edges edges: total = sum_j min(j, m)
        assert A.n_edges // 2 == sum(min(j, 8) for j in range(1, 128))
        assert 14 < A.row_sums.mean() < 16.5
        assert A.row_sums.max() > 2.5 * A.row_sums.mean()

    def test_pa_rejects_bad_m(self):
        with pytest.raises(InterferenceError):
            gen_preferential_attachment(5, 5, np.random.default_rng(0))


class TestFiles:
    def test_round_trip(self, tmp_path):
        A = gen_poisson_neighbors(60, 5, np.random.default_rng(11))
        path = tmp_path / "net.txt"
        write_edge_list(A, path)
        assert read_edge_list(path) == A
        assert read_edge_list(path, n=60) == A

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("# a comment\n\n0 1  # trailing\n2 0\n")
        A = read_edge_list(path, n=3)
        assert A.edges().tolist() == [[0, 1], [2, 0]]

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("0 1\n1 x\n")
        with pytest.raises(InterferenceError, match=":2:"):
            read_edge_list(path)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("# n=4\n0 1\n")
        with pytest.raises(InterferenceError, match="n=4"):
            read_edge_list(path, n=5)

    def test_degree_summary_fields(self):
        A = gen_preferential_attachment(50, 3, np.random.default_rng(0))
        s = degree_summary(A)
        for key in ("min", "mean", "q1", "median", "q3", "max", "symmetric"):
            assert key in s
        assert s["min"] <= s["q1"] <= s["median"] <= s["q3"] <= s["max"]
