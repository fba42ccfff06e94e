import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynhawkes.alias import AliasTable
from dynhawkes.errors import ParseError, RejectedEdgeError, ValidationError
from dynhawkes.graph import (
    DynamicNetwork,
    TemporalEdge,
    bucket_snapshots,
    history_neighbors,
    ingest_edges,
    negative_distribution,
)


def edges_strategy(max_vertices=8, max_time=60, max_edges=30):
    edge = st.tuples(
        st.integers(0, max_vertices - 1),
        st.integers(0, max_vertices - 1),
        st.integers(0, max_time),
        st.sampled_from([0.5, 1.0, 2.0, 3.0]),
    ).filter(lambda e: e[0] != e[1])
    return st.lists(edge, min_size=1, max_size=max_edges).map(
        lambda es: [TemporalEdge(*e) for e in es]
    )


class TestIngest:
    def test_weighted_line(self):
        assert ingest_edges("1\t2\t100\t3.0") == [TemporalEdge(1, 2, 100, 3.0)]

    def test_default_weight(self):
        assert ingest_edges("7\t9\t12") == [TemporalEdge(7, 9, 12, 1.0)]

    def test_self_loop_rejected_with_line_number(self):
        with pytest.raises(RejectedEdgeError, match="line 1"):
            ingest_edges("4\t4\t50")

    def test_comments_and_blanks_skipped(self):
        text = "# header\n\n1\t2\t5\n  \n# trailing\n3\t1\t6\t2.5\n"
        assert ingest_edges(io.StringIO(text)) == [
            TemporalEdge(1, 2, 5, 1.0),
            TemporalEdge(3, 1, 6, 2.5),
        ]

    @pytest.mark.parametrize("line", ["1\t2", "1\t2\t3\t4\t5", "a\t2\t3", "1\t2\tx"])
    def test_malformed_lines(self, line):
        with pytest.raises(ParseError, match="line 2"):
            ingest_edges(["1\t2\t3", line])

    @pytest.mark.parametrize("weight", ["0", "-1", "nan"])
    def test_non_positive_weight(self, weight):
        with pytest.raises(ParseError):
            ingest_edges(f"1\t2\t3\t{weight}")


class TestBucketing:
    def test_hundred_timestamps_ten_buckets(self):
        edges = [TemporalEdge(0, 1, tau) for tau in range(100)]
        net = bucket_snapshots(edges, 10)
        assert net.T == 10
        assert all(len(s) == 1 for s in net.snapshots)

    def test_duplicate_edges_sum_weights(self):
        net = bucket_snapshots([TemporalEdge(1, 2, 0, 1.0), TemporalEdge(2, 1, 3, 1.0)], 10)
        assert net.T == 1
        assert net.snapshot(1).edges() == {frozenset({0, 1}): 2.0}

    def test_single_edge_at_tau_min_in_snapshot_one(self):
        net = bucket_snapshots([TemporalEdge(5, 6, 40), TemporalEdge(6, 7, 95)], 10)
        assert net.has_edge(0, 1, 1)
        assert net.T == 6

    def test_boundary_goes_to_later_bucket(self):
        net = bucket_snapshots([TemporalEdge(0, 1, 0), TemporalEdge(1, 2, 10)], 10)
        assert net.T == 2
        assert net.has_edge(1, 2, 2) and not net.has_edge(1, 2, 1)

    def test_empty_middle_bucket(self):
        net = bucket_snapshots([TemporalEdge(0, 1, 0), TemporalEdge(1, 2, 25)], 10)
        assert net.T == 3
        assert len(net.snapshot(2)) == 0
        assert net.neighbors(0, 2).size == 0

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            bucket_snapshots([], 10)

    def test_bad_interval(self):
        with pytest.raises(ValidationError):
            bucket_snapshots([TemporalEdge(0, 1, 0)], 0)

    def test_dense_id_remapping(self):
        net = bucket_snapshots([TemporalEdge(100, 7, 0), TemporalEdge(7, 55, 1)], 10)
        assert net.vertex_count == 3
        assert list(net.vertex_ids) == [7, 55, 100]
        assert net.has_edge(0, 2, 1) and net.has_edge(0, 1, 1)

    def test_summary_format(self):
        net = bucket_snapshots([TemporalEdge(0, 1, 0), TemporalEdge(1, 2, 25)], 10)
        lines = net.summary().splitlines()
        assert lines[:2] == ["T\t3", "N\t3"]
        assert lines[3:] == ["1\t0\t1", "2\t10\t0", "3\t20\t1"]

    @settings(max_examples=60, deadline=None)
    @given(edges_strategy(), st.integers(1, 25), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, edges, interval, rnd):
        shuffled = list(edges)
        rnd.shuffle(shuffled)
        assert bucket_snapshots(edges, interval) == bucket_snapshots(shuffled, interval)

    @settings(max_examples=60, deadline=None)
    @given(edges_strategy(), st.integers(1, 25))
    def test_round_trip_through_edge_list(self, edges, interval):
        net = bucket_snapshots(edges, interval)
        buf = io.StringIO()
        net.write_edges(buf)
        again = bucket_snapshots(ingest_edges(buf.getvalue()), interval)
        assert again.vertex_count == net.vertex_count
        assert list(again.vertex_ids) == list(net.vertex_ids)
        assert again.snapshots == net.snapshots


class TestHistory:
    def setup_method(self):
        # A=0, B=1, C=2
        self.net = DynamicNetwork.from_edge_sets(3, [{(0, 1): 1.0}, {(0, 2): 1.0}, {}])

    def test_no_history_at_t1(self):
        assert history_neighbors(self.net, 0, 1, 5) == []

    def test_two_snapshot_history(self):
        hist = history_neighbors(self.net, 0, 3, 5)
        assert [(n, t) for n, t, _ in hist] == [(1, 1), (2, 2)]

    def test_window_truncates(self):
        assert [(n, t) for n, t, _ in history_neighbors(self.net, 0, 3, 1)] == [(2, 2)]

    @settings(max_examples=40, deadline=None)
    @given(edges_strategy(max_vertices=6, max_time=40), st.integers(1, 8))
    def test_window_is_restriction_of_full_history(self, edges, h):
        net = bucket_snapshots(edges, 5)
        for t in range(1, net.T + 1):
            for i in range(net.vertex_count):
                full = history_neighbors(net, i, t, net.T + 1)
                restricted = {e for e in full if t - h <= e[1] <= t - 1}
                assert set(history_neighbors(net, i, t, h)) == restricted


class TestNegativeDistribution:
    def test_degree_normalization(self):
        # path 1-0-2 plus isolated 3: degrees (2, 1, 1, 0)
        net = DynamicNetwork.from_edge_sets(4, [{(0, 1): 1.0, (0, 2): 1.0}])
        np.testing.assert_allclose(negative_distribution(net, 1).probabilities,
                                   [0.5, 0.25, 0.25, 0.0])

    def test_single_edge(self):
        net = DynamicNetwork.from_edge_sets(2, [{(0, 1): 1.0}])
        np.testing.assert_allclose(negative_distribution(net, 1).probabilities, [0.5, 0.5])

    def test_star(self):
        net = DynamicNetwork.from_edge_sets(4, [{(0, 1): 1.0, (0, 2): 1.0, (0, 3): 1.0}])
        np.testing.assert_allclose(negative_distribution(net, 1).probabilities,
                                   [0.5, 1 / 6, 1 / 6, 1 / 6])

    def test_weights_do_not_change_degree(self):
        net = DynamicNetwork.from_edge_sets(3, [{(0, 1): 9.0, (1, 2): 1.0}])
        np.testing.assert_allclose(negative_distribution(net, 1).probabilities,
                                   [0.25, 0.5, 0.25])

    def test_empty_snapshot_rejected(self):
        net = DynamicNetwork.from_edge_sets(3, [{(0, 1): 1.0}, {}])
        with pytest.raises(ValidationError):
            negative_distribution(net, 2)

    @settings(max_examples=60, deadline=None)
    @given(edges_strategy(), st.floats(0.25, 2.0))
    def test_sums_to_one(self, edges, exponent):
        net = bucket_snapshots(edges, 7)
        for t in range(1, net.T + 1):
            if len(net.snapshot(t)):
                p = negative_distribution(net, t, exponent).probabilities
                assert abs(p.sum() - 1.0) <= 1e-12
                assert np.all(p >= 0)


class TestAliasTable:
    def test_matches_weights(self):
        w = np.array([5.0, 1.0, 0.0, 2.0, 2.0])
        table = AliasTable(w)
        np.testing.assert_allclose(table.probabilities, w / w.sum())
        draws = table.sample(np.random.default_rng(0), size=200_000)
        freq = np.bincount(draws, minlength=5) / len(draws)
        np.testing.assert_allclose(freq, w / w.sum(), atol=0.005)
        assert freq[2] == 0

    def test_scalar_draw(self):
        v = AliasTable([1.0]).sample(np.random.default_rng(1))
        assert int(v) == 0

    @pytest.mark.parametrize("w", [[], [0.0, 0.0], [1.0, -1.0], [1.0, float("nan")]])
    def test_invalid_weights(self, w):
        with pytest.raises(ValidationError):
            AliasTable(w)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=20).filter(lambda w: sum(w) > 0))
    def test_implied_distribution_is_exact(self, w):
        # the column masses encoded by (prob, alias) reproduce the weights exactly
        table = AliasTable(w)
        n = len(w)
        mass = table._prob / n
        np.add.at(mass, table._alias, (1.0 - table._prob) / n)
        np.testing.assert_allclose(mass, np.asarray(w) / sum(w), atol=1e-12)


def test_network_is_read_only():
    net = DynamicNetwork.from_edge_sets(3, [{(0, 1): 1.0}])
    with pytest.raises(ValueError):
        net.neighbors(0, 1)[0] = 2
