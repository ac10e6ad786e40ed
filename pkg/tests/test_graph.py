import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bprs.dataset import GENRE_NAMES, ItemCatalog, RatingMatrix
from bprs.graph import (
    ActiveGraph,
    GenreOverlap,
    Neighborhood,
    build_active_graph,
    genre_stats,
    reachable_users,
    two_hop_users,
)

from conftest import random_catalog, random_matrix

COMEDY, DRAMA, HORROR = (GENRE_NAMES.index(g) for g in ("Comedy", "Drama", "Horror"))


def matrix_from(rows, num_users=None, num_items=None):
    users, items, ratings = zip(*rows) if rows else ((), (), ())
    return RatingMatrix.from_entries(users, items, ratings, num_users, num_items)


def bfs_users(train: RatingMatrix, z: int) -> set[int]:
    seen_users, seen_items, frontier = {z}, set(), [z]
    while frontier:
        nxt = []
        for u in frontier:
            for i in train.items_of(u).tolist():
                if i in seen_items:
                    continue
                seen_items.add(i)
                for v in train.users_of(i).tolist():
                    if v not in seen_users:
                        seen_users.add(v)
                        nxt.append(v)
        frontier = nxt
    return seen_users - {z}


class TestNeighborhood:
    def test_parse(self):
        assert Neighborhood.parse("all") is Neighborhood.ALL_USERS
        assert Neighborhood.parse("two-hop") is Neighborhood.TWO_HOP
        with pytest.raises(ValueError):
            Neighborhood.parse("three-hop")

    def test_two_hop_example(self):
        train = matrix_from([(0, 0, 3), (1, 0, 4), (1, 1, 2), (2, 2, 5)])
        graph = build_active_graph(train, 0)
        assert graph.factor_users.tolist() == [1]
        assert graph.clamp.tolist() == [3, 0, 0]
        assert graph.num_edges == 2

    def test_all_users_example(self):
        train = matrix_from([(0, 0, 3), (1, 0, 4), (1, 1, 2), (2, 1, 1), (2, 2, 5)])
        assert build_active_graph(train, 0, "all-users").factor_users.tolist() == [1, 2]
        assert set(reachable_users(train, 0).tolist()) == bfs_users(train, 0)
        assert build_active_graph(train, 0, "two-hop").factor_users.tolist() == [1]

    def test_disconnected_user_excluded_from_all_users(self):
        train = matrix_from([(0, 0, 3), (1, 0, 4), (2, 2, 5)])
        assert build_active_graph(train, 0, "all").factor_users.tolist() == [1]

    @pytest.mark.parametrize("mode", ["two-hop", "all"])
    def test_user_without_ratings(self, mode):
        train = matrix_from([(1, 0, 4), (1, 1, 2)], num_users=3, num_items=3)
        graph = build_active_graph(train, 0, mode)
        assert graph.num_factors == 0 and graph.num_edges == 0
        assert not graph.clamp.any()

    def test_out_of_range_user(self):
        with pytest.raises(IndexError):
            build_active_graph(matrix_from([(0, 0, 1)]), 3)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), density=st.floats(0.02, 0.5))
    def test_two_hop_matches_pairwise_intersection(self, seed, density):
        rng = np.random.default_rng(seed)
        train = random_matrix(rng, 12, 10, density)
        z = int(rng.integers(12))
        mine = set(train.items_of(z).tolist())
        expected = {i for i in range(12) if i != z and mine & set(train.items_of(i).tolist())}
        assert set(two_hop_users(train, z).tolist()) == expected
        assert set(reachable_users(train, z).tolist()) == (bfs_users(train, z) if mine else set())

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_graph_edges_are_the_factor_ratings(self, seed):
        rng = np.random.default_rng(seed)
        train = random_matrix(rng, 10, 8, 0.3)
        z = int(rng.integers(10))
        graph = build_active_graph(train, z, "all")
        assert np.all(np.diff(graph.edge_item) >= 0)
        got = {(int(graph.factor_users[k]), a, r) for k, a, r in
               zip(graph.edge_factor.tolist(), graph.edge_item.tolist(), graph.edge_rating.tolist())}
        keep = set(graph.factor_users.tolist())
        assert got == {(u, i, r) for u, i, r in train.edge_set() if u in keep}
        again = build_active_graph(train, z, "all")
        for name in ("factor_users", "edge_factor", "edge_item", "edge_rating", "clamp"):
            np.testing.assert_array_equal(getattr(graph, name), getattr(again, name))


class TestActiveGraph:
    def test_from_edges(self):
        graph = ActiveGraph.from_edges(0, 3, [(5, 1, 4), (2, 1, 3), (2, 0, 1)], {2: 5})
        assert graph.factor_users.tolist() == [2, 5]
        assert graph.edge_item.tolist() == [0, 1, 1]
        assert graph.item_degree().tolist() == [1, 2, 0]
        assert graph.factor_degree().tolist() == [2, 1]
        assert graph.edge_rating[graph.edge_index(1, 1)] == 4
        assert graph.factor_index(5) == 1
        assert graph.is_clamped(2) and not graph.is_clamped(0)
        with pytest.raises(KeyError):
            graph.edge_index(1, 0)
        with pytest.raises(KeyError):
            graph.factor_index(3)

    def test_active_user_cannot_be_factor(self):
        with pytest.raises(ValueError):
            ActiveGraph.from_edges(2, 3, [(2, 0, 1)])

    def test_dump(self, tmp_path):
        graph = ActiveGraph.from_edges(0, 2, [(7, 1, 4), (3, 0, 2)])
        graph.dump(tmp_path / "g.txt")
        assert (tmp_path / "g.txt").read_text() == "3 0 2\n7 1 4\n"


class TestGenreStats:
    def test_three_comedies(self):
        catalog = ItemCatalog.from_genre_sets([{COMEDY}, {COMEDY}, {COMEDY}, {COMEDY}])
        train = matrix_from([(0, 0, 4), (0, 1, 5), (0, 2, 5)], num_items=4)
        hist = genre_stats(train, catalog, 0, 3)
        assert hist.counts.tolist() == [0, 0, 0, 1, 2]
        np.testing.assert_allclose(hist.weights(), np.array([1, 1, 1, 2, 3]) / 8, atol=1e-15)

    def test_no_shared_genre(self):
        catalog = ItemCatalog.from_genre_sets([{COMEDY}, {HORROR}])
        train = matrix_from([(0, 0, 2)], num_items=2)
        hist = genre_stats(train, catalog, 0, 1)
        assert hist.counts.tolist() == [0, 0, 0, 0, 0]
        np.testing.assert_allclose(hist.smoothed(), np.full(5, 0.2), atol=1e-15)
        # falls back to the smoothed overall histogram (0,1,0,0,0) + 1
        np.testing.assert_allclose(hist.weights(), np.array([1, 2, 1, 1, 1]) / 6, atol=1e-15)

    def test_multi_genre_item(self):
        catalog = ItemCatalog.from_genre_sets([{DRAMA}, {COMEDY}, {COMEDY, DRAMA}])
        train = matrix_from([(0, 0, 2), (0, 1, 5)], num_items=3)
        assert genre_stats(train, catalog, 0, 2).counts.tolist() == [0, 1, 0, 0, 1]

    def test_user_without_ratings_falls_back_to_uniform(self):
        catalog = ItemCatalog.from_genre_sets([{COMEDY}, {COMEDY}])
        train = matrix_from([(1, 0, 2)], num_users=2, num_items=2)
        w, prior = GenreOverlap.for_matrix(train, catalog).weights(train, 0)
        np.testing.assert_allclose(prior, np.full(5, 0.2))
        np.testing.assert_allclose(w, np.full((2, 5), 0.2))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_overlap_matches_per_item_stats(self, seed):
        rng = np.random.default_rng(seed)
        train = random_matrix(rng, 8, 15, 0.3)
        catalog = random_catalog(rng, 15, num_genres=6)
        z = int(rng.integers(8))
        w, prior = GenreOverlap.for_matrix(train, catalog).weights(train, z)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert abs(prior.sum() - 1.0) <= 1e-12
        for a in range(15):
            np.testing.assert_allclose(w[a], genre_stats(train, catalog, z, a).weights(), atol=1e-15)
