"""Per-active-user timing, on real data or synthetic matrices of controlled density."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dataset import GENRE_NAMES, SCALE, ItemCatalog, RatingMatrix
from .evaluation import UserTiming, loglog_slope
from .graph import GenreOverlap
from .inference import InferenceConfig, infer_user


def time_user(train: RatingMatrix, overlap: GenreOverlap, z: int, config: InferenceConfig,
              repeats: int = 1) -> tuple[float, int]:
    """Best-of-``repeats`` wall time (ms) of graph construction plus inference."""
    best, edges = float("inf"), 0
    for _ in range(repeats):
        start = time.perf_counter()
        result = infer_user(train, overlap, z, config)
        best = min(best, (time.perf_counter() - start) * 1000.0)
        edges = result.graph.num_edges
    return best, edges


def stratified_users(train: RatingMatrix, sample: int) -> list[int]:
    """``sample`` users spread evenly over the rating-count ranking."""
    order = np.lexsort((np.arange(train.num_users), train.user_degree()))
    if sample >= order.size:
        return sorted(order.tolist())
    picks = np.linspace(0, order.size - 1, sample).round().astype(int)
    # rounding can collide for small populations; top up with unused ranks
    picks = list(dict.fromkeys(picks.tolist()))
    spare = [p for p in range(order.size) if p not in set(picks)]
    picks += spare[: sample - len(picks)]
    return sorted(int(order[p]) for p in picks)


def bench_users(train: RatingMatrix, catalog: ItemCatalog, users, config: InferenceConfig,
                repeats: int = 1) -> list[UserTiming]:
    overlap = GenreOverlap.for_matrix(train, catalog)
    rows = []
    for z in users:
        ms, edges = time_user(train, overlap, z, config, repeats)
        rows.append(UserTiming(int(z), int(train.items_of(z).size), edges, ms))
    return rows


def synthetic_matrix(num_users: int, num_items: int, ratings_per_user: int, seed: int = 0) -> RatingMatrix:
    """Every user rates ``ratings_per_user`` distinct random items with random ratings."""
    rng = np.random.default_rng(seed)
    items = np.concatenate([rng.choice(num_items, ratings_per_user, replace=False) for _ in range(num_users)])
    users = np.repeat(np.arange(num_users), ratings_per_user)
    ratings = rng.integers(SCALE.min, SCALE.max + 1, size=users.size)
    return RatingMatrix.from_entries(users, items, ratings, num_users, num_items)


def synthetic_catalog(num_items: int, seed: int = 0, genres_per_item: int = 2) -> ItemCatalog:
    rng = np.random.default_rng(seed)
    sets = [rng.choice(np.arange(1, len(GENRE_NAMES)), genres_per_item, replace=False) for _ in range(num_items)]
    return ItemCatalog.from_genre_sets(sets)


@dataclass
class ScalingPoint:
    num_users: int
    edges: int
    ms: float


def synthetic_scaling(user_counts=(250, 500, 1000, 2000, 4000), num_items: int = 1000,
                      ratings_per_user: int = 40, iterations: int = 10, repeats: int = 3,
                      seed: int = 0) -> tuple[list[ScalingPoint], float]:
    """Time one active user while the number of raters (and so edges) grows.

    The iteration count is pinned (``epsilon`` is tiny) so that only the graph
    size varies.  Returns the points and the log-log slope of time vs. edges.
    """
    config = InferenceConfig(epsilon=1e-300, max_iterations=iterations)
    catalog = synthetic_catalog(num_items, seed)
    points = []
    for n in user_counts:
        train = synthetic_matrix(n, num_items, ratings_per_user, seed)
        overlap = GenreOverlap.for_matrix(train, catalog)
        ms, edges = time_user(train, overlap, 0, config, repeats)
        points.append(ScalingPoint(n, edges, ms))
    slope = loglog_slope([p.edges for p in points], [p.ms for p in points])
    return points, slope
