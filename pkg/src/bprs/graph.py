"""Per-active-user factor graph and the genre statistics of the active user.

Users other than the active user become factor nodes, items are variable
nodes, and each retained rating is an edge.  The active user's own training
ratings become clamps on the corresponding item variables.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .dataset import SCALE, ItemCatalog, RatingMatrix


class Neighborhood(str, Enum):
    TWO_HOP = "two-hop"
    ALL_USERS = "all-users"

    @classmethod
    def parse(cls, value: "str | Neighborhood") -> "Neighborhood":
        if isinstance(value, cls):
            return value
        if value == "all":
            return cls.ALL_USERS
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown neighborhood mode {value!r}; use 'two-hop' or 'all-users'") from None


@dataclass(frozen=True, eq=False)
class ActiveGraph:
    """Reduced bipartite factor graph for one active user.

    Edges are stored grouped by item (``edge_item`` is non-decreasing), which
    lets per-item products be computed with segment reductions.  ``edge_factor``
    indexes into ``factor_users``.  ``clamp`` holds the active user's rating for
    every item it rated and 0 elsewhere.
    """

    active_user: int
    num_items: int
    factor_users: np.ndarray
    edge_factor: np.ndarray
    edge_item: np.ndarray
    edge_rating: np.ndarray
    clamp: np.ndarray
    mode: Neighborhood = Neighborhood.TWO_HOP
    item_indptr: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.item_indptr is None:
            indptr = np.zeros(self.num_items + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.edge_item, minlength=self.num_items), out=indptr[1:])
            object.__setattr__(self, "item_indptr", indptr)

    @classmethod
    def from_edges(cls, active_user: int, num_items: int, edges, clamps=None,
                   mode: str | Neighborhood = Neighborhood.TWO_HOP) -> "ActiveGraph":
        """Build directly from ``(user, item, rating)`` edges and ``{item: rating}`` clamps."""
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 3)
        factors = np.unique(edges[:, 0])
        if active_user in factors:
            raise ValueError("the active user cannot be a factor node")
        order = np.lexsort((edges[:, 0], edges[:, 1]))
        edges = edges[order]
        clamp = np.zeros(num_items, dtype=np.int64)
        for item, rating in (clamps or {}).items():
            clamp[item] = rating
        return cls(
            active_user=int(active_user),
            num_items=int(num_items),
            factor_users=factors,
            edge_factor=np.searchsorted(factors, edges[:, 0]),
            edge_item=edges[:, 1],
            edge_rating=edges[:, 2],
            clamp=clamp,
            mode=Neighborhood.parse(mode),
        )

    @property
    def num_factors(self) -> int:
        return int(self.factor_users.size)

    @property
    def num_edges(self) -> int:
        return int(self.edge_item.size)

    @property
    def clamped_items(self) -> np.ndarray:
        return np.flatnonzero(self.clamp)

    def is_clamped(self, item: int) -> bool:
        return bool(self.clamp[item])

    def factor_index(self, user: int) -> int:
        k = int(np.searchsorted(self.factor_users, user))
        if k >= self.factor_users.size or self.factor_users[k] != user:
            raise KeyError(f"user {user} is not a factor node of this graph")
        return k

    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def factor_degree(self) -> np.ndarray:
        return np.bincount(self.edge_factor, minlength=self.num_factors)

    def edges_of_item(self, item: int) -> slice:
        return slice(int(self.item_indptr[item]), int(self.item_indptr[item + 1]))

    def edges_of_factor(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.edge_factor == k)

    def edge_index(self, k: int, item: int) -> int:
        sl = self.edges_of_item(item)
        hits = np.flatnonzero(self.edge_factor[sl] == k)
        if hits.size == 0:
            raise KeyError(f"no edge between factor {k} and item {item}")
        return sl.start + int(hits[0])

    def dump(self, path: str | os.PathLike) -> None:
        """Debug edge list, one ``factor variable rating`` line per edge."""
        with open(path, "w") as fh:
            for k, a, r in zip(self.edge_factor.tolist(), self.edge_item.tolist(), self.edge_rating.tolist()):
                fh.write(f"{self.factor_users[k]} {a} {r}\n")


def two_hop_users(train: RatingMatrix, z: int) -> np.ndarray:
    """Users other than ``z`` sharing at least one rated item with ``z``."""
    items = train.items_of(z)
    if items.size == 0:
        return np.empty(0, dtype=np.int64)
    edges = np.concatenate([train.item_order[train.item_indptr[a]:train.item_indptr[a + 1]] for a in items])
    users = np.unique(train.users[edges])
    return users[users != z]


def reachable_users(train: RatingMatrix, z: int) -> np.ndarray:
    """Users other than ``z`` connected to ``z`` by any path in the user/item graph."""
    if train.items_of(z).size == 0:
        return np.empty(0, dtype=np.int64)
    n = train.num_users + train.num_items
    adj = coo_matrix(
        (np.ones(len(train), dtype=np.int8), (train.users, train.num_users + train.items)),
        shape=(n, n),
    )
    _, labels = connected_components(adj, directed=False)
    users = np.flatnonzero(labels[:train.num_users] == labels[z])
    return users[users != z]


def build_active_graph(train: RatingMatrix, z: int, mode: str | Neighborhood = Neighborhood.TWO_HOP) -> ActiveGraph:
    if not 0 <= z < train.num_users:
        raise IndexError(f"user {z} out of range [0, {train.num_users})")
    mode = Neighborhood.parse(mode)
    factors = two_hop_users(train, z) if mode is Neighborhood.TWO_HOP else reachable_users(train, z)

    keep = np.zeros(train.num_users, dtype=bool)
    keep[factors] = True
    # item-grouped edge order, restricted to retained factor nodes
    order = train.item_order[keep[train.users[train.item_order]]]
    edge_users = train.users[order]

    clamp = np.zeros(train.num_items, dtype=np.int64)
    clamp[train.items_of(z)] = train.ratings_of(z)

    for arr in (factors, order, clamp):
        arr.setflags(write=False)
    return ActiveGraph(
        active_user=int(z),
        num_items=train.num_items,
        factor_users=factors,
        edge_factor=np.searchsorted(factors, edge_users),
        edge_item=train.items[order],
        edge_rating=train.ratings[order],
        clamp=clamp,
        mode=mode,
    )


@dataclass(frozen=True)
class GenreHistogram:
    """Rating counts of the active user over items sharing a genre with one item.

    ``counts[h - 1]`` is the number of items that share at least one genre with
    the target item and that the active user rated ``h``.  ``overall`` is the
    active user's full rating histogram and ``average`` its mean rating.
    """

    counts: np.ndarray
    overall: np.ndarray
    average: float

    def smoothed(self) -> np.ndarray:
        c = self.counts + 1.0
        return c / c.sum()

    def weights(self) -> np.ndarray:
        """Smoothed genre weights, falling back to the overall histogram when empty."""
        if self.counts.any():
            return self.smoothed()
        return smoothed_prior(self.overall)


def smoothed_prior(overall: np.ndarray) -> np.ndarray:
    """``(overall + 1) / sum``; uniform when the user has no ratings."""
    c = np.asarray(overall, dtype=float) + 1.0
    return c / c.sum()


def user_histogram(train: RatingMatrix, z: int) -> np.ndarray:
    return np.bincount(train.ratings_of(z) - SCALE.min, minlength=SCALE.size)


def genre_stats(train: RatingMatrix, catalog: ItemCatalog, z: int, a: int) -> GenreHistogram:
    """Genre-context rating histogram of user ``z`` for item ``a``.

    Items of ``z`` count when their genre set intersects item ``a``'s.
    """
    if not 0 <= a < train.num_items:
        raise IndexError(f"item {a} out of range [0, {train.num_items})")
    genres = catalog.aligned(train.item_ids)
    items, ratings = train.items_of(z), train.ratings_of(z)
    overlap = (genres[items] & genres[a]).any(axis=1)
    counts = np.bincount(ratings[overlap] - SCALE.min, minlength=SCALE.size)
    overall = np.bincount(ratings - SCALE.min, minlength=SCALE.size)
    average = float(ratings.mean()) if ratings.size else float("nan")
    return GenreHistogram(counts, overall, average)


class GenreOverlap:
    """Item-by-item "shares a genre" relation, precomputed once per dataset."""

    def __init__(self, genres: np.ndarray):
        g = np.asarray(genres, dtype=np.float32)
        self.shares = (g @ g.T) > 0

    @classmethod
    def for_matrix(cls, train: RatingMatrix, catalog: ItemCatalog) -> "GenreOverlap":
        return cls(catalog.aligned(train.item_ids))

    def counts(self, train: RatingMatrix, z: int) -> np.ndarray:
        """``(num_items, 5)`` genre-context histograms of ``z`` for every item."""
        items, ratings = train.items_of(z), train.ratings_of(z)
        onehot = np.zeros((items.size, SCALE.size))
        onehot[np.arange(items.size), ratings - SCALE.min] = 1.0
        return self.shares[:, items] @ onehot

    def weights(self, train: RatingMatrix, z: int) -> tuple[np.ndarray, np.ndarray]:
        """Uncertainty-split weights for every item and the fallback prior of ``z``.

        Rows whose genre counts are all zero use the fallback prior, the
        smoothed overall histogram of ``z``.
        """
        counts = self.counts(train, z)
        prior = smoothed_prior(user_histogram(train, z))
        w = counts + 1.0
        w /= w.sum(axis=1, keepdims=True)
        w[~counts.any(axis=1)] = prior
        return w, prior
