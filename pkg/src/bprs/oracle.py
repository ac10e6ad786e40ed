"""Exact marginals by enumeration, for checking inference on tiny graphs.

Nothing here imports the inference engine: the per-rater probabilities are
re-derived inline and every joint assignment of the unclamped items is
enumerated explicitly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .graph import ActiveGraph

RATINGS = (1, 2, 3, 4, 5)
MAX_STATES = 625
MAX_FACTORS = 6


class EnumerationLimitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TinyInstance:
    """A small graph with frozen rater confidences and per-item weights."""

    graph: ActiveGraph
    confidences: tuple[float, ...]
    weights: np.ndarray

    def __post_init__(self):
        n_free = len(self.unclamped_items())
        if len(RATINGS) ** n_free > MAX_STATES:
            raise EnumerationLimitError(
                f"{n_free} unclamped items give {len(RATINGS) ** n_free} joint states (cap {MAX_STATES})"
            )
        if self.graph.num_factors > MAX_FACTORS:
            raise EnumerationLimitError(f"{self.graph.num_factors} factor nodes (cap {MAX_FACTORS})")
        if len(self.confidences) != self.graph.num_factors:
            raise ValueError("need one confidence per factor node")

    def unclamped_items(self) -> list[int]:
        return [a for a in range(self.graph.num_items) if not self.graph.clamp[a]]

    def rated_unclamped_items(self) -> list[int]:
        degree = self.graph.item_degree()
        return [a for a in self.unclamped_items() if degree[a] > 0]


def rater_probability(value: int, rating: int, confidence: float, weights) -> float:
    w = float(weights[value - 1])
    if value == rating:
        return confidence + (1.0 - confidence) * w
    return (1.0 - confidence) * w


def _edges(graph: ActiveGraph) -> list[tuple[int, int, int]]:
    return list(zip(graph.edge_factor.tolist(), graph.edge_item.tolist(), graph.edge_rating.tolist()))


def joint_weight(inst: TinyInstance, assignment: dict[int, int]) -> float:
    """Unnormalized joint: product over raters of their per-item probabilities.

    ``assignment`` gives a value for every unclamped item; clamped items take
    the active user's rating.
    """
    graph = inst.graph
    total = 1.0
    for k, a, rating in _edges(graph):
        value = int(graph.clamp[a]) or assignment[a]
        total *= rater_probability(value, rating, inst.confidences[k], inst.weights[a])
    return total


def exact_marginal(inst: TinyInstance, a: int) -> np.ndarray:
    """Marginal of item ``a`` under the normalized joint, by full enumeration.

    An unclamped item nobody rated is unconstrained by the joint and comes out
    uniform.
    """
    free = inst.unclamped_items()
    if a not in free:
        raise ValueError(f"item {a} is clamped")
    marginal = [0.0] * len(RATINGS)
    for values in itertools.product(RATINGS, repeat=len(free)):
        assignment = dict(zip(free, values))
        marginal[assignment[a] - 1] += joint_weight(inst, assignment)
    z = math.fsum(marginal)
    return np.array([m / z for m in marginal])


def brute_force_factor_message(graph: ActiveGraph, k: int, a: int, confidence: float,
                               weights: np.ndarray, incoming: dict[int, np.ndarray]) -> np.ndarray:
    """Factor-to-item message with the sum over the factor's other items done explicitly.

    ``incoming[x]`` is the item-to-factor message from each other item ``x``
    of factor ``k``.  The factor's local function is the product of its
    per-item rater probabilities; the result is normalized.
    """
    items = [(x, r) for kk, x, r in _edges(graph) if kk == k]
    rating_a = next(r for x, r in items if x == a)
    others = [(x, r) for x, r in items if x != a]
    out = []
    for value in RATINGS:
        acc = 0.0
        for rest in itertools.product(RATINGS, repeat=len(others)):
            term = rater_probability(value, rating_a, confidence, weights[a])
            for (x, r), vx in zip(others, rest):
                term *= rater_probability(vx, r, confidence, weights[x]) * incoming[x][vx - 1]
            acc += term
        out.append(acc)
    z = math.fsum(out)
    return np.array([v / z for v in out])


def random_tiny_instance(rng: np.random.Generator, max_free: int = 4, max_clamped: int = 3,
                         max_factors: int = MAX_FACTORS, max_confidence: float = 0.99) -> TinyInstance:
    """Random instance in which every unclamped item has at least one rater."""
    n_free = int(rng.integers(1, max_free + 1))
    n_clamped = int(rng.integers(0, max_clamped + 1))
    n_items = n_free + n_clamped
    perm = rng.permutation(n_items)
    free, clamped = perm[:n_free], perm[n_free:]
    n_factors = int(rng.integers(1, max_factors + 1))

    rated = {k: set() for k in range(1, n_factors + 1)}
    for a in free:
        rated[int(rng.integers(1, n_factors + 1))].add(int(a))
    for k in rated:
        extra = rng.random(n_items) < 0.4
        rated[k] |= set(np.flatnonzero(extra).tolist())
        if not rated[k]:
            rated[k].add(int(rng.integers(n_items)))
    edges = [(k, a, int(rng.integers(1, 6))) for k in sorted(rated) for a in sorted(rated[k])]
    clamps = {int(a): int(rng.integers(1, 6)) for a in clamped}

    graph = ActiveGraph.from_edges(0, n_items, edges, clamps)
    confidences = tuple(float(c) for c in rng.uniform(0.0, max_confidence, graph.num_factors))
    weights = rng.dirichlet(np.ones(len(RATINGS)), size=n_items)
    return TinyInstance(graph, confidences, weights)
