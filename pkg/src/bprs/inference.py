"""Belief propagation on an active user's factor graph.

Each iteration runs a flooding schedule over double-buffered message arrays:

1. every factor (user) ``k`` sends each of its items ``a`` the local rating
   distribution implied by its rating ``T_ka`` and its confidence from the
   previous iteration;
2. every item sends each rater the normalized product of the messages from
   its *other* raters, or the indicator of the active user's rating if the item
   is clamped;
3. each rater's confidence is reset to one minus its average expected
   deviation from the item messages it received;
4. each unclamped item's belief is the normalized product over all of its
   raters, and the prediction is that belief's expectation.

Messages are ``(edges, 5)`` arrays aligned with the graph's edge arrays.
Products are taken as sums of logs and exponentiated after subtracting the
row maximum.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, TextIO

import numpy as np
from scipy.sparse import csr_matrix

from .dataset import SCALE, RatingMatrix
from .graph import ActiveGraph, GenreOverlap, Neighborhood, build_active_graph

VALUES = SCALE.values.astype(float)
RHO = SCALE.rho
NORMALIZATION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class InferenceConfig:
    initial_confidence: float = 0.5
    epsilon: float = 1e-3
    max_iterations: int = 20
    mode: Neighborhood = Neighborhood.TWO_HOP
    # keeps every message coordinate strictly positive
    confidence_cap: float = 1.0 - 1e-12

    def __post_init__(self):
        if not 0.0 < self.initial_confidence < 1.0:
            raise ValueError(f"initial confidence must be in (0, 1), got {self.initial_confidence}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")
        if not 0.0 < self.confidence_cap <= 1.0:
            raise ValueError("confidence_cap must be in (0, 1]")
        object.__setattr__(self, "mode", Neighborhood.parse(self.mode))


@dataclass(eq=False)
class BeliefState:
    """Mutable state of one inference session.

    After iteration ``iteration`` (call it v): ``lam`` and ``mu`` hold the
    v-th factor-to-item and item-to-factor messages, ``previous_confidences``
    the confidences those ``lam`` messages were built from and ``confidences``
    the ones recomputed from ``mu``.  ``history[v]`` is the prediction vector
    after iteration v; ``history[0]`` is the prior-only prediction.
    """

    weights: np.ndarray
    prior: np.ndarray
    confidences: np.ndarray
    previous_confidences: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    posterior: np.ndarray
    predictions: np.ndarray
    iteration: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    confidence_history: list = field(default_factory=list)
    normalization_errors: list = field(default_factory=list)
    normalization_violations: int = 0
    messages_checked: int = 0
    empty_neighbor_messages: int = 0
    underflow_events: int = 0

    @property
    def max_normalization_error(self) -> float:
        return max(self.normalization_errors, default=0.0)

    def confidence_table(self, graph: ActiveGraph) -> dict[int, float]:
        return dict(zip(graph.factor_users.tolist(), self.confidences.tolist()))


def local_function(rating: int, confidence: float, weights) -> np.ndarray:
    """Rating distribution a single rater implies for an item.

    The rater's rating gets ``confidence`` outright; the remaining
    ``1 - confidence`` is spread over all five values by ``weights``.
    """
    w = np.asarray(weights, dtype=float)
    p = (1.0 - confidence) * w
    p[int(rating) - SCALE.min] += confidence
    return p


def _normalize_logs(logs: np.ndarray) -> np.ndarray:
    p = np.exp(logs - logs.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)
    return p


def _normalize_logs_columns(logs: np.ndarray) -> np.ndarray:
    """Column-wise version for ``(5, n)`` arrays (row reductions are elementwise)."""
    p = np.exp(logs - np.maximum.reduce(logs, axis=0))
    p /= np.add.reduce(p, axis=0)
    return p


class _Kernel:
    """Per-graph constants for the vectorized message updates.

    Edge arrays are laid out ``(5, edges)`` so that reductions over the five
    rating values are elementwise operations on contiguous rows.
    """

    def __init__(self, graph: ActiveGraph, weights: np.ndarray, prior: np.ndarray):
        E = graph.num_edges
        self.graph = graph
        self.prior = np.asarray(prior, dtype=float)
        self.prior_column = self.prior[:, None]
        self.edge_weights = np.ascontiguousarray(weights[graph.edge_item].T)
        self.onehot = np.zeros((SCALE.size, E))
        self.onehot[graph.edge_rating - SCALE.min, np.arange(E)] = 1.0
        self.deviation = np.abs(VALUES[:, None] - graph.edge_rating[None, :])
        self.incidence = csr_matrix(
            (np.ones(E), np.arange(E), graph.item_indptr), shape=(graph.num_items, E)
        )
        degree = graph.item_degree()
        clamp = graph.clamp
        self.edge_clamped = clamp[graph.edge_item] > 0
        self.clamp_messages = np.zeros((SCALE.size, int(self.edge_clamped.sum())))
        rows = np.flatnonzero(self.edge_clamped)
        self.clamp_messages[clamp[graph.edge_item[rows]] - SCALE.min, np.arange(rows.size)] = 1.0
        self.lonely_edges = ~self.edge_clamped & (degree[graph.edge_item] == 1)
        self.free_items = np.flatnonzero((clamp == 0) & (degree > 0))
        self.factor_degree = graph.factor_degree()

    def factor_messages(self, confidences: np.ndarray) -> np.ndarray:
        r = confidences[self.graph.edge_factor]
        return r * self.onehot + (1.0 - r) * self.edge_weights

    def item_log_sums(self, log_lam: np.ndarray) -> np.ndarray:
        """Per-item sums of ``(5, edges)`` log messages, returned ``(5, items)``."""
        return np.ascontiguousarray((self.incidence @ log_lam.T).T)

    def base_posterior(self) -> np.ndarray:
        graph = self.graph
        post = np.tile(self.prior, (graph.num_items, 1))
        clamped = graph.clamped_items
        post[clamped] = 0.0
        post[clamped, graph.clamp[clamped] - SCALE.min] = 1.0
        return post


def _prior_predictions(graph: ActiveGraph, prior: np.ndarray) -> np.ndarray:
    pred = np.full(graph.num_items, float(prior @ VALUES))
    clamped = graph.clamped_items
    pred[clamped] = graph.clamp[clamped]
    return pred


def posterior_beliefs(graph: ActiveGraph, weights: np.ndarray, prior: np.ndarray,
                      confidences, confidence_cap: float = 1.0 - 1e-12) -> np.ndarray:
    """Item beliefs for fixed rater confidences, ``(num_items, 5)``.

    Clamped items get the indicator of the active user's rating; items without
    raters get ``prior``.
    """
    kernel = _Kernel(graph, np.asarray(weights, dtype=float), prior)
    r = np.minimum(np.asarray(confidences, dtype=float), confidence_cap)
    sums = kernel.item_log_sums(np.log(kernel.factor_messages(r)))
    post = kernel.base_posterior()
    free = kernel.free_items
    post[free] = _normalize_logs_columns(sums[:, free]).T
    return post


def _column_errors(p: np.ndarray) -> np.ndarray:
    return np.abs(np.add.reduce(p, axis=0) - 1.0)


def run_inference(
    graph: ActiveGraph,
    weights: np.ndarray,
    prior: np.ndarray,
    config: InferenceConfig = InferenceConfig(),
    initial_confidences: Mapping[int, float] | None = None,
) -> BeliefState:
    """Iterate messages on ``graph`` until predictions settle.

    ``weights`` is the ``(num_items, 5)`` uncertainty split per item and
    ``prior`` the fallback distribution for items without evidence.
    ``initial_confidences`` optionally maps user index to a starting
    confidence carried over from an earlier run; other users start at
    ``config.initial_confidence``.

    Stops once no prediction moves by ``config.epsilon`` or more between
    iterations, or after ``config.max_iterations``; in the latter case
    ``converged`` is left False.
    """
    weights = np.asarray(weights, dtype=float)
    prior = np.asarray(prior, dtype=float)
    kernel = _Kernel(graph, weights, prior)
    n_factors, E = graph.num_factors, graph.num_edges

    r0 = np.full(n_factors, float(config.initial_confidence))
    if initial_confidences:
        for k, user in enumerate(graph.factor_users.tolist()):
            if user in initial_confidences:
                r0[k] = min(max(float(initial_confidences[user]), 0.0), 1.0)

    predictions = _prior_predictions(graph, prior)
    state = BeliefState(
        weights=weights,
        prior=prior,
        confidences=r0,
        previous_confidences=r0.copy(),
        lam=np.empty((E, SCALE.size)),
        mu=np.empty((E, SCALE.size)),
        posterior=kernel.base_posterior(),
        predictions=predictions,
        history=[predictions],
        confidence_history=[r0],
    )
    free = kernel.free_items
    clamped_edges, lonely = kernel.edge_clamped, kernel.lonely_edges

    for nu in range(1, config.max_iterations + 1):
        previous = state.confidences
        lam = kernel.factor_messages(np.minimum(previous, config.confidence_cap))
        log_lam = np.log(lam)
        sums = kernel.item_log_sums(log_lam)

        # leave-one-out products: the item's full log-sum minus the recipient's own term
        mu = _normalize_logs_columns(sums[:, graph.edge_item] - log_lam)
        mu[:, lonely] = kernel.prior_column
        mu[:, clamped_edges] = kernel.clamp_messages
        bad = ~np.isfinite(mu).all(axis=0)
        if bad.any():
            state.underflow_events += int(bad.sum())
            mu[:, bad] = kernel.prior_column

        expected_deviation = np.add.reduce(kernel.deviation * mu, axis=0)
        inconsistency = np.bincount(graph.edge_factor, weights=expected_deviation, minlength=n_factors)
        # every factor node has at least one edge by construction
        confidences = np.clip(1.0 - inconsistency / (RHO * kernel.factor_degree), 0.0, 1.0)

        belief = _normalize_logs_columns(sums[:, free])
        bad = ~np.isfinite(belief).all(axis=0)
        if bad.any():
            state.underflow_events += int(bad.sum())
            belief[:, bad] = kernel.prior_column
        state.posterior[free] = belief.T
        predictions = predictions.copy()
        predictions[free] = VALUES @ belief

        lam_err, mu_err = _column_errors(lam), _column_errors(mu)
        state.normalization_errors.append(float(max(lam_err.max(initial=0.0), mu_err.max(initial=0.0))))
        state.normalization_violations += int((lam_err > NORMALIZATION_TOLERANCE).sum()
                                              + (mu_err > NORMALIZATION_TOLERANCE).sum())
        state.messages_checked += 2 * E
        state.empty_neighbor_messages += int(lonely.sum())

        state.iteration = nu
        state.previous_confidences = previous
        state.confidences = confidences
        state.lam, state.mu = lam.T, mu.T
        state.predictions = predictions
        state.history.append(predictions)
        state.confidence_history.append(confidences)

        if np.abs(predictions - state.history[-2]).max(initial=0.0) < config.epsilon:
            state.converged = True
            break

    return state


# Single-message forms.  The vectorized loop above is the engine; these read a
# finished BeliefState and recompute one quantity from its inputs so that each
# update can be checked in isolation.


def factor_message(k: int, a: int, state: BeliefState, graph: ActiveGraph, weights=None,
                   confidence_cap: float = 1.0 - 1e-12) -> np.ndarray:
    """Message from factor ``k`` to item ``a`` at ``state.iteration``."""
    e = graph.edge_index(k, a)
    w = state.weights[a] if weights is None else np.asarray(weights, dtype=float)
    r = min(float(state.previous_confidences[k]), confidence_cap)
    return local_function(int(graph.edge_rating[e]), r, w)


def variable_message(a: int, k: int, state: BeliefState, graph: ActiveGraph) -> np.ndarray:
    """Message from item ``a`` to factor ``k``, built from ``state.lam``."""
    graph.edge_index(k, a)
    if graph.is_clamped(a):
        out = np.zeros(SCALE.size)
        out[graph.clamp[a] - SCALE.min] = 1.0
        return out
    sl = graph.edges_of_item(a)
    others = [e for e in range(sl.start, sl.stop) if graph.edge_factor[e] != k]
    if not others:
        return state.prior.copy()
    with np.errstate(divide="ignore"):
        logs = np.log(state.lam[others]).sum(axis=0)
    return _normalize_logs(logs)


def update_confidence(k: int, state: BeliefState, graph: ActiveGraph) -> float:
    """Confidence of factor ``k`` from the item messages in ``state.mu``."""
    edges = graph.edges_of_factor(k)
    if edges.size == 0:
        raise ValueError(f"factor {k} has no neighbors")
    dev = np.abs(graph.edge_rating[edges, None] - VALUES[None, :])
    total = float((dev * state.mu[edges]).sum())
    return min(max(1.0 - total / (RHO * edges.size), 0.0), 1.0)


def posterior_belief(a: int, state: BeliefState, graph: ActiveGraph) -> np.ndarray:
    """Belief of unclamped item ``a`` over all its raters."""
    if graph.is_clamped(a):
        raise ValueError(f"item {a} is clamped")
    sl = graph.edges_of_item(a)
    if sl.stop == sl.start:
        return state.prior.copy()
    with np.errstate(divide="ignore"):
        logs = np.log(state.lam[sl]).sum(axis=0)
    return _normalize_logs(logs)


def predict(a: int, state: BeliefState, graph: ActiveGraph | None = None) -> float:
    """Expected rating of item ``a``; clamped items return the active user's rating."""
    if graph is not None and graph.is_clamped(a):
        return float(graph.clamp[a])
    return float(state.posterior[a] @ VALUES)


def expected_rating(belief) -> float:
    return float(np.asarray(belief, dtype=float) @ VALUES)


@dataclass
class UserResult:
    """Outcome of one active user's session, trimmed for aggregation."""

    user: int
    state: BeliefState
    graph: ActiveGraph


def infer_user(train: RatingMatrix, overlap: GenreOverlap, z: int,
               config: InferenceConfig = InferenceConfig(),
               initial_confidences: Mapping[int, float] | None = None) -> UserResult:
    """Build ``z``'s graph and statistics from ``train`` and run inference."""
    graph = build_active_graph(train, z, config.mode)
    weights, prior = overlap.weights(train, z)
    state = run_inference(graph, weights, prior, config, initial_confidences)
    return UserResult(z, state, graph)


def write_trace(fh: TextIO, state: BeliefState, graph: ActiveGraph, items=None,
                header: bool = True) -> None:
    """CSV rows ``active_user,iteration,item,prediction`` for every iteration >= 1."""
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        writer.writerow(["active_user", "iteration", "item", "prediction"])
    items = np.flatnonzero(graph.clamp == 0) if items is None else np.asarray(items)
    for nu, pred in enumerate(state.history[1:], start=1):
        for a in items.tolist():
            writer.writerow([graph.active_user, nu, a, repr(float(pred[a]))])


def write_confidences(path: str | os.PathLike, table: Mapping[int, float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "confidence"])
        for user in sorted(table):
            writer.writerow([user, repr(float(table[user]))])


def read_confidences(path: str | os.PathLike) -> dict[int, float]:
    table = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            value = float(rec["confidence"])
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise ValueError(f"confidence for user {rec['user']} out of [0, 1]: {value}")
            table[int(rec["user"])] = value
    return table
