"""Scoring and experiment orchestration.

``run_experiment`` runs one inference session per test user (optionally in a
process pool), collects each user's test-item predictions at every iteration,
and reduces them into an :class:`EvalReport`.  Everything that goes into the
report is a deterministic function of the inputs; wall-clock measurements are
kept apart in :class:`UserTiming` rows.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import ItemCatalog, RatingMatrix
from .graph import GenreOverlap, Neighborhood
from .inference import InferenceConfig, infer_user

log = logging.getLogger(__name__)

# Published RMSEs quoted for comparison only; neither method is implemented here.
REFERENCE_RMSE = {"MovieAvg": 1.053, "CorNgbr": 0.9406, "SVD-50": 0.9046}


def _squared_error_rmse(pred: np.ndarray, true: np.ndarray) -> float:
    # fsum is exactly rounded, so the result does not depend on pair order
    return math.sqrt(math.fsum(((pred - true) ** 2).tolist()) / pred.size)


def rmse(predictions, truth) -> float:
    """Root mean squared error over every ``(user, item, rating)`` in ``truth``.

    ``predictions`` is either a mapping ``(user, item) -> value`` or an
    ``(n, 3)`` array of ``(user, item, value)`` rows; it must cover every
    test pair.
    """
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("empty test set")
    truth = truth.reshape(-1, 3)
    if not isinstance(predictions, Mapping):
        predictions = {(int(u), int(i)): float(p) for u, i, p in np.asarray(predictions).reshape(-1, 3).tolist()}
    try:
        pred = np.array([predictions[(int(u), int(i))] for u, i, _ in truth.tolist()], dtype=float)
    except KeyError as exc:
        raise ValueError(f"no prediction for test pair {exc.args[0]}") from None
    return _squared_error_rmse(pred, truth[:, 2].astype(float))


class MovieAverage:
    """Per-item mean training rating, global mean for items with no ratings."""

    def __init__(self, train: RatingMatrix):
        sums = np.bincount(train.items, weights=train.ratings, minlength=train.num_items)
        counts = np.bincount(train.items, minlength=train.num_items)
        self.global_mean = float(train.ratings.mean()) if len(train) else float("nan")
        with np.errstate(invalid="ignore", divide="ignore"):
            self.table = np.where(counts > 0, sums / np.maximum(counts, 1), self.global_mean)

    def predict(self, user: int, item: int) -> float:
        return float(self.table[item])

    def predict_many(self, triples) -> np.ndarray:
        triples = np.asarray(triples).reshape(-1, 3)
        return self.table[triples[:, 1]]


def movie_avg_predict(train: RatingMatrix, user: int, item: int) -> float:
    ratings = train.item_ratings(item)
    if ratings.size:
        return float(ratings.mean())
    return float(train.ratings.mean())


def rank_items(items: Sequence[int], scores: Sequence[float]) -> list[int]:
    """Items ordered by descending score, ties broken by ascending item id."""
    return [i for _, i in sorted(zip((-float(s) for s in scores), (int(i) for i in items)))]


def precision_at_k(ranked: Mapping[int, Sequence[int]], truth, k: int, threshold: float = 4) -> float:
    """Mean precision of each user's top-``k`` ranked test items.

    Only users with at least one relevant test item (true rating >=
    ``threshold``) are scored.  When a user has fewer than ``k`` ranked items
    the denominator is the number actually ranked.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = np.asarray(truth).reshape(-1, 3)
    relevant: dict[int, set[int]] = {}
    for u, i, r in truth.tolist():
        if r >= threshold:
            relevant.setdefault(u, set()).add(i)
    scores = []
    for user in sorted(relevant):
        top = list(ranked.get(user, ()))[:k]
        if not top:
            continue
        scores.append(sum(i in relevant[user] for i in top) / len(top))
    if not scores:
        raise ValueError("no user has a relevant test item")
    return math.fsum(scores) / len(scores)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


@dataclass
class UserOutcome:
    user: int
    items: np.ndarray
    curve: np.ndarray          # (max_iterations, n_items) predictions, carried forward after stopping
    iterations: int
    converged: bool
    covered: np.ndarray        # test items with at least one retained rater
    max_normalization_error: float
    normalization_violations: int
    messages_checked: int
    underflow_events: int
    ratings_count: int
    graph_edges: int
    factors: int
    ms: float


@dataclass(frozen=True)
class UserTiming:
    user: int
    ratings_count: int
    graph_size: int
    ms: float


@dataclass
class EvalReport:
    mode: str
    num_users: int
    num_test: int
    rmse: float
    rmse_curve: list[float]
    precision_at_k: dict[str, float]
    mean_iterations: float
    median_iterations: float
    converged_fraction: float
    coverage: float
    movie_avg_rmse: float
    max_normalization_error: float
    normalization_violations: int
    messages_checked: int
    underflow_events: int
    config: dict = field(default_factory=dict)
    reference_rmse: dict = field(default_factory=lambda: dict(REFERENCE_RMSE))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def curve_csv(self) -> str:
        lines = ["iteration,rmse"]
        lines += [f"{nu},{value!r}" for nu, value in enumerate(self.rmse_curve, start=1)]
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    report: EvalReport
    outcomes: list[UserOutcome]

    @property
    def timings(self) -> list[UserTiming]:
        return [UserTiming(o.user, o.ratings_count, o.graph_edges, o.ms) for o in self.outcomes]

    def final_predictions(self) -> dict[tuple[int, int], float]:
        return {(o.user, int(i)): float(p) for o in self.outcomes for i, p in zip(o.items, o.curve[-1])}


def write_timings(path: str | os.PathLike, timings: Sequence[UserTiming]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "ratings_count", "graph_size", "ms"])
        for t in timings:
            writer.writerow([t.user, t.ratings_count, t.graph_size, f"{t.ms:.3f}"])


# Worker-side globals, populated once per process.
_SHARED: dict = {}


def _init_worker(train, overlap, test_by_user, config):
    _SHARED.update(train=train, overlap=overlap, test_by_user=test_by_user, config=config)


def _evaluate_user(z: int) -> UserOutcome:
    train, overlap, config = _SHARED["train"], _SHARED["overlap"], _SHARED["config"]
    items = _SHARED["test_by_user"][z][:, 0]
    start = time.perf_counter()
    result = infer_user(train, overlap, z, config)
    ms = (time.perf_counter() - start) * 1000.0
    state, graph = result.state, result.graph

    curve = np.empty((config.max_iterations, items.size))
    for nu in range(1, config.max_iterations + 1):
        curve[nu - 1] = state.history[min(nu, len(state.history) - 1)][items]
    covered = graph.item_degree()[items] > 0
    return UserOutcome(
        user=z,
        items=items,
        curve=curve,
        iterations=state.iteration,
        converged=state.converged,
        covered=covered,
        max_normalization_error=state.max_normalization_error,
        normalization_violations=state.normalization_violations,
        messages_checked=state.messages_checked,
        underflow_events=state.underflow_events,
        ratings_count=int(train.items_of(z).size),
        graph_edges=graph.num_edges,
        factors=graph.num_factors,
        ms=ms,
    )


def _group_test(test: np.ndarray) -> dict[int, np.ndarray]:
    """``user -> (n, 2)`` array of ``(item, rating)`` sorted by item."""
    test = test[np.lexsort((test[:, 1], test[:, 0]))]
    users, starts = np.unique(test[:, 0], return_index=True)
    return {int(u): rows for u, rows in zip(users, np.split(test[:, 1:], starts[1:]))}


def run_experiment(
    train: RatingMatrix,
    test,
    catalog: ItemCatalog,
    config: InferenceConfig = InferenceConfig(),
    mode: str | Neighborhood | None = None,
    precision_k: Sequence[int] = (5, 10),
    threshold: float = 4,
    workers: int = 1,
    users: Sequence[int] | None = None,
    overlap: GenreOverlap | None = None,
) -> ExperimentResult:
    """Run inference for every test user and score the held-out ratings.

    ``mode`` overrides ``config.mode``.  ``users`` restricts the run to a
    subset of test users (their test pairs only).
    """
    if mode is not None:
        config = InferenceConfig(config.initial_confidence, config.epsilon, config.max_iterations,
                                 Neighborhood.parse(mode), config.confidence_cap)
    test = np.asarray(test).reshape(-1, 3)
    if users is not None:
        test = test[np.isin(test[:, 0], np.asarray(users))]
    if test.size == 0:
        raise ValueError("no test ratings to evaluate")
    overlap = overlap or GenreOverlap.for_matrix(train, catalog)
    by_user = _group_test(test)
    order = sorted(by_user)

    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(train, overlap, by_user, config)) as pool:
            outcomes = list(pool.map(_evaluate_user, order, chunksize=8))
    else:
        _init_worker(train, overlap, by_user, config)
        outcomes = []
        for n, z in enumerate(order, start=1):
            outcomes.append(_evaluate_user(z))
            if n % 100 == 0:
                log.info("evaluated %d/%d users", n, len(order))
    _SHARED.clear()

    return ExperimentResult(_reduce(outcomes, by_user, train, test, config, precision_k, threshold), outcomes)


def _reduce(outcomes, by_user, train, test, config, precision_k, threshold) -> EvalReport:
    outcomes = sorted(outcomes, key=lambda o: o.user)
    true = np.concatenate([by_user[o.user][:, 1] for o in outcomes]).astype(float)
    curves = np.concatenate([o.curve for o in outcomes], axis=1)
    rmse_curve = [_squared_error_rmse(curves[nu], true) for nu in range(curves.shape[0])]

    ranked = {o.user: rank_items(o.items, o.curve[-1]) for o in outcomes}
    precision = {}
    for k in precision_k:
        try:
            precision[str(k)] = precision_at_k(ranked, test, k, threshold)
        except ValueError:
            precision[str(k)] = float("nan")

    iterations = np.array([o.iterations for o in outcomes], dtype=float)
    covered = np.concatenate([o.covered for o in outcomes])
    baseline = MovieAverage(train)
    return EvalReport(
        mode=config.mode.value,
        num_users=len(outcomes),
        num_test=int(true.size),
        rmse=rmse_curve[-1],
        rmse_curve=rmse_curve,
        precision_at_k=precision,
        mean_iterations=float(iterations.mean()),
        median_iterations=float(np.median(iterations)),
        converged_fraction=float(np.mean([o.converged for o in outcomes])),
        coverage=float(covered.mean()),
        movie_avg_rmse=_squared_error_rmse(baseline.predict_many(test), test[:, 2].astype(float)),
        max_normalization_error=max(o.max_normalization_error for o in outcomes),
        normalization_violations=sum(o.normalization_violations for o in outcomes),
        messages_checked=sum(o.messages_checked for o in outcomes),
        underflow_events=sum(o.underflow_events for o in outcomes),
        config={
            "initial_confidence": config.initial_confidence,
            "epsilon": config.epsilon,
            "max_iterations": config.max_iterations,
            "mode": config.mode.value,
            "precision_k": list(precision_k),
            "threshold": threshold,
        },
    )
