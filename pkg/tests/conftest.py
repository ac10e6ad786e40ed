import os
from pathlib import Path

import numpy as np
import pytest

from bprs.dataset import ItemCatalog, RatingMatrix, load_movielens

ROOT = Path(__file__).resolve().parents[1]
ML100K = Path(os.environ.get("BPRS_DATA", ROOT / "data" / "ml-100k"))

ACCEPTANCE_LINES: list[str] = []


def have_ml100k() -> bool:
    return (ML100K / "u.data").is_file() and (ML100K / "u.item").is_file()


requires_ml100k = pytest.mark.skipif(
    not have_ml100k(),
    reason=f"MovieLens 100K not found at {ML100K}; run scripts/fetch_ml100k.py",
)


@pytest.fixture(scope="session")
def ml100k():
    if not have_ml100k():
        pytest.skip(f"MovieLens 100K not found at {ML100K}")
    return load_movielens(ML100K)


@pytest.fixture(scope="session")
def ml100k_dir():
    if not have_ml100k():
        pytest.skip(f"MovieLens 100K not found at {ML100K}")
    return ML100K


def random_matrix(rng: np.random.Generator, num_users: int, num_items: int, density: float) -> RatingMatrix:
    mask = rng.random((num_users, num_items)) < density
    users, items = np.nonzero(mask)
    ratings = rng.integers(1, 6, size=users.size)
    return RatingMatrix.from_entries(users, items, ratings, num_users, num_items)


def random_catalog(rng: np.random.Generator, num_items: int, num_genres: int = 4) -> ItemCatalog:
    sets = [set(rng.choice(np.arange(1, num_genres + 1), rng.integers(1, 3), replace=False).tolist())
            for _ in range(num_items)]
    return ItemCatalog.from_genre_sets(sets)


def write_movielens(path: Path, matrix: RatingMatrix, catalog: ItemCatalog) -> Path:
    """Write ``matrix``/``catalog`` as a MovieLens-100K directory (1-based ids)."""
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "u.data", "w") as fh:
        for u, i, r in matrix.triples().tolist():
            fh.write(f"{u + 1}\t{i + 1}\t{r}\t880000000\n")
    with open(path / "u.item", "w") as fh:
        for row in range(len(catalog)):
            flags = "|".join(str(int(f)) for f in catalog.genres[row])
            fh.write(f"{row + 1}|Movie {row + 1} (1995)|01-Jan-1995||http://example|{flags}\n")
    return path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def consistent_raters_graph(num_raters: int = 6, clamps=None, extra_item: int | None = 3, extra_rating: int = 5):
    """Raters that agree with every clamp; optionally all also rate ``extra_item``.

    Returns ``(graph, weights, prior)`` with uniform weights on every item.
    """
    from bprs.graph import ActiveGraph

    clamps = clamps or {0: 4, 1: 2, 2: 5}
    num_items = max([*clamps, extra_item or 0]) + 1
    edges = [(k, a, r) for k in range(1, num_raters + 1) for a, r in clamps.items()]
    if extra_item is not None:
        edges += [(k, extra_item, extra_rating) for k in range(1, num_raters + 1)]
    graph = ActiveGraph.from_edges(0, num_items, edges, clamps)
    return graph, np.full((num_items, 5), 0.2), np.full(5, 0.2)
