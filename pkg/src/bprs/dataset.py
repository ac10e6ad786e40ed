"""MovieLens-100K ingestion, the sparse rating matrix, and seeded splits.

Ratings are stored once as parallel ``(user, item, rating)`` arrays sorted by
user, with CSR-style offsets for both the per-user and per-item views.  User
and item ids are remapped to dense 0-based indices; the original ids are kept
on the matrix for reporting.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GENRE_NAMES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
UNKNOWN_GENRE = 0


class DataError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message: str, path: str | os.PathLike | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class RatingScale:
    min: int = 1
    max: int = 5

    @property
    def rho(self) -> int:
        """Largest possible deviation between two ratings."""
        return self.max - self.min

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.min, self.max + 1)

    @property
    def size(self) -> int:
        return self.max - self.min + 1

    def __contains__(self, rating) -> bool:
        return float(rating).is_integer() and self.min <= rating <= self.max


SCALE = RatingScale()


def _offsets(keys: np.ndarray, n: int) -> np.ndarray:
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=indptr[1:])
    return indptr


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Immutable sparse user/item rating matrix.

    ``users``, ``items`` and ``ratings`` are parallel arrays sorted by
    ``(user, item)``.  ``user_indptr`` slices them per user; ``item_order``
    and ``item_indptr`` give the same edges grouped by item.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray
    user_indptr: np.ndarray = field(repr=False)
    item_order: np.ndarray = field(repr=False)
    item_indptr: np.ndarray = field(repr=False)

    @classmethod
    def from_entries(
        cls,
        users,
        items,
        ratings,
        num_users: int | None = None,
        num_items: int | None = None,
        user_ids=None,
        item_ids=None,
        scale: RatingScale = SCALE,
    ) -> "RatingMatrix":
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        ratings = np.asarray(ratings).reshape(-1)
        if not (users.size == items.size == ratings.size):
            raise DataError("users, items and ratings must have equal length")
        if ratings.size and not np.all(np.equal(np.mod(ratings, 1), 0)):
            raise DataError("ratings must be integers")
        ratings = ratings.astype(np.int64)
        if ratings.size and (ratings.min() < scale.min or ratings.max() > scale.max):
            raise DataError(f"ratings must lie in [{scale.min}, {scale.max}]")

        if num_users is None:
            num_users = int(users.max()) + 1 if users.size else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if items.size else 0
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise DataError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise DataError("item index out of range")

        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
        if users.size > 1:
            dup = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise DataError(f"duplicate rating for (user {users[k]}, item {items[k]})")

        user_ids = np.arange(num_users) if user_ids is None else np.asarray(user_ids)
        item_ids = np.asarray(item_ids) if item_ids is not None else np.arange(num_items)
        if user_ids.size != num_users or item_ids.size != num_items:
            raise DataError("id tables do not match matrix dimensions")

        item_order = np.lexsort((users, items))
        for arr in (users, items, ratings, user_ids, item_ids, item_order):
            arr.setflags(write=False)
        return cls(
            num_users=int(num_users),
            num_items=int(num_items),
            users=users,
            items=items,
            ratings=ratings,
            user_ids=user_ids,
            item_ids=item_ids,
            user_indptr=_offsets(users, num_users),
            item_order=item_order,
            item_indptr=_offsets(items, num_items),
        )

    def __len__(self) -> int:
        return int(self.ratings.size)

    @property
    def nnz(self) -> int:
        return len(self)

    def items_of(self, user: int) -> np.ndarray:
        lo, hi = self.user_indptr[user], self.user_indptr[user + 1]
        return self.items[lo:hi]

    def ratings_of(self, user: int) -> np.ndarray:
        lo, hi = self.user_indptr[user], self.user_indptr[user + 1]
        return self.ratings[lo:hi]

    def users_of(self, item: int) -> np.ndarray:
        idx = self.item_order[self.item_indptr[item]:self.item_indptr[item + 1]]
        return self.users[idx]

    def item_ratings(self, item: int) -> np.ndarray:
        idx = self.item_order[self.item_indptr[item]:self.item_indptr[item + 1]]
        return self.ratings[idx]

    def user_degree(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def edge_set(self) -> set[tuple[int, int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    def triples(self) -> np.ndarray:
        """Entries as an ``(n, 3)`` integer array of ``(user, item, rating)``."""
        return np.column_stack([self.users, self.items, self.ratings])

    def subset(self, mask: np.ndarray) -> "RatingMatrix":
        """Keep the selected entries; dimensions and id tables are preserved."""
        return RatingMatrix.from_entries(
            self.users[mask], self.items[mask], self.ratings[mask],
            num_users=self.num_users, num_items=self.num_items,
            user_ids=self.user_ids, item_ids=self.item_ids,
        )


@dataclass(frozen=True, eq=False)
class ItemCatalog:
    """Per-item genre sets.  ``genres`` is a boolean ``(items, 19)`` incidence."""

    item_ids: np.ndarray
    titles: tuple[str, ...]
    genres: np.ndarray
    genre_names: tuple[str, ...] = GENRE_NAMES

    def __len__(self) -> int:
        return int(self.item_ids.size)

    def genre_set(self, row: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.genres[row]).tolist())

    def aligned(self, item_ids) -> np.ndarray:
        """Genre incidence rows reordered to match ``item_ids``."""
        position = {int(i): k for k, i in enumerate(self.item_ids.tolist())}
        try:
            rows = [position[int(i)] for i in np.asarray(item_ids).tolist()]
        except KeyError as exc:
            raise DataError(f"item {exc.args[0]} missing from catalog") from None
        return self.genres[rows]

    @classmethod
    def from_genre_sets(cls, sets, item_ids=None, titles=None) -> "ItemCatalog":
        """Build a catalog from iterables of genre indices (mostly for tests)."""
        sets = [set(s) for s in sets]
        genres = np.zeros((len(sets), len(GENRE_NAMES)), dtype=bool)
        for row, s in enumerate(sets):
            genres[row, sorted(s) or [UNKNOWN_GENRE]] = True
        ids = np.arange(len(sets)) if item_ids is None else np.asarray(item_ids)
        return cls(ids, tuple(titles or [""] * len(sets)), genres)


def _dense_index(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids, index = np.unique(raw, return_inverse=True)
    return ids, index.reshape(-1)


def parse_ratings(path: str | os.PathLike, scale: RatingScale = SCALE) -> RatingMatrix:
    """Read a MovieLens-100K ``u.data`` file (``user<TAB>item<TAB>rating<TAB>timestamp``).

    Timestamps are validated and dropped.  Raises :class:`DataError` naming
    the offending line for malformed rows, out-of-scale ratings and duplicate
    ``(user, item)`` pairs.
    """
    users, items, ratings = [], [], []
    seen: dict[tuple[int, int], int] = {}
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"expected 4 tab-separated fields, got {len(fields)}", path, lineno)
            try:
                user, item, rating, _ = (int(f) for f in fields)
            except ValueError:
                raise DataError(f"non-integer field in {line!r}", path, lineno) from None
            if rating not in scale:
                raise DataError(f"rating {rating} outside [{scale.min}, {scale.max}]", path, lineno)
            key = (user, item)
            if key in seen:
                raise DataError(
                    f"duplicate rating for user {user}, item {item} (first on line {seen[key]})",
                    path, lineno,
                )
            seen[key] = lineno
            users.append(user)
            items.append(item)
            ratings.append(rating)

    user_ids, u = _dense_index(np.array(users, dtype=np.int64))
    item_ids, i = _dense_index(np.array(items, dtype=np.int64))
    return RatingMatrix.from_entries(u, i, ratings, user_ids.size, item_ids.size, user_ids, item_ids)


def parse_items(path: str | os.PathLike) -> ItemCatalog:
    """Read a MovieLens-100K ``u.item`` file (pipe separated, 19 trailing genre flags)."""
    n_flags = len(GENRE_NAMES)
    ids, titles, rows = [], [], []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("|")
            # id|title|release|video|url precede the flags
            if len(fields) != n_flags + 5:
                raise DataError(f"expected 5 descriptive fields and {n_flags} genre flags, "
                                f"got {len(fields)} fields", path, lineno)
            flags = fields[-n_flags:]
            if any(f not in ("0", "1") for f in flags):
                raise DataError(f"genre flags must be 0 or 1, got {flags}", path, lineno)
            try:
                ids.append(int(fields[0]))
            except ValueError:
                raise DataError(f"bad item id {fields[0]!r}", path, lineno) from None
            titles.append(fields[1])
            rows.append([f == "1" for f in flags])

    genres = np.array(rows, dtype=bool).reshape(-1, n_flags)
    genres[~genres.any(axis=1), UNKNOWN_GENRE] = True
    if len(set(ids)) != len(ids):
        raise DataError("duplicate item id", path)
    return ItemCatalog(np.array(ids, dtype=np.int64), tuple(titles), genres)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    strategy: str = "global-random-by-rating"

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.strategy != "global-random-by-rating":
            raise ValueError(f"unknown split strategy {self.strategy!r}")


def split(matrix: RatingMatrix, spec: SplitSpec = SplitSpec()) -> tuple[RatingMatrix, np.ndarray]:
    """Random split over rating records.

    Returns the training matrix (same dimensions and id tables as ``matrix``)
    and the held-out entries as an ``(n, 3)`` array of ``(user, item, rating)``
    sorted by user then item.
    """
    if len(matrix) == 0:
        raise ValueError("cannot split an empty rating matrix")
    rng = np.random.default_rng(spec.seed)
    n_train = int(round(spec.train_fraction * len(matrix)))
    perm = rng.permutation(len(matrix))
    train_mask = np.zeros(len(matrix), dtype=bool)
    train_mask[perm[:n_train]] = True
    test = matrix.triples()[~train_mask]
    return matrix.subset(train_mask), test


def write_ratings(matrix: RatingMatrix, path: str | os.PathLike) -> None:
    """Write ``u.data`` format using the original ids (timestamps are zero)."""
    with open(path, "w", newline="\n") as fh:
        for u, i, r in zip(matrix.users.tolist(), matrix.items.tolist(), matrix.ratings.tolist()):
            fh.write(f"{matrix.user_ids[u]}\t{matrix.item_ids[i]}\t{r}\t0\n")


def write_split_csv(triples: np.ndarray, matrix: RatingMatrix, path: str | os.PathLike) -> None:
    """Snapshot ``user,item,rating`` rows with original ids."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "item", "rating"])
        for u, i, r in np.asarray(triples).tolist():
            writer.writerow([matrix.user_ids[u], matrix.item_ids[i], r])


def read_split_csv(path: str | os.PathLike, matrix: RatingMatrix) -> np.ndarray:
    """Inverse of :func:`write_split_csv`, mapped onto ``matrix``'s dense indices."""
    uidx = {int(v): k for k, v in enumerate(matrix.user_ids.tolist())}
    iidx = {int(v): k for k, v in enumerate(matrix.item_ids.tolist())}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append((uidx[int(rec["user"])], iidx[int(rec["item"])], int(rec["rating"])))
            except (KeyError, ValueError, TypeError):
                raise DataError(f"bad split row {rec}", path, lineno) from None
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def load_movielens(data_dir: str | os.PathLike) -> tuple[RatingMatrix, ItemCatalog]:
    data_dir = Path(data_dir)
    for name in ("u.data", "u.item"):
        if not (data_dir / name).is_file():
            raise FileNotFoundError(f"{data_dir / name} not found")
    return parse_ratings(data_dir / "u.data"), parse_items(data_dir / "u.item")
