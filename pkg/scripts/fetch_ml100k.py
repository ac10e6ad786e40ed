"""Materialize MovieLens 100K (``u.data`` / ``u.item``) from the RecBole wheel.

grouplens.org is not always reachable from build sandboxes, but PyPI is, and
the RecBole distribution bundles the full ml-100k interaction and item files.
``u.data`` is copied verbatim; ``u.item`` is rebuilt with the 19 binary genre
flags from RecBole's genre-name column.

    python scripts/fetch_ml100k.py data/ml-100k
"""

import argparse
import glob
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
PREFIX = "recbole/dataset_example/ml-100k/ml-100k"


def fetch_wheel(workdir: str, version: str) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
         "-d", workdir, f"recbole=={version}"],
        check=True,
    )
    return Path(glob.glob(f"{workdir}/recbole-*.whl")[0])


def convert(wheel: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as zf:
        inter = zf.read(f"{PREFIX}.inter").decode("latin-1").splitlines()[1:]
        items = zf.read(f"{PREFIX}.item").decode("latin-1").splitlines()[1:]

    with open(out / "u.data", "w", newline="\n") as fh:
        for line in inter:
            fh.write(line + "\n")

    with open(out / "u.item", "w", encoding="latin-1", newline="\n") as fh:
        for line in items:
            item_id, title, year, genres = line.split("\t")
            names = set(genres.split())
            unknown = [n for n in names if n not in GENRES]
            if unknown:
                raise ValueError(f"item {item_id}: unexpected genres {unknown}")
            flags = "|".join("1" if g in names else "0" for g in GENRES)
            release = "" if year == "unkonwn" else f"01-Jan-{year}"
            fh.write(f"{item_id}|{title}|{release}||unknown|{flags}\n")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path, nargs="?", default=Path("data/ml-100k"))
    parser.add_argument("--wheel", type=Path, help="use an already downloaded wheel")
    parser.add_argument("--recbole-version", default="1.2.1")
    args = parser.parse_args()

    if args.wheel:
        convert(args.wheel, args.out)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            convert(fetch_wheel(tmp, args.recbole_version), args.out)
    print(f"wrote {args.out / 'u.data'} and {args.out / 'u.item'}")


if __name__ == "__main__":
    main()
