import csv
import json

import numpy as np
import pytest

from bprs.bench import time_user
from bprs.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, git_blob_hash, main
from bprs.dataset import ItemCatalog, RatingMatrix
from bprs.graph import GenreOverlap
from bprs.inference import InferenceConfig

from conftest import random_catalog, random_matrix, write_movielens


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    rng = np.random.default_rng(2)
    matrix = random_matrix(rng, 30, 25, 0.3)
    t = matrix.triples()
    # user 0 (id 1) rates every item
    t = t[t[:, 0] != 0]
    full = np.column_stack([np.zeros(25, dtype=np.int64), np.arange(25), rng.integers(1, 6, 25)])
    t = np.concatenate([full, t])
    matrix = RatingMatrix.from_entries(t[:, 0], t[:, 1], t[:, 2], 30, 25)
    return write_movielens(tmp_path_factory.mktemp("ml"), matrix, random_catalog(rng, 25))


def test_evaluate_writes_outputs(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["evaluate", "--data", str(data_dir), "--out", str(out), "--write-split"]) == EXIT_OK
    assert "RMSE=" in capsys.readouterr().out
    for name in ("report.json", "convergence.csv", "timings.csv", "manifest.json", "train.csv", "test.csv"):
        assert (out / name).is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["rmse"] > 0 and report["mode"] == "two-hop"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 0 and manifest["config"]["rho0"] == 0.5
    assert manifest["inputs"]["u.data"] == git_blob_hash(data_dir / "u.data")
    assert manifest["outputs"]["report.json"] == git_blob_hash(out / "report.json")
    with open(out / "timings.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["user", "ratings_count", "graph_size", "ms"]
    assert len(rows) == report["num_users"]


def test_git_blob_hash_matches_git(tmp_path):
    (tmp_path / "f").write_bytes(b"hello\n")
    assert git_blob_hash(tmp_path / "f") == "ce013625030ba8dba906f756967f9e9ca394464a"


@pytest.mark.parametrize("argv", [
    ["evaluate", "--rho0", "1.5"],
    ["evaluate", "--rho0", "0"],
    ["evaluate", "--train-frac", "0"],
    ["evaluate", "--max-iters", "0"],
    ["evaluate", "--mode", "three-hop"],
    ["recommend"],
    ["bogus"],
])
def test_usage_errors(argv, tmp_path, capsys):
    # validation happens before the (missing) data directory is touched
    assert main(argv + ["--data", str(tmp_path / "nowhere")]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_data(tmp_path, capsys):
    assert main(["evaluate", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_malformed_data(data_dir, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "u.item").write_bytes((data_dir / "u.item").read_bytes())
    (bad / "u.data").write_text("1\t1\t4\t0\n1\t2\t9\t0\n")
    assert main(["evaluate", "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "u.data:2" in capsys.readouterr().err


def recommend(data_dir, capsys, *extra):
    code = main(["recommend", "--data", str(data_dir), *extra])
    lines = capsys.readouterr().out.splitlines()
    return code, lines


def test_recommend_user_who_rated_everything(data_dir, capsys):
    code, lines = recommend(data_dir, capsys, "--user", "1")
    assert code == EXIT_OK and len(lines) == 1


def test_recommend_truncation_and_determinism(data_dir, capsys):
    code, lines = recommend(data_dir, capsys, "--user", "2", "--top-n", "1000")
    assert code == EXIT_OK
    ranked = lines[1:]
    unseen = sum(1 for line in (data_dir / "u.data").read_text().splitlines() if line.split("\t")[0] == "2")
    assert len(ranked) == 25 - unseen
    scores = [float(line.split("\t")[2]) for line in ranked]
    assert scores == sorted(scores, reverse=True)
    assert recommend(data_dir, capsys, "--user", "2", "--top-n", "1000")[1] == lines
    assert recommend(data_dir, capsys, "--user", "2", "--top-n", "3")[1][1:] == ranked[:3]


def test_recommend_unknown_user(data_dir, capsys):
    assert recommend(data_dir, capsys, "--user", "999")[0] == EXIT_USAGE


def test_bench_sample(data_dir, tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--data", str(data_dir), "--sample", "7", "--out", str(out)]) == EXIT_OK
    with open(out / "timings.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 7
    assert "slope" in capsys.readouterr().out


def test_empty_neighborhood_floor():
    # user 0 is alone on its items; user 1 shares items with many raters
    rows = [(0, 0, 4), (0, 1, 3)] + [(u, i, 1 + (u + i) % 5) for u in range(1, 60) for i in range(2, 30)]
    users, items, ratings = zip(*rows)
    train = RatingMatrix.from_entries(users, items, ratings, 60, 30)
    overlap = GenreOverlap.for_matrix(train, ItemCatalog.from_genre_sets([{1}] * 30))
    config = InferenceConfig()
    lonely_ms, lonely_edges = time_user(train, overlap, 0, config, repeats=5)
    busy_ms, busy_edges = time_user(train, overlap, 1, config, repeats=5)
    assert lonely_edges == 0 and busy_edges > 1000
    assert lonely_ms < busy_ms
