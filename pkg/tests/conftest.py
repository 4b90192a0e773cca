import json

import numpy as np
import pytest

from profvec.embed import Hyperparams, train_skipgram

CLUSTER_X = ("x1", "x2", "x3")
CLUSTER_Y = ("y1", "y2", "y3")


def planted_streams(n_per_cluster=200, length=8, seed=0):
    """Two token groups that only ever co-occur within their own group."""
    rng = np.random.default_rng(seed)
    streams = []
    for group in (CLUSTER_X, CLUSTER_Y):
        for _ in range(n_per_cluster):
            streams.append([group[i] for i in rng.integers(0, len(group), size=length)])
    return streams


@pytest.fixture(scope="session")
def planted_model():
    hp = Hyperparams(dim=25, min_count=1, seed=42, table_size=100_000)
    return train_skipgram(planted_streams(), hp)


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name, rows):
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as out:
            for row in rows:
                out.write(row if isinstance(row, str) else json.dumps(row))
                out.write("\n")
        return path

    return _write
