from dataclasses import dataclass

import numpy as np

from cefl.model import LayerSpec

TINY_SPECS = (
    LayerSpec(4, 5, "relu"),
    LayerSpec(5, 4, "relu"),
    LayerSpec(4, 2, "softmax"),
)


@dataclass
class ArrayShard:
    """Array-backed stand-in for data.ClientShard in protocol tests."""

    client_id: int
    xtr: np.ndarray
    ytr: np.ndarray
    xte: np.ndarray
    yte: np.ndarray

    def train_arrays(self):
        return self.xtr, self.ytr

    def test_arrays(self):
        return self.xte, self.yte


def tiny_shards(n_clients, seed=0, n_train=8, n_test=4, dim=4, classes=2,
                shift=True):
    """Small well-separated per-client shards for fast protocol runs."""
    rng = np.random.default_rng(seed)
    shards = []
    for cid in range(n_clients):
        def draw(n):
            y = rng.integers(0, classes, size=n)
            x = rng.normal(scale=0.4, size=(n, dim))
            x[:, 0] += np.where(y == 0, 2.0, -2.0)
            if shift:
                x[:, 1] += 0.3 * cid      # mild client heterogeneity
            return x, y

        xtr, ytr = draw(n_train)
        xte, yte = draw(n_test)
        shards.append(ArrayShard(cid, xtr, ytr, xte, yte))
    return shards
