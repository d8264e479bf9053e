"""Exact cosine / CSLS retrieval in fixed-size row blocks.

Block size is constant so results are bit-identical regardless of how many
worker threads process the blocks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .embeddings import unit_rows

BLOCK_ROWS = 512


class RetrievalError(ValueError):
    pass


def _map_blocks(fn: Callable[[int, int], np.ndarray], n: int, workers: int = 1) -> List:
    spans = [(s, min(s + BLOCK_ROWS, n)) for s in range(0, n, BLOCK_ROWS)]
    if workers <= 1 or len(spans) <= 1:
        return [fn(s, e) for s, e in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda se: fn(*se), spans))


def _check_rows(X: np.ndarray, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise RetrievalError(f"{name}: no usable rows")
    if np.any(~np.any(X != 0, axis=1)):
        raise RetrievalError(f"{name}: zero vector among inputs")
    return X


def topk_mean(S: np.ndarray, k: int) -> np.ndarray:
    """Row-wise mean of the ``k`` largest entries, summed in descending order."""
    if k == S.shape[1]:
        top = S
    else:
        top = np.partition(S, S.shape[1] - k, axis=1)[:, S.shape[1] - k:]
    top = -np.sort(-top, axis=1)
    return top.sum(axis=1) / k


@dataclass
class Neighborhood:
    """The ``k`` nearest opposite-space rows of one vector, by cosine."""

    row: int
    neighbors: np.ndarray
    cosines: np.ndarray

    @property
    def mean_cos(self) -> float:
        return float(self.cosines.sum() / len(self.cosines))


@dataclass
class Neighborhoods:
    k: int
    src_idx: np.ndarray   # n x k, neighbors of each source row among targets
    src_cos: np.ndarray
    tgt_idx: np.ndarray   # m x k, neighbors of each target row among sources
    tgt_cos: np.ndarray

    @property
    def src_mean(self) -> np.ndarray:
        return self.src_cos.sum(axis=1) / self.k

    @property
    def tgt_mean(self) -> np.ndarray:
        return self.tgt_cos.sum(axis=1) / self.k

    def source(self, i: int) -> Neighborhood:
        return Neighborhood(i, self.src_idx[i], self.src_cos[i])

    def target(self, j: int) -> Neighborhood:
        return Neighborhood(j, self.tgt_idx[j], self.tgt_cos[j])


def _knn(An: np.ndarray, Bn: np.ndarray, k: int, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    def block(s, e):
        S = An[s:e] @ Bn.T
        order = np.argsort(-S, axis=1, kind="stable")[:, :k]
        return order, np.take_along_axis(S, order, axis=1)

    parts = _map_blocks(block, An.shape[0], workers)
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def build_neighborhoods(X: np.ndarray, Y: np.ndarray, k: int, workers: int = 1) -> Neighborhoods:
    """Exact k-NN by cosine in both directions (source->target, target->source)."""
    X = _check_rows(X, "source")
    Y = _check_rows(Y, "target")
    if not 1 <= k <= min(X.shape[0], Y.shape[0]):
        raise RetrievalError(f"k={k} outside 1..{min(X.shape[0], Y.shape[0])}")
    Xn, Yn = unit_rows(X), unit_rows(Y)
    si, sc = _knn(Xn, Yn, k, workers)
    ti, tc = _knn(Yn, Xn, k, workers)
    return Neighborhoods(k, si, sc, ti, tc)


def neighborhood_means(Xn: np.ndarray, Yn: np.ndarray, k: int, workers: int = 1):
    """Mean top-k cosine of each source row in Y and each target row in X."""
    kx = min(k, Yn.shape[0])
    ky = min(k, Xn.shape[0])
    rx = np.concatenate(_map_blocks(lambda s, e: topk_mean(Xn[s:e] @ Yn.T, kx),
                                    Xn.shape[0], workers))
    ry = np.concatenate(_map_blocks(lambda s, e: topk_mean(Yn[s:e] @ Xn.T, ky),
                                    Yn.shape[0], workers))
    return rx, ry


def csls_score(x, y, nx: Neighborhood, ny: Neighborhood) -> float:
    """``2 cos(x, y) - mean_cos(x) - mean_cos(y)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nxn, nyn = np.linalg.norm(x), np.linalg.norm(y)
    if nxn == 0 or nyn == 0:
        raise RetrievalError("CSLS undefined for a zero vector")
    cos = float(x @ y) / (nxn * nyn)
    return 2.0 * cos - nx.mean_cos - ny.mean_cos


class Scorer:
    """Pairwise cosine or CSLS scores between unit-normalized row sets.

    For CSLS the neighborhood penalties are computed once over the full
    spaces, so restricting the candidate set afterwards keeps scores
    comparable.
    """

    def __init__(self, X: np.ndarray, Y: np.ndarray, kind: str = "cosine",
                 k: int = 10, workers: int = 1):
        if kind not in ("cosine", "csls"):
            raise RetrievalError(f"unknown scorer {kind!r}")
        self.Xn = unit_rows(_check_rows(X, "source"))
        self.Yn = unit_rows(_check_rows(Y, "target"))
        if self.Xn.shape[1] != self.Yn.shape[1]:
            raise RetrievalError("source and target dimensions differ")
        self.kind = kind
        self.workers = workers
        if kind == "csls":
            self.rx, self.ry = neighborhood_means(self.Xn, self.Yn, k, workers)
        else:
            self.rx = self.ry = None

    def scores(self, rows: Optional[np.ndarray] = None, cols: Optional[np.ndarray] = None) -> np.ndarray:
        Xn = self.Xn if rows is None else self.Xn[rows]
        Yn = self.Yn if cols is None else self.Yn[cols]
        S = Xn @ Yn.T
        if self.kind == "csls":
            rx = self.rx if rows is None else self.rx[rows]
            ry = self.ry if cols is None else self.ry[cols]
            S = 2.0 * S - rx[:, None] - ry[None, :]
        return S

    def best(self, rows: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Argmax target for each source row; ties go to the lowest index."""
        idx = np.arange(self.Xn.shape[0]) if rows is None else np.asarray(rows)

        def block(s, e):
            S = self.scores(idx[s:e])
            j = np.argmax(S, axis=1)
            return j, S[np.arange(e - s), j]

        parts = _map_blocks(block, len(idx), self.workers)
        if not parts:
            return np.zeros(0, dtype=int), np.zeros(0)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
