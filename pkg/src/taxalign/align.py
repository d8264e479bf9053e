"""Orthogonal mappings between two embedding spaces.

Convention: the map sends a source column vector ``x`` to ``W @ x``; for row
matrices that is ``X @ W.T``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .embeddings import CategoryVectorSet, normalize, unit_rows, whiten
from .retrieval import BLOCK_ROWS, Scorer, _map_blocks

logger = logging.getLogger(__name__)


class AlignError(ValueError):
    pass


@dataclass
class SeedDictionary:
    """Source/target row-index pairs, optionally weighted."""

    pairs: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (len(self.pairs),):
                raise AlignError("one weight per pair expected")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def src(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def tgt(self) -> np.ndarray:
        return self.pairs[:, 1]

    def check(self, n: int, m: int) -> None:
        if len(self.pairs) == 0:
            raise AlignError("empty seed dictionary")
        if self.src.min() < 0 or self.src.max() >= n or self.tgt.min() < 0 or self.tgt.max() >= m:
            raise AlignError("seed dictionary index out of range")


@dataclass
class MappingMatrix:
    W: np.ndarray
    method: str = "procrustes"
    iterations: int = 1
    history: List[float] = field(default_factory=list)
    meta: Dict[str, str] = field(default_factory=dict)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W.T

    def orthogonality_error(self) -> float:
        return float(np.abs(self.W.T @ self.W - np.eye(self.W.shape[0])).max())


@dataclass
class AlignmentConfig:
    refinement_iterations: int = 5
    csls_k: int = 10
    whitening: bool = False
    whitening_epsilon: float = 0.0
    normalization: Tuple[str, ...] = ("unit", "center", "unit")
    convergence_tol: float = 1e-6
    seed: int = 0
    restarts: int = 3
    restart_keep: float = 0.5
    profile_size: int = 4000
    workers: int = 1

    def __post_init__(self):
        if self.refinement_iterations < 1:
            raise AlignError("refinement_iterations must be >= 1")
        if self.csls_k < 1:
            raise AlignError("csls_k must be >= 1")
        if self.restarts < 1:
            raise AlignError("restarts must be >= 1")
        self.normalization = tuple(self.normalization)


def _usable(X: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.any(X != 0, axis=1))


def procrustes_solve(X: np.ndarray, Y: np.ndarray, dictionary: SeedDictionary) -> MappingMatrix:
    """Orthogonal ``W`` minimizing the sum of ``||W x_i - y_j||^2`` over the pairs.

    ``W = U V^T`` where ``U S V^T`` is the SVD of the weighted
    cross-covariance ``sum_pairs y x^T``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise AlignError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    dictionary.check(X.shape[0], Y.shape[0])
    Xd, Yd = X[dictionary.src], Y[dictionary.tgt]
    if not (np.all(np.any(Xd != 0, axis=1)) and np.all(np.any(Yd != 0, axis=1))):
        raise AlignError("seed dictionary references a zero row")
    if dictionary.weights is not None:
        Yd = Yd * dictionary.weights[:, None]
    M = Yd.T @ Xd
    if not np.any(M):
        raise AlignError("cross-covariance is identically zero")
    U, _, Vt = np.linalg.svd(M)
    return MappingMatrix(U @ Vt, method="procrustes")


def vecmap_transform(X: np.ndarray, Y: np.ndarray, dictionary: SeedDictionary) -> Tuple[np.ndarray, np.ndarray]:
    """Rotate both spaces onto the singular bases of ``X_d^T Y_d``.

    Returns ``(X @ U, Y @ V)``; dictionary pairs end up maximally correlated.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise AlignError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    dictionary.check(X.shape[0], Y.shape[0])
    Xd, Yd = X[dictionary.src], Y[dictionary.tgt]
    if dictionary.weights is not None:
        Xd = Xd * dictionary.weights[:, None]
    M = Xd.T @ Yd
    if not np.any(M):
        raise AlignError("cross-covariance is identically zero")
    U, _, Vt = np.linalg.svd(M)
    return X @ U, Y @ Vt.T


def vecmap_mapping(X: np.ndarray, Y: np.ndarray, dictionary: SeedDictionary) -> MappingMatrix:
    """The single orthogonal map ``V U^T`` equivalent to :func:`vecmap_transform`."""
    dictionary.check(X.shape[0], Y.shape[0])
    Xd, Yd = np.asarray(X, float)[dictionary.src], np.asarray(Y, float)[dictionary.tgt]
    if dictionary.weights is not None:
        Xd = Xd * dictionary.weights[:, None]
    U, _, Vt = np.linalg.svd(Xd.T @ Yd)
    return MappingMatrix(Vt.T @ U.T, method="vecmap")


def _induce(Xp, Yp, scorer="csls", mode="forward", k=10, workers=1):
    if scorer not in ("cosine", "csls"):
        raise AlignError(f"unknown scorer {scorer!r}")
    if mode not in ("forward", "mutual"):
        raise AlignError(f"unknown mode {mode!r}")
    Xp = np.asarray(Xp, dtype=np.float64)
    Yp = np.asarray(Yp, dtype=np.float64)
    if Xp.shape[1] != Yp.shape[1]:
        raise AlignError("spaces differ in dimension")
    xi, yi = _usable(Xp), _usable(Yp)
    if len(xi) == 0 or len(yi) == 0:
        raise AlignError("no usable rows to induce a dictionary from")
    fwd = Scorer(Xp[xi], Yp[yi], scorer, k=k, workers=workers)
    j, s = fwd.best()
    src = np.arange(len(xi))
    if mode == "mutual":
        back = Scorer(Yp[yi], Xp[xi], scorer, k=k, workers=workers)
        i_back, _ = back.best()
        keep = i_back[j] == src
        src, j, s = src[keep], j[keep], s[keep]
    return np.column_stack([xi[src], yi[j]]), s


def induce_dictionary(Xp: np.ndarray, Yp: np.ndarray, scorer: str = "csls",
                      mode: str = "forward", k: int = 10, workers: int = 1) -> SeedDictionary:
    """Pair source rows with their best target rows.

    ``forward`` keeps every source argmax; ``mutual`` only pairs that are
    each other's argmax.  Zero rows are ignored; ties go to the lowest
    target index.
    """
    pairs, _ = _induce(Xp, Yp, scorer, mode, k, workers)
    return SeedDictionary(pairs)


def refine(X: np.ndarray, Y: np.ndarray, seed: SeedDictionary, cfg: Optional[AlignmentConfig] = None) -> MappingMatrix:
    """Alternate Procrustes and CSLS dictionary induction.

    Stops after ``cfg.refinement_iterations`` rounds or once the mean CSLS
    score of the induced dictionary improves by less than
    ``cfg.convergence_tol``.  The best-scoring round's mapping is returned.
    """
    cfg = cfg or AlignmentConfig()
    dictionary = seed
    history: List[float] = []
    best: Optional[Tuple[float, np.ndarray, int]] = None
    for rnd in range(1, cfg.refinement_iterations + 1):
        W = procrustes_solve(X, Y, dictionary).W
        pairs, scores = _induce(np.asarray(X, float) @ W.T, Y, "csls", "forward",
                                cfg.csls_k, cfg.workers)
        score = float(scores.mean())
        history.append(score)
        logger.debug("refine round %d: mean CSLS %.6f", rnd, score)
        if best is None or score > best[0]:
            best = (score, W, rnd)
        if rnd > 1 and score - history[-2] < cfg.convergence_tol:
            break
        dictionary = SeedDictionary(pairs)
    return MappingMatrix(best[1], method="refine", iterations=len(history),
                         history=history, meta={"best_round": str(best[2])})


def prepare_spaces(X: np.ndarray, Y: np.ndarray, cfg: AlignmentConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Normalize (and optionally whiten) the usable rows of both spaces.

    Zero rows stay zero so they remain excluded downstream.
    """
    out = []
    for A in (X, Y):
        A = np.asarray(A, dtype=np.float64)
        rows = _usable(A)
        if not rows.any():
            raise AlignError("no nonzero rows to align")
        B = np.zeros_like(A)
        part = A[rows]
        if cfg.normalization:
            part = normalize(part, cfg.normalization)
        if cfg.whitening:
            part, _ = whiten(part, cfg.whitening_epsilon)
        B[rows] = part
        out.append(B)
    return out[0], out[1]


def similarity_profiles(A: np.ndarray, size: int, workers: int = 1) -> np.ndarray:
    """Each row's intra-space cosine similarities sorted descending, first ``size`` kept."""
    An = unit_rows(A)

    def block(s, e):
        S = An[s:e] @ An.T
        return -np.sort(-S, axis=1)[:, :size]

    P = np.vstack(_map_blocks(block, An.shape[0], workers))
    return normalize(P, ["unit", "center", "unit"])


def profile_dictionary(X: np.ndarray, Y: np.ndarray, profile_size: int = 4000,
                       workers: int = 1) -> SeedDictionary:
    """Unsupervised initial dictionary: pair rows whose sorted similarity
    profiles are closest in Euclidean distance."""
    xi, yi = _usable(X), _usable(Y)
    size = min(len(xi), len(yi), profile_size)
    Px = similarity_profiles(np.asarray(X, float)[xi], size, workers)
    Py = similarity_profiles(np.asarray(Y, float)[yi], size, workers)
    sq_y = (Py ** 2).sum(axis=1)

    def block(s, e):
        D = sq_y[None, :] - 2.0 * (Px[s:e] @ Py.T)
        return np.argmin(D, axis=1)

    j = np.concatenate(_map_blocks(block, len(xi), workers))
    return SeedDictionary(np.column_stack([xi, yi[j]]))


def self_learn(X: np.ndarray, Y: np.ndarray, cfg: Optional[AlignmentConfig] = None) -> MappingMatrix:
    """Fully unsupervised mapping: profile-based initial dictionary, then
    :func:`refine`, repeated over seeded restarts.

    ``X`` and ``Y`` are expected to be prepared already (see
    :func:`prepare_spaces`).  Restart 0 uses the full initial dictionary;
    later restarts keep a random ``cfg.restart_keep`` fraction of it.  The
    restart with the highest final mean CSLS score wins.
    """
    cfg = cfg or AlignmentConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    need = 2 * cfg.csls_k
    if len(_usable(X)) < need or len(_usable(Y)) < need:
        raise AlignError(f"self-learning needs at least {need} usable rows per space")
    init = profile_dictionary(X, Y, cfg.profile_size, cfg.workers)
    rng = np.random.default_rng(cfg.seed)
    best: Optional[MappingMatrix] = None
    best_score = -np.inf
    for restart in range(cfg.restarts):
        seed = init
        if restart > 0:
            keep = rng.random(len(init)) < cfg.restart_keep
            if not keep.any():
                continue
            seed = SeedDictionary(init.pairs[keep])
        result = refine(X, Y, seed, cfg)
        score = max(result.history)
        logger.debug("self-learn restart %d: best mean CSLS %.6f", restart, score)
        if score > best_score:
            best, best_score = result, score
    best.method = "self-learn"
    best.meta["score"] = repr(best_score)
    return best


def dictionary_score(X: np.ndarray, Y: np.ndarray, W: np.ndarray, k: int = 10) -> float:
    """Mean CSLS score of the forward dictionary induced under ``W``."""
    _, scores = _induce(np.asarray(X, float) @ W.T, Y, "csls", "forward", k)
    return float(scores.mean())


def self_learn_null(X: np.ndarray, Y: np.ndarray, cfg: Optional[AlignmentConfig] = None,
                    samples: int = 20, seed: int = 0) -> np.ndarray:
    """Permutation null for the self-learning score.

    Each sample shuffles every column of ``Y`` independently, which keeps
    the marginals but destroys any shared geometry, and records the final
    mean CSLS score that :func:`self_learn` reaches on it.
    """
    cfg = cfg or AlignmentConfig()
    rng = np.random.default_rng(seed)
    Y = np.asarray(Y, dtype=np.float64)
    out = np.empty(samples)
    for s in range(samples):
        Yp = np.column_stack([rng.permutation(col) for col in Y.T])
        out[s] = max(self_learn(X, Yp, cfg).history)
    return out


def precision_at_1(mapped: np.ndarray, Y: np.ndarray, truth: Dict[int, int] | np.ndarray,
                   scorer: str = "csls", k: int = 10, rows: Optional[Sequence[int]] = None) -> float:
    """Fraction of source rows whose top target is the true one.

    ``truth[i]`` is the correct target row for source row ``i``; evaluation is
    limited to ``rows`` when given.
    """
    truth = np.asarray(truth)
    rows = np.arange(len(truth)) if rows is None else np.asarray(rows)
    sc = Scorer(mapped, Y, scorer, k=k)
    j, _ = sc.best(rows)
    return float(np.mean(j == truth[rows]))


def dictionary_from_codes(pairs: Sequence[Tuple[str, str]], source: CategoryVectorSet,
                          target: CategoryVectorSet) -> SeedDictionary:
    """Resolve ``(source_code, target_code)`` pairs to row indices.

    Pairs whose code is unknown or whose vector is masked out are skipped.
    """
    out = []
    for s, t in pairs:
        try:
            i, j = source.index(s), target.index(t)
        except KeyError:
            logger.warning("seed pair %s -> %s: unknown code, skipped", s, t)
            continue
        if source.mask[i] and target.mask[j]:
            out.append((i, j))
    if not out:
        raise AlignError("no seed pair resolved against the category vectors")
    return SeedDictionary(np.array(out))


def load_seed_pairs(path: Union[str, Path]) -> List[Tuple[str, str]]:
    pairs = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if len(cells) < 2:
                raise AlignError(f"{path}:{lineno}: expected source_code<TAB>target_code")
            pairs.append((cells[0].strip(), cells[1].strip()))
    return pairs


def save_mapping(mapping: MappingMatrix, path: Union[str, Path], extra: Optional[Dict[str, str]] = None) -> None:
    meta = {"method": mapping.method, "iterations": str(mapping.iterations),
            "scores": ",".join(repr(float(s)) for s in mapping.history)}
    meta.update(mapping.meta)
    meta.update(extra or {})
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}: {meta[key]}\n")
        for row in mapping.W:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def load_mapping(path: Union[str, Path]) -> MappingMatrix:
    meta: Dict[str, str] = {}
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                rows.append([float(v) for v in line.split("\t")])
    W = np.array(rows, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise AlignError(f"{path}: mapping is not a square matrix")
    history = [float(s) for s in meta.pop("scores", "").split(",") if s]
    method = meta.pop("method", "procrustes")
    iterations = int(meta.pop("iterations", "1"))
    return MappingMatrix(W, method=method, iterations=iterations, history=history, meta=meta)
