"""Word vectors, category vectors and the linear-algebra transforms on them."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+")


class EmbeddingError(ValueError):
    pass


@dataclass
class VectorTable:
    """Token-indexed dense vectors; ``matrix[i]`` belongs to ``tokens[i]``."""

    tokens: List[str]
    matrix: np.ndarray
    duplicates: int = 0
    _index: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.tokens):
            raise EmbeddingError(
                f"matrix shape {self.matrix.shape} does not fit {len(self.tokens)} tokens"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingError("vector table contains non-finite values")
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise EmbeddingError("duplicate tokens in vector table")

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def get(self, token: str) -> Optional[np.ndarray]:
        i = self._index.get(token)
        return None if i is None else self.matrix[i]


def load_vectors(path: Union[str, Path]) -> VectorTable:
    """Read vectors in word2vec text format (``count dim`` header line).

    Repeated tokens keep their first occurrence; the number dropped is
    recorded in ``VectorTable.duplicates``.
    """
    path = Path(path)
    tokens: List[str] = []
    rows: List[List[float]] = []
    seen = set()
    duplicates = 0
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}:1: expected 'count dim' header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError(f"{path}:1: non-integer header {header!r}") from None
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\r\n").split(" ")
            parts = [p for p in parts if p != ""]
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: {len(values)} components, header says {dim}"
                )
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric component") from None
            if token in seen:
                duplicates += 1
                continue
            seen.add(token)
            tokens.append(token)
            rows.append(vec)
    if len(tokens) + duplicates != count:
        logger.warning("%s: header announces %d rows, read %d", path, count,
                       len(tokens) + duplicates)
    if duplicates:
        logger.warning("%s: %d duplicate tokens dropped", path, duplicates)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return VectorTable(tokens, matrix, duplicates=duplicates)


def save_vectors(table_or_tokens, path: Union[str, Path], matrix=None) -> None:
    """Write vectors in word2vec text format with round-trip float repr."""
    if matrix is None:
        tokens, matrix = table_or_tokens.tokens, table_or_tokens.matrix
    else:
        tokens = table_or_tokens
    matrix = np.asarray(matrix, dtype=np.float64)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


def tokenize(text: str) -> List[str]:
    """Lowercase and split on anything that is not a Unicode letter or digit."""
    return _TOKEN_RE.findall(text.lower()) if text else []


def average_tokens(tokens: Iterable[str], table: VectorTable) -> Tuple[np.ndarray, bool]:
    """Mean of the in-vocabulary token vectors; OOV tokens are skipped."""
    idx = [table.index(t) for t in tokens if t in table]
    if not idx:
        return np.zeros(table.d), False
    # sorted indices make the mean independent of token order
    return table.matrix[sorted(idx)].mean(axis=0), True


@dataclass
class CategoryVectorSet:
    scheme: str
    codes: List[str]
    matrix: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.matrix.shape[0] != len(self.codes) or self.mask.shape != (len(self.codes),):
            raise EmbeddingError("codes, matrix and mask disagree in length")
        self._index = {c: i for i, c in enumerate(self.codes)}

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def index(self, code: str) -> int:
        return self._index[code]

    @property
    def uncovered(self) -> List[str]:
        return [c for c, ok in zip(self.codes, self.mask) if not ok]

    @classmethod
    def from_table(cls, scheme: str, table: VectorTable) -> "CategoryVectorSet":
        mask = np.any(table.matrix != 0, axis=1)
        return cls(scheme, list(table.tokens), table.matrix.copy(), mask)


def build_category_vectors(
    t: Taxonomy,
    table: VectorTable,
    descriptions: Optional[Mapping[str, str]] = None,
) -> CategoryVectorSet:
    """Average word vectors over each category description, in code order.

    ``descriptions`` overrides individual descriptions (e.g. translations).
    Categories with no in-vocabulary token get a zero row and ``mask=False``.
    """
    cats = t.ordered()
    matrix = np.zeros((len(cats), table.d))
    mask = np.zeros(len(cats), dtype=bool)
    for i, cat in enumerate(cats):
        text = cat.description
        if descriptions is not None:
            text = descriptions.get(cat.code.raw, text)
        matrix[i], mask[i] = average_tokens(tokenize(text), table)
    if not mask.all():
        logger.info("%d of %d categories have no vocabulary coverage",
                    int((~mask).sum()), len(cats))
    return CategoryVectorSet(t.scheme, [c.code.raw for c in cats], matrix, mask)


def unit_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=X.copy(), where=norms > 0)


def normalize(X: np.ndarray, steps: Sequence[str]) -> np.ndarray:
    """Apply ``unit`` / ``center`` steps in order.

    ``unit`` rescales nonzero rows to length one; ``center`` subtracts the
    column mean.
    """
    if not steps:
        raise EmbeddingError("normalize needs at least one step")
    out = np.array(X, dtype=np.float64)
    for step in steps:
        if step == "unit":
            out = unit_rows(out)
        elif step == "center":
            out = out - out.mean(axis=0)
        else:
            raise EmbeddingError(f"unknown normalization step {step!r}")
    return out


def whiten(X: np.ndarray, epsilon: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Sphering transform ``(X^T X + eps I)^(-1/2)`` and the whitened matrix.

    Uses the symmetric eigendecomposition of the d x d Gram matrix.
    """
    if epsilon < 0:
        raise EmbeddingError("epsilon must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    gram = X.T @ X + epsilon * np.eye(d)
    vals, vecs = np.linalg.eigh(gram)
    tol = max(vals.max(initial=0.0), 1.0) * d * np.finfo(float).eps * 10
    if d and vals.min() <= tol:
        raise EmbeddingError(
            "X^T X is singular (rank-deficient input); use epsilon > 0"
        )
    transform = (vecs / np.sqrt(vals)) @ vecs.T
    transform = (transform + transform.T) / 2
    return X @ transform, transform


@dataclass
class PCA:
    mean: np.ndarray
    components: np.ndarray  # k x d, rows are principal axes
    explained_variance: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, coords: np.ndarray) -> np.ndarray:
        return coords @ self.components + self.mean


def pca_fit(X: np.ndarray, k: int) -> PCA:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise EmbeddingError("PCA needs at least two rows")
    if not 1 <= k <= d:
        raise EmbeddingError(f"k={k} outside 1..{d}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    if vt.shape[0] < k:
        # n < d: pad with an orthonormal completion carrying zero variance
        q, _ = np.linalg.qr(np.vstack([vt, np.eye(d)]).T)
        vt = q.T[:k]
        s = np.concatenate([s, np.zeros(k - len(s))])
    comps = vt[:k].copy()
    # sign convention: largest-magnitude entry of each axis is positive
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    return PCA(mean, comps, s[:k] ** 2 / (n - 1))


def pca_project(X: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Project centered ``X`` on its top-``k`` principal axes.

    Returns the ``n x k`` coordinates and the per-axis explained variance.
    """
    model = pca_fit(X, k)
    return model.transform(X), model.explained_variance
