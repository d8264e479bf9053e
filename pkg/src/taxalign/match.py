"""Category-to-category matching: vector retrieval, token-bag overlap and
hierarchy-constrained composition of either."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .align import MappingMatrix
from .embeddings import CategoryVectorSet, tokenize
from .retrieval import (  # noqa: F401  (re-exported)
    Neighborhood,
    Neighborhoods,
    RetrievalError,
    Scorer,
    build_neighborhoods,
    csls_score,
)
from .taxonomy import Taxonomy, parse_code

METHODS = ("cosine", "csls", "string", "hier-string", "hier-vector", "hier-csls")


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class MatchRecord:
    source: str
    target: str
    score: float
    method: str
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class TokenBag:
    code: str
    tokens: FrozenSet[str]

    @classmethod
    def from_text(cls, code: str, text: str) -> "TokenBag":
        return cls(code, frozenset(tokenize(text)))


def string_sim(A: TokenBag, B: TokenBag) -> float:
    """Overlap normalized by each bag's size: ``|A&B|/2|A| + |A&B|/2|B|``.

    Zero when either bag is empty.
    """
    a, b = A.tokens, B.tokens
    if not a or not b:
        return 0.0
    inter = len(a & b)
    return inter / (2 * len(a)) + inter / (2 * len(b))


def bags_for(t: Taxonomy, descriptions: Optional[Mapping[str, str]] = None) -> List[TokenBag]:
    """Token bags in code order, with optional description overrides."""
    out = []
    for cat in t.ordered():
        text = cat.description
        if descriptions is not None:
            text = descriptions.get(cat.code.raw, text)
        out.append(TokenBag.from_text(cat.code.raw, text))
    return out


def _code_key(code: str) -> Tuple:
    """Sort key for codes of any scheme: numeric segments, then raw text."""
    parts = code.replace("-", ".").split(".")
    try:
        return (0, tuple(int(p) for p in parts), code)
    except ValueError:
        return (1, (), code)


def sort_records(records: Iterable[MatchRecord]) -> List[MatchRecord]:
    """Descending score; ties by target code, then source code."""
    return sorted(records, key=lambda r: (-r.score, _code_key(r.target), _code_key(r.source)))


class StringMatcher:
    """Token-bag overlap scores via sparse incidence matrices."""

    method = "string"

    def __init__(self, src: Sequence[TokenBag], tgt: Sequence[TokenBag]):
        if not src:
            raise MatchError("no source categories")
        if not tgt:
            raise MatchError("no target categories")
        # targets sorted by code so argmax ties resolve to the lowest code
        self.src = list(src)
        self.tgt = sorted(tgt, key=lambda b: _code_key(b.code))
        self.src_codes = [b.code for b in self.src]
        self.tgt_codes = [b.code for b in self.tgt]
        vocab: Dict[str, int] = {}
        for bag in list(self.src) + self.tgt:
            for tok in sorted(bag.tokens):
                vocab.setdefault(tok, len(vocab))
        self.A = self._incidence(self.src, vocab)
        self.B = self._incidence(self.tgt, vocab)
        self.na = np.array([len(b.tokens) for b in self.src], dtype=np.float64)
        self.nb = np.array([len(b.tokens) for b in self.tgt], dtype=np.float64)

    @staticmethod
    def _incidence(bags, vocab):
        rows, cols = [], []
        for i, bag in enumerate(bags):
            for tok in bag.tokens:
                rows.append(i)
                cols.append(vocab[tok])
        data = np.ones(len(rows), dtype=np.float64)
        return sparse.csr_matrix((data, (rows, cols)), shape=(len(bags), max(len(vocab), 1)))

    def scores(self, rows: Sequence[int], cols: Optional[Sequence[int]] = None) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.arange(len(self.tgt)) if cols is None else np.asarray(cols, dtype=np.int64)
        inter = (self.A[rows] @ self.B[cols].T).toarray()
        na = self.na[rows][:, None]
        nb = self.nb[cols][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            S = inter / (2 * na) + inter / (2 * nb)
        S[(na == 0).repeat(len(cols), axis=1) | (nb == 0).repeat(len(rows), axis=0)] = 0.0
        return S

    def flags_for(self, row: int, score: float) -> Tuple[str, ...]:
        if self.na[row] == 0:
            return ("empty-bag", "low-confidence")
        if score == 0.0:
            return ("no-overlap", "low-confidence")
        return ()


class VectorMatcher:
    """Cosine or CSLS scores between mapped source and target category vectors."""

    def __init__(self, Xs: CategoryVectorSet, Yt: CategoryVectorSet,
                 W: Optional[MappingMatrix] = None, scorer: str = "cosine",
                 k: int = 10, workers: int = 1):
        if Xs.d != Yt.d:
            raise MatchError(f"dimension mismatch: {Xs.d} vs {Yt.d}")
        src_rows = np.flatnonzero(Xs.mask)
        order = sorted(np.flatnonzero(Yt.mask), key=lambda j: _code_key(Yt.codes[j]))
        if len(src_rows) == 0:
            raise MatchError("no usable source vectors")
        if len(order) == 0:
            raise MatchError("no usable target vectors")
        X = Xs.matrix[src_rows]
        if W is not None:
            X = W.apply(X)
        self.method = scorer
        self.src_codes = [Xs.codes[i] for i in src_rows]
        self.tgt_codes = [Yt.codes[j] for j in order]
        self.skipped = Xs.uncovered
        self.scorer = Scorer(X, Yt.matrix[order], scorer,
                             k=min(k, len(src_rows), len(order)), workers=workers)

    def scores(self, rows: Sequence[int], cols: Optional[Sequence[int]] = None) -> np.ndarray:
        return self.scorer.scores(np.asarray(rows, dtype=np.int64),
                                  None if cols is None else np.asarray(cols, dtype=np.int64))

    def flags_for(self, row: int, score: float) -> Tuple[str, ...]:
        return ()


def _flat_match(matcher, method: str) -> List[MatchRecord]:
    n = len(matcher.src_codes)
    out = []
    for start in range(0, n, 512):
        rows = np.arange(start, min(start + 512, n))
        S = matcher.scores(rows)
        best = np.argmax(S, axis=1)
        for r, j in zip(rows, best):
            score = float(S[r - start, j])
            out.append(MatchRecord(matcher.src_codes[r], matcher.tgt_codes[j], score,
                                   method, matcher.flags_for(r, score)))
    return sort_records(out)


def match_vectors(Xs: CategoryVectorSet, Yt: CategoryVectorSet,
                  W: Optional[MappingMatrix] = None, scorer: str = "cosine",
                  k: int = 10, workers: int = 1) -> Tuple[List[MatchRecord], List[str]]:
    """Map each covered source category to its best target under ``scorer``.

    Returns the sorted records and the codes skipped for lack of coverage.
    """
    m = VectorMatcher(Xs, Yt, W, scorer, k, workers)
    return _flat_match(m, scorer), m.skipped


def match_strings(src: Sequence[TokenBag], tgt: Sequence[TokenBag]) -> List[MatchRecord]:
    """Best target bag for every source bag; ties go to the lowest target code."""
    return _flat_match(StringMatcher(src, tgt), "string")


def _levels(codes: Sequence[str], scheme: str) -> List[Tuple[str, ...]]:
    return [parse_code(c, scheme).segments for c in codes]


def hierarchical_match(src_tax: Taxonomy, tgt_tax: Taxonomy, base, method: str) -> List[MatchRecord]:
    """Top-down matching constrained by the target hierarchy.

    Level-1 sources are matched against all level-1 targets.  A source at
    level ``l`` is matched among targets at level ``min(l, target depth)``
    that descend from the target chosen for its nearest matched ancestor at
    a shallower target level.  An empty candidate set falls back to the
    whole target level and the record is flagged ``fallback``.

    ``base`` is a :class:`StringMatcher` or :class:`VectorMatcher` built over
    the two taxonomies; categories it does not know (e.g. uncovered vectors)
    are left unmatched.
    """
    tgt_segs = dict(zip(base.tgt_codes, _levels(base.tgt_codes, tgt_tax.scheme)))
    by_level: Dict[int, List[int]] = {}
    by_prefix: Dict[Tuple[int, Tuple[str, ...]], List[int]] = {}
    for j, code in enumerate(base.tgt_codes):
        segs = tgt_segs[code]
        by_level.setdefault(len(segs), []).append(j)
        for p in range(1, len(segs)):
            by_prefix.setdefault((len(segs), segs[:p]), []).append(j)
    depth = max(by_level) if by_level else 0
    row_of = {c: i for i, c in enumerate(base.src_codes)}
    chosen: Dict[str, str] = {}
    out: List[MatchRecord] = []

    for cat in src_tax.ordered():  # parents come before children in code order
        code = cat.code.raw
        if code not in row_of:
            continue
        level = min(cat.level, depth)
        anchor = None
        for anc in src_tax.ancestors(code):
            t = chosen.get(anc)
            if t is not None and len(tgt_segs[t]) < level:
                anchor = t
                break
        flags: Tuple[str, ...] = ()
        if anchor is None:
            cands = by_level.get(level, [])
        else:
            cands = by_prefix.get((level, tgt_segs[anchor]), [])
            if not cands:
                cands = by_level.get(level, [])
                flags = ("fallback",)
        if not cands:
            cands = list(range(len(base.tgt_codes)))
            flags = ("fallback",)
        S = base.scores([row_of[code]], cands)[0]
        j = int(np.argmax(S))
        score = float(S[j])
        target = base.tgt_codes[cands[j]]
        chosen[code] = target
        out.append(MatchRecord(code, target, score, method,
                               flags + base.flags_for(row_of[code], score)))
    return sort_records(out)


def write_matches(records: Iterable[MatchRecord], path: Union[str, Path],
                  header: Optional[Sequence[str]] = None) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        fh.write("source_code\ttarget_code\tscore\tmethod\tflags\n")
        for r in records:
            fh.write(f"{r.source}\t{r.target}\t{r.score:.12g}\t{r.method}\t{','.join(r.flags)}\n")


def read_matches(path: Union[str, Path]) -> List[MatchRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line or line.startswith("#") or line.startswith("source_code\t"):
                continue
            cells = line.split("\t")
            if len(cells) < 4:
                raise MatchError(f"{path}: malformed match line {line!r}")
            flags = tuple(f for f in (cells[4] if len(cells) > 4 else "").split(",") if f)
            out.append(MatchRecord(cells[0], cells[1], float(cells[2]), cells[3], flags))
    return out
