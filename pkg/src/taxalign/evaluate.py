"""Annotation-based evaluation: top-N selection, early screening, accuracy
and Fisher's exact test for comparing two methods."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import accumulate
from bisect import bisect_right
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .match import MatchRecord, sort_records

LABELS = ("correct", "partial", "wrong")
_LABEL_ALIASES = {
    "true": "correct", "correct": "correct", "t": "correct",
    "partial": "partial", "partially true": "partial", "partially_true": "partial",
    "false": "wrong", "wrong": "wrong", "f": "wrong",
}


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    source: str
    target: str
    label: str
    method: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise EvalError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def is_correct(self) -> bool:
        return self.label == "correct"


def parse_label(text: str) -> str:
    try:
        return _LABEL_ALIASES[text.strip().lower()]
    except KeyError:
        raise EvalError(f"unknown annotation label {text!r}") from None


def load_annotations(path: Union[str, Path], method: str = "") -> List[AnnotationRecord]:
    """Read ``source<TAB>target<TAB>label`` lines in rank order."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if lineno == 1 and cells[-1].strip().lower() == "label":
                continue
            if len(cells) < 3:
                raise EvalError(f"{path}:{lineno}: expected source<TAB>target<TAB>label")
            try:
                label = parse_label(cells[2])
            except EvalError as exc:
                raise EvalError(f"{path}:{lineno}: {exc}") from None
            out.append(AnnotationRecord(cells[0], cells[1], label, method))
    return out


@dataclass(frozen=True)
class Selection:
    records: List[MatchRecord]
    requested: int
    short: bool


def select_topn(matches: Sequence[MatchRecord], fraction: Optional[float] = None,
                count: Optional[int] = None) -> Selection:
    """Top ``ceil(fraction * n)`` or top ``count`` matches by score.

    ``short`` is set when fewer records exist than were asked for.
    """
    if not matches:
        raise EvalError("no matches to select from")
    if (fraction is None) == (count is None):
        raise EvalError("give exactly one of fraction or count")
    n = len(matches)
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise EvalError(f"fraction must be in (0, 1], got {fraction}")
        want = math.ceil(Fraction(str(fraction)) * n)
    else:
        if count < 1:
            raise EvalError(f"count must be positive, got {count}")
        want = count
    ranked = sort_records(matches)
    return Selection(ranked[:want], want, want > n)


@dataclass(frozen=True)
class ScreenResult:
    passed: bool
    window: int
    correct: int

    @property
    def dropped(self) -> bool:
        return not self.passed

    @property
    def accuracy(self) -> float:
        return self.correct / self.window


def screen_first_k(annotations: Sequence[AnnotationRecord], k: int = 50,
                   threshold: float = 0.01) -> ScreenResult:
    """Drop a method whose accuracy over its first ``k`` ranked matches is below ``threshold``."""
    if not annotations:
        raise EvalError("no annotations to screen")
    window = min(k, len(annotations))
    correct = sum(a.is_correct for a in annotations[:window])
    return ScreenResult(correct / window >= threshold, window, correct)


@dataclass(frozen=True)
class EvalReport:
    correct: int
    partial: int
    wrong: int
    method: str = ""

    @property
    def n_annotated(self) -> int:
        return self.correct + self.partial + self.wrong

    @property
    def accuracy(self) -> float:
        # partial matches count as wrong
        return self.correct / self.n_annotated

    @property
    def percent(self) -> float:
        return 100.0 * self.accuracy

    def text(self) -> str:
        name = self.method or "method"
        return (f"{name}: correct={self.correct} partial={self.partial} "
                f"wrong={self.wrong} n={self.n_annotated} accuracy={self.percent:.1f}%")


def accuracy(annotations: Iterable[AnnotationRecord]) -> EvalReport:
    counts = {label: 0 for label in LABELS}
    method = ""
    for a in annotations:
        counts[a.label] += 1
        method = method or a.method
    if not sum(counts.values()):
        raise EvalError("no annotations")
    return EvalReport(counts["correct"], counts["partial"], counts["wrong"], method)


@dataclass(frozen=True)
class ContingencyTable:
    """``[[a, b], [c, d]]``: rows are methods, columns correct / not correct."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise EvalError("contingency counts must be non-negative")
        if self.a + self.b + self.c + self.d == 0:
            raise EvalError("empty contingency table")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "ContingencyTable":
        (a, b), (c, d) = rows
        return cls(int(a), int(b), int(c), int(d))

    @classmethod
    def from_reports(cls, first: EvalReport, second: EvalReport) -> "ContingencyTable":
        return cls(first.correct, first.n_annotated - first.correct,
                   second.correct, second.n_annotated - second.correct)

    @property
    def margins(self) -> Tuple[int, int, int, int]:
        """Row sums then column sums."""
        return (self.a + self.b, self.c + self.d, self.a + self.c, self.b + self.d)


@dataclass(frozen=True)
class FisherResult:
    pvalue: float
    degenerate: bool = False
    sidedness: str = "two-sided"


_REL_SLACK = 1e-12


@lru_cache(maxsize=1 << 16)
def _log_factorial(n: int) -> float:
    return math.lgamma(n + 1)


@lru_cache(maxsize=4096)
def _null_distribution(r1: int, r2: int, c1: int) -> Tuple[List[float], List[float], List[float], int]:
    """Hypergeometric probabilities of every table with the given margins.

    Returns the probabilities indexed by top-left cell offset, the same
    values sorted ascending, their running sums, and the smallest top-left
    value.
    """
    n = r1 + r2
    lo, hi = max(0, c1 - r2), min(r1, c1)
    const = (_log_factorial(r1) + _log_factorial(r2) + _log_factorial(c1)
             + _log_factorial(n - c1) - _log_factorial(n))
    probs = []
    for a in range(lo, hi + 1):
        logp = const - (_log_factorial(a) + _log_factorial(r1 - a)
                        + _log_factorial(c1 - a) + _log_factorial(r2 - c1 + a))
        probs.append(math.exp(logp))
    ordered = sorted(probs)
    return probs, ordered, list(accumulate(ordered)), lo


def fisher_exact(t: ContingencyTable) -> FisherResult:
    """Two-sided Fisher exact test.

    The p-value sums the probabilities of all tables sharing the observed
    margins that are no more likely than the observed one (relative slack
    1e-12).  A zero margin gives ``p = 1`` flagged as degenerate.
    """
    r1, r2, c1, c2 = t.margins
    if 0 in (r1, r2, c1, c2):
        return FisherResult(1.0, degenerate=True)
    probs, ordered, cum, lo = _null_distribution(r1, r2, c1)
    observed = probs[t.a - lo]
    idx = bisect_right(ordered, observed * (1 + _REL_SLACK))
    return FisherResult(min(1.0, cum[idx - 1]))


def compare_methods(first: EvalReport, second: EvalReport) -> FisherResult:
    """Fisher test on correct vs not-correct counts of two annotated methods."""
    return fisher_exact(ContingencyTable.from_reports(first, second))


def write_report(reports: Sequence[EvalReport], path_txt: Union[str, Path],
                 path_tsv: Union[str, Path], header: Sequence[str] = (),
                 fisher: Optional[Tuple[str, str, FisherResult]] = None) -> None:
    """Human-readable summary plus a delimited one-row-per-method table."""
    with Path(path_txt).open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for r in reports:
            fh.write(r.text() + "\n")
        if fisher is not None:
            a, b, res = fisher
            fh.write(f"fisher {a} vs {b}: p={res.pvalue:.6g} ({res.sidedness}"
                     f"{', degenerate' if res.degenerate else ''})\n")
    with Path(path_tsv).open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("method\tcorrect\tpartial\twrong\tn\taccuracy\n")
        for r in reports:
            fh.write(f"{r.method}\t{r.correct}\t{r.partial}\t{r.wrong}\t"
                     f"{r.n_annotated}\t{r.accuracy:.6f}\n")
