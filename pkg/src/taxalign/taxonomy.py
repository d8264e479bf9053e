"""Hierarchical classification schemes: code parsing, loading and indexing.

Two code families are supported out of the box:

* dotted codes such as ``01.11.11.112`` (OKPD2-like, up to four levels)
* class-item codes such as ``620-80`` (NIGP-like, one or two levels)
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union


class TaxonomyError(ValueError):
    """Raised for malformed codes or taxonomy files."""


@dataclass(frozen=True)
class Scheme:
    name: str
    separator: str
    max_segments: Optional[int] = None
    min_segments: int = 1


SCHEMES: Dict[str, Scheme] = {
    "dotted": Scheme("dotted", "."),
    "class-item": Scheme("class-item", "-", max_segments=2),
    "okpd2": Scheme("okpd2", ".", max_segments=4),
    "nigp5": Scheme("nigp5", "-", max_segments=2),
}


def get_scheme(scheme: Union[str, Scheme]) -> Scheme:
    if isinstance(scheme, Scheme):
        return scheme
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise TaxonomyError(
            f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}"
        ) from None


@dataclass(frozen=True)
class CategoryCode:
    scheme: str
    segments: Tuple[str, ...]
    raw: str

    @property
    def level(self) -> int:
        return len(self.segments)

    @property
    def sort_key(self) -> Tuple[Tuple[int, str], ...]:
        return tuple((int(s), s) for s in self.segments)

    def prefix(self, level: int) -> Tuple[str, ...]:
        return self.segments[:level]

    def __str__(self) -> str:
        return self.raw


def parse_code(raw: str, scheme: Union[str, Scheme] = "dotted") -> CategoryCode:
    """Split a category code into its numeric segments.

    >>> parse_code("01.11.11.112").segments
    ('01', '11', '11', '112')
    >>> parse_code("620-80", "class-item").level
    2
    """
    sch = get_scheme(scheme)
    text = raw.strip() if raw is not None else ""
    if not text:
        raise TaxonomyError("empty code")
    segments = tuple(text.split(sch.separator))
    for pos, seg in enumerate(segments, start=1):
        if not seg:
            raise TaxonomyError(f"code {text!r}: empty segment at position {pos}")
        if not (seg.isascii() and seg.isdigit()):
            raise TaxonomyError(
                f"code {text!r}: non-numeric segment {seg!r} at position {pos}"
            )
    if len(segments) < sch.min_segments or (
        sch.max_segments is not None and len(segments) > sch.max_segments
    ):
        limit = sch.max_segments if sch.max_segments is not None else "any"
        raise TaxonomyError(
            f"code {text!r}: {len(segments)} segments, scheme {sch.name!r} allows "
            f"{sch.min_segments}..{limit} (position {len(segments)})"
        )
    return CategoryCode(sch.name, segments, sch.separator.join(segments))


def is_ancestor(a: CategoryCode, b: CategoryCode) -> bool:
    """True iff ``a`` is a strict prefix of ``b``."""
    if a.scheme != b.scheme:
        raise TaxonomyError(f"scheme mismatch: {a.scheme!r} vs {b.scheme!r}")
    return a.level < b.level and b.segments[: a.level] == a.segments


@dataclass(frozen=True)
class Category:
    code: CategoryCode
    description: str
    parent: Optional[CategoryCode] = None

    @property
    def level(self) -> int:
        return self.code.level


@dataclass
class Taxonomy:
    scheme: str
    categories: Dict[str, Category]
    children: Dict[str, List[str]] = field(default_factory=dict)
    max_depth: int = 0

    def __len__(self) -> int:
        return len(self.categories)

    def __contains__(self, code: str) -> bool:
        return code in self.categories

    def __getitem__(self, code: str) -> Category:
        return self.categories[code]

    def ordered(self) -> List[Category]:
        """All categories in code order."""
        return sorted(self.categories.values(), key=lambda c: c.code.sort_key)

    def codes(self) -> List[str]:
        return [c.code.raw for c in self.ordered()]

    def level_counts(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for cat in self.categories.values():
            counts[cat.level] = counts.get(cat.level, 0) + 1
        return dict(sorted(counts.items()))

    def ancestors(self, code: str) -> List[str]:
        """Parent chain of ``code``, nearest first."""
        out = []
        parent = self.categories[code].parent
        while parent is not None:
            out.append(parent.raw)
            parent = self.categories[parent.raw].parent
        return out


def build_taxonomy(
    scheme: Union[str, Scheme],
    entries: Iterable[Tuple[str, str]],
    strict: bool = False,
) -> Taxonomy:
    """Index ``(code, description)`` pairs into a :class:`Taxonomy`.

    Parents are inferred from code prefixes.  A category whose direct parent
    is absent is attached to its nearest existing ancestor (or becomes a
    root); with ``strict=True`` a missing direct parent is an error instead.
    """
    sch = get_scheme(scheme)
    parsed: Dict[str, Tuple[CategoryCode, str]] = {}
    by_segments: Dict[Tuple[str, ...], CategoryCode] = {}
    for raw, description in entries:
        code = raw if isinstance(raw, CategoryCode) else parse_code(raw, sch)
        if code.raw in parsed:
            raise TaxonomyError(f"duplicate code {code.raw!r}")
        parsed[code.raw] = (code, description)
        by_segments[code.segments] = code

    categories: Dict[str, Category] = {}
    children: Dict[str, List[str]] = {}
    for raw, (code, description) in parsed.items():
        parent = None
        for lvl in range(code.level - 1, 0, -1):
            parent = by_segments.get(code.segments[:lvl])
            if parent is not None:
                break
            if strict:
                missing = sch.separator.join(code.segments[:lvl])
                raise TaxonomyError(f"code {raw!r}: missing ancestor {missing!r}")
        categories[raw] = Category(code, description, parent)

    for cat in sorted(categories.values(), key=lambda c: c.code.sort_key):
        children.setdefault(cat.code.raw, [])
        if cat.parent is not None:
            children.setdefault(cat.parent.raw, []).append(cat.code.raw)
    max_depth = max((c.level for c in categories.values()), default=0)
    return Taxonomy(sch.name, categories, children, max_depth)


def read_taxonomy_rows(
    lines: Iterable[str], delimiter: str = "\t", header: Optional[bool] = None
) -> List[Tuple[int, str, str]]:
    """Parse delimited ``code<delim>description`` lines.

    Returns ``(line_number, code, description)`` triples.  Blank lines and
    lines starting with ``#`` are skipped.  With ``header=None`` the first
    data row is treated as a header when its code cell is not numeric.
    """
    rows = []
    first = True
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = next(csv.reader(io.StringIO(line), delimiter=delimiter))
        if first:
            first = False
            looks_like_header = not any(ch.isdigit() for ch in cells[0])
            if header or (header is None and looks_like_header):
                continue
        if len(cells) < 2:
            raise TaxonomyError(
                f"line {lineno}: expected code{delimiter!r}description, got {line!r}"
            )
        code = cells[0].strip()
        description = delimiter.join(cells[1:])
        rows.append((lineno, code, description))
    return rows


def load_taxonomy(
    path: Union[str, Path],
    scheme: Union[str, Scheme] = "dotted",
    delimiter: str = "\t",
    header: Optional[bool] = None,
    strict: bool = False,
) -> Taxonomy:
    """Load a taxonomy from a UTF-8 delimited file."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        rows = read_taxonomy_rows(fh, delimiter=delimiter, header=header)
    entries = []
    seen: Dict[str, int] = {}
    for lineno, raw, description in rows:
        try:
            code = parse_code(raw, scheme)
        except TaxonomyError as exc:
            raise TaxonomyError(f"{path}:{lineno}: {exc}") from None
        if code.raw in seen:
            raise TaxonomyError(
                f"{path}:{lineno}: duplicate code {code.raw!r} "
                f"(first seen on line {seen[code.raw]})"
            )
        seen[code.raw] = lineno
        entries.append((code, description))
    try:
        return build_taxonomy(scheme, entries, strict=strict)
    except TaxonomyError as exc:
        raise TaxonomyError(f"{path}: {exc}") from None


def dump_taxonomy(t: Taxonomy, path: Union[str, Path], delimiter: str = "\t") -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for cat in t.ordered():
            fh.write(f"{cat.code.raw}{delimiter}{cat.description}\n")


def level_slice(t: Taxonomy, level: int) -> List[Category]:
    """Categories with exactly ``level`` segments, in code order."""
    if not 1 <= level <= t.max_depth:
        raise TaxonomyError(f"level {level} outside 1..{t.max_depth}")
    return [c for c in t.ordered() if c.level == level]


def load_translations(path: Union[str, Path], delimiter: str = "\t") -> Dict[str, str]:
    """Read ``code<TAB>translated_description`` overrides."""
    with Path(path).open(encoding="utf-8") as fh:
        rows = read_taxonomy_rows(fh, delimiter=delimiter)
    out: Dict[str, str] = {}
    for lineno, code, text in rows:
        if code in out:
            raise TaxonomyError(f"{path}:{lineno}: duplicate translation for {code!r}")
        out[code] = text
    return out
