"""Batch pipeline: taxonomies -> category vectors -> alignment -> matching
-> evaluation, driven by a YAML config."""
from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import yaml

from . import __version__
from .align import (
    AlignmentConfig,
    MappingMatrix,
    dictionary_from_codes,
    load_mapping,
    load_seed_pairs,
    prepare_spaces,
    procrustes_solve,
    refine,
    save_mapping,
    self_learn,
    vecmap_mapping,
)
from .embeddings import (
    CategoryVectorSet,
    build_category_vectors,
    load_vectors,
    pca_project,
)
from .evaluate import accuracy, load_annotations, screen_first_k, select_topn, write_report
from .match import (
    METHODS,
    StringMatcher,
    VectorMatcher,
    bags_for,
    hierarchical_match,
    match_strings,
    match_vectors,
    write_matches,
)
from .taxonomy import Taxonomy, load_taxonomy, load_translations

logger = logging.getLogger(__name__)

ALIGNMENTS = ("none", "procrustes", "vecmap", "refine", "self-learn")


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration (exit code 1)."""


@dataclass
class SideConfig:
    taxonomy: Optional[str] = None
    scheme: str = "dotted"
    vectors: Optional[str] = None
    category_vectors: Optional[str] = None
    translations: Optional[str] = None
    delimiter: str = "\t"
    strict: bool = False


@dataclass
class PipelineConfig:
    source: SideConfig = field(default_factory=SideConfig)
    target: SideConfig = field(default_factory=SideConfig)
    method: str = "csls"
    alignment: str = "none"
    seed_dictionary: Optional[str] = None
    mapping: Optional[str] = None
    annotations: Optional[str] = None
    select_fraction: Optional[float] = None
    select_count: Optional[int] = None
    screen_k: int = 50
    screen_threshold: float = 0.01
    align: AlignmentConfig = field(default_factory=AlignmentConfig)
    seed: int = 0
    workers: int = 1
    out: str = "out"
    base_dir: str = "."

    def path(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["align"]["normalization"] = list(d["align"]["normalization"])
        d.pop("base_dir")
        d.pop("out")
        d["align"].pop("workers")
        d.pop("workers")
        return d


def _side(data: Mapping[str, Any], name: str) -> SideConfig:
    known = set(SideConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return SideConfig(**data)


def config_from_dict(data: Mapping[str, Any], base_dir: str = ".") -> PipelineConfig:
    data = dict(data or {})
    known = set(PipelineConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    align_data = dict(data.pop("align", None) or {})
    align_data.setdefault("seed", data.get("seed", 0))
    try:
        align = AlignmentConfig(**align_data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"align: {exc}") from None
    src = _side(data.pop("source", None) or {}, "source")
    tgt = _side(data.pop("target", None) or {}, "target")
    try:
        cfg = PipelineConfig(source=src, target=tgt, align=align, base_dir=base_dir, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: Optional[str], overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Read a YAML config; ``overrides`` (dotted keys) win over file values."""
    data: Dict[str, Any] = {}
    base = "."
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with p.open(encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        base = str(p.parent)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    if (overrides or {}).get("seed") is not None and isinstance(data.get("align"), dict):
        data["align"]["seed"] = overrides["seed"]
    return config_from_dict(data, base)


def validate(cfg: PipelineConfig) -> None:
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; expected one of {METHODS}")
    if cfg.alignment not in ALIGNMENTS:
        raise ConfigError(f"unknown alignment {cfg.alignment!r}; expected one of {ALIGNMENTS}")
    if cfg.alignment in ("procrustes", "vecmap", "refine") and not cfg.seed_dictionary and not cfg.mapping:
        raise ConfigError(f"alignment {cfg.alignment!r} needs a seed_dictionary")
    for side_name in ("source", "target"):
        side = getattr(cfg, side_name)
        for key in ("taxonomy", "vectors", "category_vectors", "translations"):
            p = cfg.path(getattr(side, key))
            if p is not None and not p.exists():
                raise ConfigError(f"{side_name}.{key}: file not found: {p}")
        if side.taxonomy is None and side.category_vectors is None:
            raise ConfigError(f"{side_name}: need a taxonomy or category_vectors file")
    for key in ("seed_dictionary", "mapping", "annotations"):
        p = cfg.path(getattr(cfg, key))
        if p is not None and not p.exists():
            raise ConfigError(f"{key}: file not found: {p}")


def load_side(cfg: PipelineConfig, side: SideConfig) -> Optional[Taxonomy]:
    if side.taxonomy is None:
        return None
    return load_taxonomy(cfg.path(side.taxonomy), side.scheme, delimiter=side.delimiter,
                         strict=side.strict)


def side_vectors(cfg: PipelineConfig, side: SideConfig, tax: Optional[Taxonomy]) -> CategoryVectorSet:
    if side.category_vectors is not None:
        return CategoryVectorSet.from_table(side.scheme, load_vectors(cfg.path(side.category_vectors)))
    if tax is None or side.vectors is None:
        raise ConfigError("vector methods need category_vectors or taxonomy + vectors")
    translations = load_translations(cfg.path(side.translations)) if side.translations else None
    return build_category_vectors(tax, load_vectors(cfg.path(side.vectors)), translations)


def _prepared(vs: CategoryVectorSet, matrix: np.ndarray) -> CategoryVectorSet:
    return CategoryVectorSet(vs.scheme, vs.codes, matrix, vs.mask)


def align_spaces(cfg: PipelineConfig, xs: CategoryVectorSet, yt: CategoryVectorSet
                 ) -> Tuple[CategoryVectorSet, CategoryVectorSet, Optional[MappingMatrix]]:
    """Prepare both spaces and learn the configured mapping (if any)."""
    if cfg.alignment == "none" and cfg.mapping is None:
        return xs, yt, None
    X, Y = prepare_spaces(xs.matrix, yt.matrix, cfg.align)
    if cfg.mapping is not None:
        mapping = load_mapping(cfg.path(cfg.mapping))
    elif cfg.alignment == "self-learn":
        mapping = self_learn(X, Y, cfg.align)
    else:
        pairs = load_seed_pairs(cfg.path(cfg.seed_dictionary))
        seed = dictionary_from_codes(pairs, xs, yt)
        if cfg.alignment == "procrustes":
            mapping = procrustes_solve(X, Y, seed)
        elif cfg.alignment == "vecmap":
            mapping = vecmap_mapping(X, Y, seed)
        else:
            mapping = refine(X, Y, seed, cfg.align)
    return _prepared(xs, X), _prepared(yt, Y), mapping


def run_matching(cfg: PipelineConfig, src_tax, tgt_tax, xs=None, yt=None, mapping=None):
    """Returns ``(records, skipped_codes)``."""
    method = cfg.method
    k = cfg.align.csls_k
    if method in ("string", "hier-string"):
        if src_tax is None or tgt_tax is None:
            raise ConfigError(f"method {method!r} needs both taxonomies")
        s_tr = load_translations(cfg.path(cfg.source.translations)) if cfg.source.translations else None
        t_tr = load_translations(cfg.path(cfg.target.translations)) if cfg.target.translations else None
        src_bags, tgt_bags = bags_for(src_tax, s_tr), bags_for(tgt_tax, t_tr)
        if method == "string":
            return match_strings(src_bags, tgt_bags), []
        return hierarchical_match(src_tax, tgt_tax, StringMatcher(src_bags, tgt_bags), method), []
    if method in ("cosine", "csls"):
        return match_vectors(xs, yt, mapping, method, k=k, workers=cfg.workers)
    if src_tax is None or tgt_tax is None:
        raise ConfigError(f"method {method!r} needs both taxonomies")
    scorer = "csls" if method == "hier-csls" else "cosine"
    base = VectorMatcher(xs, yt, mapping, scorer, k=k, workers=cfg.workers)
    return hierarchical_match(src_tax, tgt_tax, base, method), base.skipped


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_id(cfg: PipelineConfig) -> str:
    """Hash of the effective config and the contents of every input file."""
    h = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    inputs = []
    for side in (cfg.source, cfg.target):
        inputs += [side.taxonomy, side.vectors, side.category_vectors, side.translations]
    inputs += [cfg.seed_dictionary, cfg.mapping, cfg.annotations]
    for p in inputs:
        if p is not None:
            h.update(_sha256(cfg.path(p)).encode())
    return h.hexdigest()[:16]


def _versions() -> Dict[str, str]:
    return {"taxalign": __version__, "numpy": np.__version__,
            "python": ".".join(platform.python_version_tuple()[:2])}


def write_manifest(out: Path, rid: str, cfg: PipelineConfig, files: List[str], stage: str) -> Path:
    manifest = {
        "run_id": rid,
        "stage": stage,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "versions": _versions(),
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@contextlib.contextmanager
def stage(name: str):
    """Prefix errors raised inside a pipeline stage with the stage name."""
    try:
        yield
    except (ValueError, np.linalg.LinAlgError) as exc:
        if str(exc).startswith("["):
            raise
        try:
            wrapped = type(exc)(f"[{name}] {exc}")
        except TypeError:
            raise exc
        raise wrapped from exc


def cmd_ingest(cfg: PipelineConfig) -> Dict[str, Dict[int, int]]:
    """Load both taxonomies and return per-level category counts."""
    out = {}
    for name in ("source", "target"):
        side = getattr(cfg, name)
        if side.taxonomy is None:
            raise ConfigError(f"{name}.taxonomy is not set")
        p = cfg.path(side.taxonomy)
        if not p.exists():
            raise ConfigError(f"{name}.taxonomy: file not found: {p}")
        out[name] = load_side(cfg, side).level_counts()
    return out


def cmd_run(cfg: PipelineConfig) -> Dict[str, Any]:
    """Full run; writes matches, skip report, optional mapping and evaluation,
    and a manifest into ``cfg.out``."""
    with stage("config"):
        validate(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rid = run_id(cfg)
    header = [f"run: {rid}", "manifest: manifest.json"]
    with stage("ingest"):
        src_tax = load_side(cfg, cfg.source)
        tgt_tax = load_side(cfg, cfg.target)
    files: List[str] = []
    mapping = xs = yt = None
    if cfg.method not in ("string", "hier-string"):
        with stage("vectors"):
            xs = side_vectors(cfg, cfg.source, src_tax)
            yt = side_vectors(cfg, cfg.target, tgt_tax)
        with stage("align"):
            xs, yt, mapping = align_spaces(cfg, xs, yt)
        if mapping is not None:
            save_mapping(mapping, out / "mapping.tsv", {"run": rid, "manifest": "manifest.json"})
            files.append("mapping.tsv")
    with stage("match"):
        records, skipped = run_matching(cfg, src_tax, tgt_tax, xs, yt, mapping)
    if cfg.select_fraction is not None or cfg.select_count is not None:
        records = select_topn(records, cfg.select_fraction, cfg.select_count).records
    write_matches(records, out / "matches.tsv", header)
    files.append("matches.tsv")
    with (out / "skipped.tsv").open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("code\treason\n")
        for code in skipped:
            fh.write(f"{code}\tno-vocabulary-coverage\n")
    files.append("skipped.tsv")
    result: Dict[str, Any] = {"run_id": rid, "matches": len(records), "skipped": len(skipped)}
    if cfg.annotations is not None:
        with stage("eval"):
            ann = load_annotations(cfg.path(cfg.annotations), cfg.method)
            report = accuracy(ann)
            screen = screen_first_k(ann, cfg.screen_k, cfg.screen_threshold)
        write_report([report], out / "eval.txt", out / "eval.tsv",
                     header + [f"screen first {screen.window}: "
                               f"{'pass' if screen.passed else 'dropped'}"])
        files += ["eval.txt", "eval.tsv"]
        result["accuracy"] = report.accuracy
    write_manifest(out, rid, cfg, files, "run")
    return result


def cmd_project(cfg: PipelineConfig, filename: str = "projection.tsv") -> Path:
    """2-D PCA coordinates of both taxonomies' category vectors, after any
    configured alignment, labeled by side."""
    validate(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    src_tax = load_side(cfg, cfg.source)
    tgt_tax = load_side(cfg, cfg.target)
    xs = side_vectors(cfg, cfg.source, src_tax)
    yt = side_vectors(cfg, cfg.target, tgt_tax)
    xs, yt, mapping = align_spaces(cfg, xs, yt)
    X = xs.matrix[xs.mask]
    if mapping is not None:
        X = mapping.apply(X)
    Y = yt.matrix[yt.mask]
    stacked = np.vstack([X, Y])
    if stacked.shape[0] < 2:
        raise ConfigError("projection needs at least two usable category vectors")
    coords, var = pca_project(stacked, 2)
    labels = ([("source", c) for c, ok in zip(xs.codes, xs.mask) if ok]
              + [("target", c) for c, ok in zip(yt.codes, yt.mask) if ok])
    rid = run_id(cfg)
    path = out / filename
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# run: {rid}\n# manifest: manifest.json\n")
        fh.write("# explained_variance\t" + "\t".join(f"{v:.12g}" for v in var) + "\n")
        fh.write("taxonomy\tcode\tx\ty\n")
        for (side, code), (x, y) in zip(labels, coords):
            fh.write(f"{side}\t{code}\t{x:.12g}\t{y:.12g}\n")
    write_manifest(out, rid, cfg, [filename], "project")
    return path


def read_projection(path: Path) -> Tuple[List[Tuple[str, str]], np.ndarray, np.ndarray]:
    labels, coords, var = [], [], None
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# explained_variance"):
                var = np.array([float(v) for v in line.split("\t")[1:]])
            elif line.startswith("#") or line.startswith("taxonomy\t"):
                continue
            elif line:
                side, code, x, y = line.split("\t")
                labels.append((side, code))
                coords.append((float(x), float(y)))
    return labels, np.array(coords), var
