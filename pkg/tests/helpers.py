"""Synthetic fixtures shared by the test modules."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from taxalign.embeddings import save_vectors

WORDS = [
    "boots", "rubber", "shoes", "women", "men", "pens", "pencils", "paper", "office",
    "supplies", "seeds", "wheat", "durum", "winter", "spring", "barley", "oats", "dog",
    "cat", "food", "pet", "plastering", "works", "roofing", "repair", "maintenance",
    "equipment", "machinery", "services", "management", "property", "state", "fuel",
    "nuclear", "acids", "oils", "engine", "auto", "body", "sewage", "treatment", "water",
    "pipes", "valves", "pumps", "steel", "copper", "wire", "cable", "lamps", "bulbs",
    "glass", "windows", "doors", "locks", "keys", "tables", "chairs", "desks", "beds",
    "linen", "towels", "soap", "paint", "brushes", "rollers", "ladders", "tools", "drills",
    "saws", "nails", "screws", "bolts", "tires", "wheels", "brakes", "filters", "belts",
    "hoses", "gloves", "masks", "helmets", "vests", "jackets", "coats", "hats", "socks",
    "milk", "cheese", "bread", "flour", "sugar", "salt", "tea", "coffee", "juice", "fruit",
    "vegetables", "meat", "fish", "eggs", "rice", "pasta", "computers", "printers",
    "monitors", "software", "licenses", "phones", "radios", "antennas", "batteries",
    "chargers", "medical", "surgical", "dental", "laboratory", "chemicals", "reagents",
    "vaccines", "drugs", "bandages", "syringes", "books", "journals", "maps", "printing",
    "binding", "cleaning", "janitorial", "security", "guard", "transport", "freight",
    "courier", "postal", "travel", "lodging", "catering", "training", "consulting",
    "legal", "accounting", "audit", "insurance", "banking", "construction", "demolition",
    "excavation", "concrete", "asphalt", "paving", "bridges", "roads", "tunnels",
]


def random_bags(n: int, seed: int = 0, min_len: int = 2, max_len: int = 5):
    """``n`` distinct descriptions drawn from :data:`WORDS`."""
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    while len(out) < n:
        k = int(rng.integers(min_len, max_len + 1))
        words = tuple(sorted(rng.choice(WORDS, size=k, replace=False)))
        if words in seen:
            continue
        seen.add(words)
        out.append(" ".join(rng.permutation(words)))
    return out


def random_orthogonal(d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def rotated_clone(n: int = 2000, d: int = 50, noise: float = 0.01, seed: int = 0, shuffle: bool = True):
    """Gaussian cloud ``X`` and its rotated, noisy, row-shuffled copy ``Y``.

    Returns ``X, Y, R, truth`` with ``Y[truth[i]] ~ R @ X[i]``.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    R = random_orthogonal(d, seed + 1)
    Y = X @ R.T + noise * rng.standard_normal((n, d))
    truth = np.arange(n)
    if shuffle:
        perm = rng.permutation(n)
        Y = Y[perm]
        truth = np.argsort(perm)
    return X, Y, R, truth


def hub_fixture(seed: int, n: int = 200, m: int = 200, d: int = 30, offset: float = 0.6):
    """Source/target clouds sharing a mean direction plus one target placed
    on that direction (the hub, last row)."""
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(d)
    mu /= np.linalg.norm(mu)
    X = offset * mu + rng.standard_normal((n, d)) / np.sqrt(d)
    Y = offset * mu + rng.standard_normal((m, d)) / np.sqrt(d)
    Y[-1] = mu
    return X, Y


def write_taxonomy(path: Path, rows) -> Path:
    path.write_text("".join(f"{c}\t{d}\n" for c, d in rows), encoding="utf-8")
    return path


def nested_taxonomy_rows(branching=(3, 3, 2, 2), sep=".", seed=0, widths=(2, 2, 1, 3)):
    """Rows of a full tree with the given branching per level."""
    total = 0
    counts = [1]
    for b in branching:
        counts.append(counts[-1] * b)
        total += counts[-1]
    texts = iter(random_bags(total, seed=seed))
    rows = []

    def rec(prefix, level):
        if level == len(branching):
            return
        for i in range(1, branching[level] + 1):
            code = prefix + [str(i).zfill(widths[level])]
            rows.append((sep.join(code), next(texts)))
            rec(code, level + 1)

    rec([], 0)
    return rows


def write_clone_vectors(tmp: Path, n=300, d=20, noise=0.01, seed=0):
    """Category-vector files for a rotated clone plus a 10% seed dictionary."""
    X, Y, R, truth = rotated_clone(n, d, noise, seed)
    src_codes = [f"{i + 1:04d}" for i in range(n)]
    tgt_codes = [f"{j + 1:04d}" for j in range(n)]
    save_vectors(src_codes, tmp / "src.vec", X)
    save_vectors(tgt_codes, tmp / "tgt.vec", Y)
    with (tmp / "seed.tsv").open("w") as fh:
        for i in range(0, n, 10):
            fh.write(f"{src_codes[i]}\t{tgt_codes[truth[i]]}\n")
    return src_codes, tgt_codes, truth
