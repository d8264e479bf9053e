"""Small CBOW and PV-DBOW trainers.

Both models keep an input matrix (word or document vectors, ``V x d``) and an
output matrix ``U`` (``V x d``, one row per predicted word).  Training is
plain single-threaded SGD so a fixed seed gives bit-identical vectors.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .embeddings import VectorTable

logger = logging.getLogger(__name__)

FULL_SOFTMAX_MAX_VOCAB = 2000


class TrainingError(ValueError):
    pass


@dataclass
class Corpus:
    documents: List[Tuple[str, List[str]]]

    def __post_init__(self):
        ids = [d for d, _ in self.documents]
        if len(set(ids)) != len(ids):
            raise TrainingError("duplicate document ids in corpus")

    def __len__(self) -> int:
        return len(self.documents)


def load_corpus(path: Union[str, Path]) -> Corpus:
    """One document per line: ``doc-id<TAB>space-separated tokens``."""
    docs = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            doc_id, sep, text = line.partition("\t")
            if not sep:
                raise TrainingError(f"{path}:{lineno}: expected doc-id<TAB>tokens")
            docs.append((doc_id, text.split()))
    return Corpus(docs)


@dataclass
class TrainerConfig:
    d: int = 100
    c: int = 5
    epochs: int = 20
    negative_samples: int = 5
    alpha_start: float = 0.025
    alpha_end: float = 0.0001
    seed: int = 1
    softmax_mode: str = "negative-sampling"
    min_count: int = 1
    noise_power: float = 0.75

    def __post_init__(self):
        if self.d < 1 or self.c < 1:
            raise TrainingError("d and c must be >= 1")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.softmax_mode not in ("full", "negative-sampling"):
            raise TrainingError(f"unknown softmax_mode {self.softmax_mode!r}")


def _logsumexp(z: np.ndarray) -> float:
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


def linear_term(v: np.ndarray, U: np.ndarray, target: int):
    """``-u_t . v`` with its gradients w.r.t. ``v`` and ``U``."""
    dU = np.zeros_like(U)
    dU[target] = -v
    return -float(U[target] @ v), -U[target].copy(), dU


def softmax_term(v: np.ndarray, U: np.ndarray):
    """``log sum_j exp(u_j . v)`` with its gradients w.r.t. ``v`` and ``U``."""
    z = U @ v
    lse = _logsumexp(z)
    p = np.exp(z - lse)
    return lse, p @ U, np.outer(p, v)


def cbow_objective(context: np.ndarray, U: np.ndarray, target: int):
    """Full-softmax CBOW loss for one (context, target) pair.

    ``context`` holds the input vectors of the context words; their mean is
    the hidden vector.  Returns ``(loss, d_context, d_U)``.
    """
    context = np.asarray(context, dtype=np.float64)
    v = context.mean(axis=0)
    l1, dv1, dU1 = linear_term(v, U, target)
    l2, dv2, dU2 = softmax_term(v, U)
    dv = dv1 + dv2
    d_context = np.repeat((dv / len(context))[None, :], len(context), axis=0)
    return l1 + l2, d_context, dU1 + dU2


@dataclass
class CBOWProbe:
    """A tiny model state for gradient checking."""

    context: np.ndarray
    U: np.ndarray
    target: int

    @classmethod
    def random(cls, vocab: int = 20, d: int = 6, n_context: int = 4, seed: int = 0) -> "CBOWProbe":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(size=(n_context, d)), rng.normal(size=(vocab, d)),
                   int(rng.integers(vocab)))


def gradient_check(cfg: TrainerConfig, probe: CBOWProbe, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error of each entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if cfg.softmax_mode != "full":
        raise TrainingError("gradient_check needs softmax_mode='full'")
    if probe.U.shape[0] > 50 or probe.U.shape[1] > 8:
        raise TrainingError("gradient_check is meant for vocab <= 50 and d <= 8")
    _, g_ctx, g_U = cbow_objective(probe.context, probe.U, probe.target)
    worst = 0.0
    for name, param, grad in (("context", probe.context, g_ctx), ("U", probe.U, g_U)):
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + step
            up = cbow_objective(probe.context, probe.U, probe.target)[0]
            param[idx] = orig - step
            down = cbow_objective(probe.context, probe.U, probe.target)[0]
            param[idx] = orig
            numeric = (up - down) / (2 * step)
            err = abs(grad[idx] - numeric) / max(abs(grad[idx]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))


def build_vocab(corpus: Corpus, min_count: int = 1) -> Tuple[List[str], np.ndarray]:
    counts = Counter(tok for _, toks in corpus.documents for tok in toks)
    vocab = sorted((t for t, c in counts.items() if c >= min_count),
                   key=lambda t: (-counts[t], t))
    return vocab, np.array([counts[t] for t in vocab], dtype=np.float64)


class _Model:
    def __init__(self, corpus: Corpus, cfg: TrainerConfig):
        if not corpus.documents:
            raise TrainingError("empty corpus")
        self.cfg = cfg
        self.vocab, counts = build_vocab(corpus, cfg.min_count)
        if not self.vocab:
            raise TrainingError("no tokens survive the min-count filter")
        self.index = {t: i for i, t in enumerate(self.vocab)}
        if cfg.softmax_mode == "full" and len(self.vocab) > FULL_SOFTMAX_MAX_VOCAB:
            raise TrainingError(
                f"full softmax limited to {FULL_SOFTMAX_MAX_VOCAB} words, vocabulary has {len(self.vocab)}"
            )
        self.rng = np.random.default_rng(cfg.seed)
        noise = counts ** cfg.noise_power
        self.noise_cdf = np.cumsum(noise / noise.sum())
        self.docs = [(doc_id, [self.index[t] for t in toks if t in self.index])
                     for doc_id, toks in corpus.documents]
        self.U = np.zeros((len(self.vocab), cfg.d))
        self.loss_history: List[float] = []

    def _init_input(self, rows: int) -> np.ndarray:
        d = self.cfg.d
        return (self.rng.random((rows, d)) - 0.5) / d

    def _negatives(self, target: int) -> np.ndarray:
        out = np.searchsorted(self.noise_cdf, self.rng.random(self.cfg.negative_samples),
                              side="right")
        out = np.minimum(out, len(self.vocab) - 1)
        return out[out != target]

    def _step(self, v: np.ndarray, target: int, lr: float) -> np.ndarray:
        """Update ``U`` for one prediction and return the gradient w.r.t. ``v``."""
        if self.cfg.softmax_mode == "full":
            z = self.U @ v
            p = np.exp(z - _logsumexp(z))
            p[target] -= 1.0
            dv = p @ self.U
            self.U -= lr * np.outer(p, v)
            return dv
        rows = np.concatenate([[target], self._negatives(target)])
        labels = np.zeros(len(rows))
        labels[0] = 1.0
        g = _sigmoid(self.U[rows] @ v) - labels
        dv = g @ self.U[rows]
        np.subtract.at(self.U, rows, lr * np.outer(g, v))
        return dv

    def _alphas(self, total: int) -> Iterator[float]:
        a0, a1 = self.cfg.alpha_start, self.cfg.alpha_end
        for step in range(total):
            yield a0 + (a1 - a0) * step / max(total - 1, 1)


class CBOW(_Model):
    """Continuous bag-of-words: predict a word from its averaged context."""

    def __init__(self, corpus: Corpus, cfg: TrainerConfig):
        super().__init__(corpus, cfg)
        self.pairs = list(self._pairs())
        if not self.pairs:
            raise TrainingError("corpus yields no (context, target) training pairs")
        self.W = self._init_input(len(self.vocab))

    def _pairs(self) -> Iterator[Tuple[np.ndarray, int]]:
        c = self.cfg.c
        for _, ids in self.docs:
            for i, target in enumerate(ids):
                ctx = ids[max(0, i - c):i] + ids[i + 1:i + 1 + c]
                if ctx:
                    yield np.array(ctx), target

    def loss(self) -> float:
        """Total full-softmax loss over every training pair."""
        total = 0.0
        for ctx, target in self.pairs:
            v = self.W[ctx].mean(axis=0)
            total += _logsumexp(self.U @ v) - float(self.U[target] @ v)
        return total

    def train(self) -> "CBOW":
        alphas = self._alphas(self.cfg.epochs * len(self.pairs))
        track = self.cfg.softmax_mode == "full"
        for epoch in range(self.cfg.epochs):
            for ctx, target in self.pairs:
                lr = next(alphas)
                v = self.W[ctx].mean(axis=0)
                dv = self._step(v, target, lr)
                # context tokens share the averaged gradient; repeats accumulate
                np.subtract.at(self.W, ctx, lr * dv / len(ctx))
            if track:
                self.loss_history.append(self.loss())
        return self

    def vectors(self) -> VectorTable:
        return VectorTable(list(self.vocab), self.W.copy())


class PVDBOW(_Model):
    """Paragraph vectors, distributed bag of words: predict each word of a
    document from the document's own vector."""

    def __init__(self, corpus: Corpus, cfg: TrainerConfig):
        super().__init__(corpus, cfg)
        for doc_id, ids in self.docs:
            if not ids:
                raise TrainingError(f"document {doc_id!r} yields no training pairs")
        self.pairs = [(d, w) for d, (_, ids) in enumerate(self.docs) for w in ids]
        self.D = self._init_input(len(self.docs))

    def loss(self) -> float:
        total = 0.0
        for d, target in self.pairs:
            v = self.D[d]
            total += _logsumexp(self.U @ v) - float(self.U[target] @ v)
        return total

    def train(self) -> "PVDBOW":
        alphas = self._alphas(self.cfg.epochs * len(self.pairs))
        track = self.cfg.softmax_mode == "full"
        for epoch in range(self.cfg.epochs):
            for d, target in self.pairs:
                lr = next(alphas)
                dv = self._step(self.D[d], target, lr)
                self.D[d] -= lr * dv
            if track:
                self.loss_history.append(self.loss())
        return self

    def vectors(self) -> VectorTable:
        return VectorTable([doc_id for doc_id, _ in self.docs], self.D.copy())


def train_cbow(corpus: Corpus, cfg: Optional[TrainerConfig] = None) -> VectorTable:
    """Train CBOW word vectors and return the input matrix as a table."""
    return CBOW(corpus, cfg or TrainerConfig()).train().vectors()


def train_pvdbow(corpus: Corpus, cfg: Optional[TrainerConfig] = None) -> VectorTable:
    """Train PV-DBOW document vectors, one row per document id."""
    return PVDBOW(corpus, cfg or TrainerConfig()).train().vectors()
