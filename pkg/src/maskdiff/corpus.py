"""Explicit data distributions and seeded synthetic corpus generators.

Every generator can report the exact log-probability of a sequence, which makes
it usable both as an entropy reference and as the judge for generated samples.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .categorical import Rng, Vocabulary, check_tokens, inverse_cdf, validate_simplex, write_corpus
from .errors import ConfigError, TooLarge

ENUMERATION_LIMIT = 10**6


def _entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


class DataDistribution:
    """Probability table over all K_data^L data sequences.

    Rows of :attr:`sequences` enumerate the data tokens in lexicographic order,
    so ``probs[i]`` is the probability of ``sequences[i]``.
    """

    def __init__(self, vocab: Vocabulary, L: int, probs):
        n = vocab.K_data**L
        if n > ENUMERATION_LIMIT:
            raise TooLarge(f"K_data^L = {n} exceeds {ENUMERATION_LIMIT}")
        probs = validate_simplex(np.asarray(probs, dtype=np.float64).ravel())
        if probs.size != n:
            raise ValueError(f"expected {n} probabilities, got {probs.size}")
        self.vocab = vocab
        self.L = L
        self.probs = probs
        data = vocab.data_tokens
        self.sequences = np.array(list(itertools.product(data, repeat=L)), dtype=np.int64).reshape(n, L)
        self._lookup = np.full(vocab.K, -1, dtype=np.int64)
        self._lookup[data] = np.arange(vocab.K_data)

    @classmethod
    def uniform(cls, vocab: Vocabulary, L: int) -> "DataDistribution":
        n = vocab.K_data**L
        return cls(vocab, L, np.full(n, 1.0 / n))

    @classmethod
    def from_sequences(cls, vocab: Vocabulary, seqs, weights=None) -> "DataDistribution":
        seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
        L = seqs.shape[1]
        w = np.ones(len(seqs)) if weights is None else np.asarray(weights, dtype=np.float64)
        probs = np.zeros(vocab.K_data**L)
        dummy = cls.uniform(vocab, L)
        np.add.at(probs, dummy.index_of(seqs), w)
        return cls(vocab, L, probs / probs.sum())

    @classmethod
    def random(cls, vocab: Vocabulary, L: int, rng: Rng, concentration: float = 1.0) -> "DataDistribution":
        g = rng._gen.gamma(concentration, size=vocab.K_data**L)
        return cls(vocab, L, g / g.sum())

    def index_of(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        digits = self._lookup[x]
        if np.any(digits < 0):
            raise ValueError("sequence contains a non-data token")
        powers = self.vocab.K_data ** np.arange(self.L - 1, -1, -1)
        return digits @ powers

    def prob_of(self, x):
        return self.probs[self.index_of(x)]

    def entropy(self) -> float:
        return _entropy(self.probs)

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        idx = inverse_cdf(np.broadcast_to(self.probs, (n, self.probs.size)), rng.random(n))
        return self.sequences[idx]


# ---------------------------------------------------------------------------
# generators


@dataclass
class Generator:
    """Base for seeded corpus generators over K_data data tokens of length L."""

    K_data: int
    L: int

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.K_data + 1)

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        raise NotImplementedError

    def log_prob(self, seqs) -> np.ndarray:
        raise NotImplementedError

    def entropy(self) -> float:
        """Entropy of one length-L sequence in nats."""
        return float(-np.sum(self.distribution().probs * self.log_prob(self.distribution().sequences)))

    def distribution(self) -> DataDistribution:
        d = DataDistribution.uniform(self.vocab, self.L)
        return DataDistribution(self.vocab, self.L, np.exp(self.log_prob(d.sequences)))

    def manifest(self) -> dict:
        raise NotImplementedError

    def manifest_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.manifest(), sort_keys=True).encode()).hexdigest()


@dataclass
class UniformGenerator(Generator):
    def sample(self, n, rng):
        return rng.integers(0, self.K_data, size=(n, self.L))

    def log_prob(self, seqs):
        seqs = np.atleast_2d(seqs)
        return np.full(len(seqs), -self.L * np.log(self.K_data))

    def entropy(self):
        return self.L * float(np.log(self.K_data))

    def manifest(self):
        return {"generator": "uniform", "K_data": self.K_data, "L": self.L}


def default_markov_table(K_data: int, p_next: float = 0.85, shift: int = 1) -> np.ndarray:
    """Mostly-deterministic cycle: state i moves to i+shift with probability ``p_next``."""
    rest = (1.0 - p_next) / (K_data - 1)
    table = np.full((K_data, K_data), rest)
    for i in range(K_data):
        table[i, (i + shift) % K_data] = p_next
    return table


def stationary_distribution(table) -> np.ndarray:
    vals, vecs = np.linalg.eig(np.asarray(table).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    v = np.abs(v) / np.abs(v).sum()
    return v


@dataclass
class Markov1Generator(Generator):
    """First-order Markov chain; the initial token follows ``init`` (stationary by default)."""

    table: np.ndarray = None
    init: np.ndarray = None

    def __post_init__(self):
        if self.table is None:
            self.table = default_markov_table(self.K_data)
        self.table = validate_simplex(np.asarray(self.table, dtype=np.float64), atol=1e-9)
        if self.table.shape != (self.K_data, self.K_data):
            raise ConfigError(f"markov table must be {self.K_data}x{self.K_data}")
        if self.init is None:
            self.init = stationary_distribution(self.table)
        self.init = validate_simplex(np.asarray(self.init, dtype=np.float64), atol=1e-9)

    def sample(self, n, rng):
        out = np.empty((n, self.L), dtype=np.int64)
        out[:, 0] = inverse_cdf(np.broadcast_to(self.init, (n, self.K_data)), rng.random(n))
        for l in range(1, self.L):
            out[:, l] = inverse_cdf(self.table[out[:, l - 1]], rng.random(n))
        return out

    def log_prob(self, seqs):
        seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
        with np.errstate(divide="ignore"):
            lp = np.log(self.init[seqs[:, 0]])
            lp = lp + np.log(self.table[seqs[:, :-1], seqs[:, 1:]]).sum(axis=1)
        return lp

    def entropy(self):
        """Closed form: H(init) + sum over steps of E_{p_l}[H(row)]."""
        row_h = np.array([_entropy(r) for r in self.table])
        p = self.init.copy()
        total = _entropy(p)
        for _ in range(self.L - 1):
            total += float(p @ row_h)
            p = p @ self.table
        return total

    def manifest(self):
        return {
            "generator": "markov1",
            "K_data": self.K_data,
            "L": self.L,
            "table": self.table.tolist(),
            "init": self.init.tolist(),
        }


@dataclass
class TemplatedGenerator(Generator):
    """Pick one of a few fixed templates, then resample each token uniformly with probability ``noise``."""

    templates: np.ndarray = None
    noise: float = 0.1
    template_seed: int = 0
    n_templates: int = 4

    def __post_init__(self):
        if self.templates is None:
            self.templates = Rng(self.template_seed).integers(0, self.K_data, size=(self.n_templates, self.L))
        self.templates = np.asarray(self.templates, dtype=np.int64)
        if self.templates.ndim != 2 or self.templates.shape[1] != self.L:
            raise ConfigError(f"templates must have shape (n, {self.L})")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")

    def sample(self, n, rng):
        which = rng.integers(0, len(self.templates), size=n)
        out = self.templates[which].copy()
        flip = rng.random((n, self.L)) < self.noise
        repl = rng.integers(0, self.K_data, size=(n, self.L))
        return np.where(flip, repl, out)

    def log_prob(self, seqs):
        seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
        hit = (1.0 - self.noise) + self.noise / self.K_data
        miss = self.noise / self.K_data
        eq = seqs[:, None, :] == self.templates[None, :, :]
        with np.errstate(divide="ignore"):
            per = np.where(eq, np.log(hit), np.log(miss)).sum(axis=-1)
        top = per.max(axis=1, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        return (top[:, 0] + np.log(np.exp(per - top).sum(axis=1))) - np.log(len(self.templates))

    def manifest(self):
        return {
            "generator": "templated",
            "K_data": self.K_data,
            "L": self.L,
            "templates": self.templates.tolist(),
            "noise": self.noise,
        }


def generator_from_manifest(doc: dict) -> Generator:
    kind = doc.get("generator")
    if kind == "uniform":
        return UniformGenerator(doc["K_data"], doc["L"])
    if kind == "markov1":
        return Markov1Generator(doc["K_data"], doc["L"], table=np.asarray(doc["table"]), init=np.asarray(doc["init"]))
    if kind == "templated":
        return TemplatedGenerator(doc["K_data"], doc["L"], templates=np.asarray(doc["templates"]), noise=doc["noise"])
    raise ConfigError(f"unknown generator {kind!r}")


def make_generator(kind: str, K_data: int, L: int, **kw) -> Generator:
    if kind == "uniform":
        return UniformGenerator(K_data, L)
    if kind == "markov1":
        return Markov1Generator(K_data, L, **kw)
    if kind == "templated":
        return TemplatedGenerator(K_data, L, **kw)
    raise ConfigError(f"unknown generator {kind!r}")


def gen_corpus(gen: Generator, n: int, seed: int, out_dir) -> tuple[Path, Path]:
    """Write ``corpus.txt`` and ``manifest.json`` into ``out_dir``; deterministic per seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seqs = gen.sample(n, Rng(seed))
    check_tokens(seqs, gen.vocab, data=True)
    corpus_path = out_dir / "corpus.txt"
    manifest_path = out_dir / "manifest.json"
    write_corpus(corpus_path, seqs)
    manifest = {**gen.manifest(), "n": n, "seed": seed}
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return corpus_path, manifest_path


def load_manifest(path) -> Generator:
    return generator_from_manifest(json.loads(Path(path).read_text()))
