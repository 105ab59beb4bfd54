"""Vocabulary, token sequences, simplex checks and the seeded random source."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataContainsMask, InvalidDistribution, MaskQueryError, ShapeError

SIMPLEX_ATOL = 1e-12
MASK_SYMBOL = "<mask>"


@dataclass(frozen=True)
class Vocabulary:
    """K categories, one of which is the absorbing mask state."""

    K: int
    mask_index: int | None = None

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"vocabulary needs K >= 2, got {self.K}")
        if self.mask_index is None:
            object.__setattr__(self, "mask_index", self.K - 1)
        if not 0 <= self.mask_index < self.K:
            raise ValueError(f"mask_index {self.mask_index} outside [0, {self.K})")

    @property
    def data_tokens(self) -> np.ndarray:
        return np.delete(np.arange(self.K), self.mask_index)

    @property
    def K_data(self) -> int:
        return self.K - 1


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple
    kind: str = "latent"
    vocab: Vocabulary | None = None

    def __post_init__(self):
        if self.kind not in ("data", "latent"):
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.vocab is not None:
            check_tokens(self.tokens, self.vocab, data=self.kind == "data")

    def __len__(self):
        return len(self.tokens)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)


def check_tokens(tokens, vocab: Vocabulary, data: bool = False) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab.K):
        raise ShapeError(f"token ids must lie in [0, {vocab.K})")
    if data and np.any(arr == vocab.mask_index):
        raise DataContainsMask("data sequence contains the mask token")
    return arr


def validate_simplex(p, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Return ``p`` as a float array, raising if it is not a probability vector.

    Works on the last axis, so a stack of per-position simplices is checked
    in one call.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise InvalidDistribution("empty probability vector")
    if not np.all(np.isfinite(p)):
        raise InvalidDistribution("probabilities must be finite")
    if np.any(p < 0):
        raise InvalidDistribution("probabilities must be nonnegative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise InvalidDistribution(f"probabilities must sum to 1 within {atol:g}")
    return p


def onehot(index: int, K: int) -> np.ndarray:
    v = np.zeros(K)
    v[index] = 1.0
    return v


class Rng:
    """Counter-based (Philox) random stream with an explicit 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def child(self, key: int) -> "Rng":
        """Independent stream derived from this seed and ``key``."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(ss.generate_state(1, np.uint64)[0]))


def inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised inverse-CDF lookup over the last axis.

    Picks the first index whose cumulative sum exceeds ``u``. Rounding can leave
    the final cumulative sum slightly under 1; a draw past it falls back to the
    highest-index category with positive mass.
    """
    probs = np.atleast_2d(probs)
    u = np.atleast_1d(u)
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= u[:, None]).sum(axis=-1)
    over = idx >= probs.shape[-1]
    if np.any(over):
        K = probs.shape[-1]
        last_pos = K - 1 - np.argmax(probs[over][:, ::-1] > 0, axis=-1)
        idx[over] = last_pos
    return idx


def sample_categorical(p, rng: Rng) -> int:
    p = validate_simplex(p)
    if p.ndim != 1:
        raise InvalidDistribution("sample_categorical expects a single distribution")
    return int(inverse_cdf(p[None, :], np.array([rng.random()]))[0])


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    top = np.max(logits, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    shifted = logits - top
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def log_prob_of(log_probs, target: int, mask_index: int | None = None) -> float:
    """Read ``log p[target]`` straight from a log-space distribution.

    When ``mask_index`` is given the distribution is treated as SUBS-constrained,
    and asking for the mask entry is an error.
    """
    if mask_index is not None and target == mask_index:
        raise MaskQueryError("the mask entry of a SUBS output is structurally -inf")
    lp = np.asarray(log_probs, dtype=np.float64)
    if not 0 <= target < lp.shape[-1]:
        raise ShapeError(f"target {target} outside [0, {lp.shape[-1]})")
    return float(min(lp[..., target], 0.0))


# ---------------------------------------------------------------------------
# plain-text file formats


def read_vocab_file(path) -> tuple[list[str], Vocabulary]:
    symbols = Path(path).read_text().splitlines()
    if not symbols or symbols[-1] != MASK_SYMBOL:
        raise ValueError(f"last vocabulary line must be {MASK_SYMBOL!r}")
    return symbols, Vocabulary(len(symbols), len(symbols) - 1)


def write_vocab_file(path, symbols: Sequence[str]) -> None:
    lines = list(symbols)
    if MASK_SYMBOL in lines:
        raise ValueError("data symbols may not include the mask symbol")
    Path(path).write_text("\n".join(lines + [MASK_SYMBOL]) + "\n")


def read_corpus(path, vocab: Vocabulary | None = None) -> np.ndarray:
    rows = [list(map(int, line.split())) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ShapeError(f"corpus rows have mixed lengths {sorted(lengths)}")
    arr = np.asarray(rows, dtype=np.int64)
    if vocab is not None:
        check_tokens(arr, vocab, data=True)
    return arr


def write_corpus(path, seqs: Iterable[Sequence[int]]) -> None:
    text = "".join(" ".join(str(int(t)) for t in row) + "\n" for row in seqs)
    Path(path).write_text(text)
