"""Forward (noising) marginals, transitions and reverse posteriors for one token.

Sequence-level quantities factorise over positions and are assembled by callers.
The general functions take an arbitrary prior ``pi``; the masked variants fix
``pi`` to the point mass on the mask index.
"""

from __future__ import annotations

import numpy as np

from .categorical import Vocabulary, onehot, validate_simplex
from .errors import DataContainsMask, TimeOrderError, UnreachableLatent
from .schedules import NoiseSchedule

UNREACHABLE_THRESHOLD = 1e-300


def masked_prior(vocab: Vocabulary) -> np.ndarray:
    return onehot(vocab.mask_index, vocab.K)


def _alpha(t, sched: NoiseSchedule | None):
    # ``t`` may be passed as an alpha value directly when no schedule is given
    return float(t) if sched is None else float(sched.alpha(t))


def marginal_alpha(x: int, alpha_t: float, pi) -> np.ndarray:
    pi = validate_simplex(pi)
    return alpha_t * onehot(x, pi.size) + (1.0 - alpha_t) * pi


def marginal(x: int, t: float, sched: NoiseSchedule, pi, vocab: Vocabulary | None = None) -> np.ndarray:
    """q(z_t | x) = alpha_t x + (1 - alpha_t) pi."""
    pi = np.asarray(pi, dtype=np.float64)
    mask = vocab.mask_index if vocab is not None else pi.size - 1
    if x == mask:
        raise DataContainsMask("clean token cannot be the mask")
    return marginal_alpha(x, _alpha(t, sched), pi)


def transition_alpha(z_s: int, alpha_s: float, alpha_t: float, pi) -> np.ndarray:
    pi = validate_simplex(pi)
    ratio = alpha_t / alpha_s
    return ratio * onehot(z_s, pi.size) + (1.0 - ratio) * pi


def transition(z_s: int, s: float, t: float, sched: NoiseSchedule, pi) -> np.ndarray:
    """q(z_t | z_s) with alpha_{t|s} = alpha_t / alpha_s. ``s == t`` gives the identity."""
    if s > t:
        raise TimeOrderError(f"transition needs s <= t, got s={s}, t={t}")
    if s == t:
        return onehot(z_s, len(pi))
    return transition_alpha(z_s, _alpha(s, sched), _alpha(t, sched), pi)


def transition_matrix(alpha_s: float, alpha_t: float, pi) -> np.ndarray:
    """Column-stochastic matrix Q[z_t, z_s] = q(z_t | z_s)."""
    pi = validate_simplex(pi)
    ratio = alpha_t / alpha_s
    return ratio * np.eye(pi.size) + (1.0 - ratio) * pi[:, None]


def posterior_general_alpha(z_t: int, x: int, alpha_s: float, alpha_t: float, pi) -> np.ndarray:
    pi = validate_simplex(pi)
    K = pi.size
    zt = onehot(z_t, K)
    xv = onehot(x, K)
    ratio = alpha_t / alpha_s
    left = ratio * zt + (1.0 - ratio) * np.ones(K) * pi[z_t]
    right = alpha_s * xv + (1.0 - alpha_s) * pi
    denom = alpha_t * xv[z_t] + (1.0 - alpha_t) * pi[z_t]
    if denom < UNREACHABLE_THRESHOLD:
        raise UnreachableLatent(f"z_t={z_t} has zero probability under q(z_t | x={x})")
    return left * right / denom


def posterior_general(z_t: int, x: int, s: float, t: float, sched: NoiseSchedule, pi) -> np.ndarray:
    """q(z_s | z_t, x) for the interpolating process with prior ``pi``."""
    if s >= t:
        raise TimeOrderError(f"posterior needs s < t, got s={s}, t={t}")
    return posterior_general_alpha(z_t, x, _alpha(s, sched), _alpha(t, sched), pi)


def posterior_masked_alpha(z_t: int, x: int, alpha_s: float, alpha_t: float, vocab: Vocabulary) -> np.ndarray:
    m = vocab.mask_index
    if x == m:
        raise DataContainsMask("clean token cannot be the mask")
    if z_t != m:
        if z_t != x:
            raise UnreachableLatent(f"z_t={z_t} is neither x={x} nor the mask")
        return onehot(z_t, vocab.K)
    denom = 1.0 - alpha_t
    if denom < UNREACHABLE_THRESHOLD:
        raise UnreachableLatent("z_t = mask is unreachable when alpha_t = 1")
    out = np.zeros(vocab.K)
    out[m] = (1.0 - alpha_s) / denom
    out[x] = (alpha_s - alpha_t) / denom
    return out


def posterior_masked(z_t: int, x: int, s: float, t: float, sched: NoiseSchedule, vocab: Vocabulary) -> np.ndarray:
    """Closed-form masked posterior: copy an unmasked z_t, else split mass between x and mask."""
    if s >= t:
        raise TimeOrderError(f"posterior needs s < t, got s={s}, t={t}")
    return posterior_masked_alpha(z_t, x, _alpha(s, sched), _alpha(t, sched), vocab)


def sample_masking(x: np.ndarray, alpha, vocab: Vocabulary, rng) -> np.ndarray:
    """Mask each token of ``x`` independently with probability 1 - alpha.

    ``alpha`` may be a scalar or one value per row of a 2-D ``x``.
    """
    x = np.asarray(x)
    u = rng.random(x.shape)
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 1 and x.ndim == 2:
        a = a[:, None]
    return np.where(u < 1.0 - a, vocab.mask_index, x)
