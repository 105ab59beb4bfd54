"""Ancestral sampling from all-mask, the call-caching variant, and semi-autoregressive blocks.

RNG discipline: each step draws exactly one uniform per currently masked
position, in row-major order, whether or not the denoiser is re-evaluated.
Cached and uncached runs with the same seed therefore follow the same
trajectory bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .categorical import Rng, inverse_cdf
from .errors import BlockSizeError, CacheRequiresTimeFree, InvalidSteps
from .schedules import NoiseSchedule


@dataclass
class SamplerStats:
    denoiser_calls: int = 0
    steps: int = 0
    tokens_unmasked_per_step: list = field(default_factory=list)

    def histogram(self) -> dict:
        vals, counts = np.unique(self.tokens_unmasked_per_step, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def reverse_step(z_t, log_probs, alpha_s: float, alpha_t: float, rng: Rng, mask_index: int) -> np.ndarray:
    """One draw from p_theta(z_s | z_t): copy unmasked tokens, resample masked ones.

    A masked position moves to token y with probability
    (alpha_s - alpha_t) x_theta[y] / (1 - alpha_t) and stays masked otherwise.
    """
    z_t = np.asarray(z_t)
    masked = z_t == mask_index
    n = int(masked.sum())
    u = rng.random(n)
    if n == 0:
        return z_t.copy()
    probs = np.exp(np.asarray(log_probs)[masked])
    if alpha_s <= alpha_t:
        # no elapsed noise: everything stays masked
        probs = np.zeros_like(probs)
        probs[:, mask_index] = 1.0
    else:
        denom = 1.0 - alpha_t
        probs = (alpha_s - alpha_t) / denom * probs
        probs[:, mask_index] = (1.0 - alpha_s) / denom
    z_s = z_t.copy()
    z_s[masked] = inverse_cdf(probs, u)
    return z_s


def sampler_grid(T: int, sched: NoiseSchedule | None = None):
    """Times t_k = 1 - k/T and alphas for k = 0..T, with the endpoints pinned to 0 and 1."""
    if int(T) != T or T < 1:
        raise InvalidSteps(f"number of steps must be a positive integer, got {T}")
    sched = sched or NoiseSchedule("log_linear")
    times = 1.0 - np.arange(T + 1) / T
    alphas = np.asarray(sched.alpha(times), dtype=np.float64)
    alphas[0], alphas[-1] = 0.0, 1.0
    return times, alphas


def ancestral_sample(L: int, T: int, denoiser, sched: NoiseSchedule | None = None, rng: Rng | None = None,
                     cache: bool = False, init=None):
    """Generate one sequence by walking the grid from all-mask (or from ``init``).

    Returns ``(tokens, stats)``. With ``cache`` the denoiser is re-evaluated
    only after a step that unmasked at least one token.
    """
    if cache and denoiser.time_conditioned:
        raise CacheRequiresTimeFree("caching requires a denoiser that ignores t")
    times, alphas = sampler_grid(T, sched)
    m = denoiser.vocab.mask_index
    z = np.full(L, m, dtype=np.int64) if init is None else np.array(init, dtype=np.int64)
    stats = SamplerStats(steps=T)
    lp = None
    changed = True
    for k in range(T):
        if not cache or changed or lp is None:
            lp = denoiser.log_probs(z, times[k])
            stats.denoiser_calls += 1
        z_new = reverse_step(z, lp, alphas[k + 1], alphas[k], rng, m)
        n_new = int(np.sum(z_new != z))
        stats.tokens_unmasked_per_step.append(n_new)
        changed = n_new > 0
        z = z_new
    return z, stats


def semi_ar_generate(L: int, L_prime: int, n_rounds: int, T: int, denoiser, sched: NoiseSchedule | None = None,
                     rng: Rng | None = None, cache: bool = False):
    """Block generation with a sliding window of length L.

    Round 0 samples L tokens. Each later round seeds the first L - L_prime
    positions with the last L - L_prime tokens generated so far, masks the
    remaining L_prime, and samples; the new L_prime tokens are appended.
    """
    if not 0 < L_prime < L:
        raise BlockSizeError(f"need 0 < L_prime < L, got L_prime={L_prime}, L={L}")
    m = denoiser.vocab.mask_index
    z, stats = ancestral_sample(L, T, denoiser, sched, rng, cache)
    out = list(z)
    all_stats = [stats]
    keep = L - L_prime
    for _ in range(n_rounds):
        init = np.concatenate([np.asarray(out[-keep:], dtype=np.int64), np.full(L_prime, m, dtype=np.int64)])
        z, stats = ancestral_sample(L, T, denoiser, sched, rng, cache, init=init)
        out.extend(z[keep:])
        all_stats.append(stats)
    return np.asarray(out, dtype=np.int64), all_stats


def sample_batch(n: int, L: int, T: int, denoiser, sched: NoiseSchedule | None = None, rng: Rng | None = None,
                 init=None) -> np.ndarray:
    """``n`` independent uncached trajectories advanced together, shape (n, L).

    Draws are taken in row-major order over the masked entries of the batch,
    so the stream differs from ``n`` sequential calls but the law is the same.
    """
    times, alphas = sampler_grid(T, sched)
    m = denoiser.vocab.mask_index
    z = np.full((n, L), m, dtype=np.int64) if init is None else np.array(np.broadcast_to(init, (n, L)), dtype=np.int64)
    for k in range(T):
        live = np.any(z == m, axis=1)
        if not live.any():
            break
        lp = denoiser.log_probs(z[live], times[k])
        z[live] = reverse_step(z[live], lp, alphas[k + 1], alphas[k], rng, m)
    return z
