"""Brute-force ground truth for tiny instances.

The reverse model is a Markov chain over joint latent sequences. Because the
reverse kernel factorises over positions only *given* the current latent, the
exact distribution needs the full joint state; it is tracked here as a dense
vector over all K^L latents.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import BoundViolation, TooLarge
from .objectives import ObjectiveVariant, diffusion_loss_discrete, mask_patterns
from .sampler import sampler_grid
from .schedules import NoiseSchedule, discrete_alpha_grid, discrete_times

STATE_LIMIT = 10**6
BOUND_SLACK = 1e-9


def _guard(K: int, L: int, n_steps: int):
    if K**L * n_steps > STATE_LIMIT:
        raise TooLarge(f"K^L * steps = {K ** L * n_steps} exceeds {STATE_LIMIT}")


def all_states(K: int, L: int) -> np.ndarray:
    return np.array(list(itertools.product(range(K), repeat=L)), dtype=np.int64).reshape(K**L, L)


def state_index(z, K: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    return z @ (K ** np.arange(z.shape[-1] - 1, -1, -1))


def model_levels(T: int, sched: NoiseSchedule | None = None):
    """Alpha levels and denoiser times for the T-step discrete model.

    Returns alphas ``[alpha_{t(T)} = 0, ..., alpha_{t(0)}, 1]`` and the time fed
    to the denoiser at each of the T + 1 transitions out of those levels.
    """
    times = discrete_times(T)
    if sched is None:
        a = discrete_alpha_grid(T)
    else:
        a = np.asarray(sched.alpha(times), dtype=np.float64)
        a[-1] = 0.0
    alphas = np.concatenate([a[::-1], [1.0]])
    return alphas, times[::-1]


def reverse_process_distribution(denoiser, alphas, times, init=None) -> np.ndarray:
    """Exact distribution over all K^L latents after walking the given alpha levels.

    ``alphas`` increases from the start level to the end level and ``times[k]``
    is the denoiser time for the transition out of level k.
    """
    K, L = denoiser.vocab.K, denoiser.L
    m = denoiser.vocab.mask_index
    _guard(K, L, len(alphas))
    states = all_states(K, L)
    p = np.zeros(K**L)
    start = np.full(L, m) if init is None else np.asarray(init)
    p[state_index(start, K)] = 1.0
    eye = np.eye(K)
    for k in range(len(alphas) - 1):
        a_t, a_s = alphas[k], alphas[k + 1]
        live = np.nonzero(p)[0]
        z = states[live]
        kern = np.exp(denoiser.log_probs(z, times[k]))  # (S, L, K)
        masked = z == m
        if a_s > a_t:
            step = ((a_s - a_t) * kern) / (1.0 - a_t)
            step[..., m] = (1.0 - a_s) / (1.0 - a_t)
        else:
            step = np.broadcast_to(eye[m], kern.shape).copy()
        kern = np.where(masked[..., None], step, eye[z])
        # joint kernel is the outer product over positions
        joint = p[live][:, None]
        for l in range(L):
            joint = (joint[:, :, None] * kern[:, l, None, :]).reshape(len(live), -1)
        p = joint.sum(axis=0)
    return p


def exact_model_distribution(denoiser, T: int, sched: NoiseSchedule | None = None) -> np.ndarray:
    alphas, times = model_levels(T, sched)
    return reverse_process_distribution(denoiser, alphas, times)


def sampler_distribution(denoiser, T: int, sched: NoiseSchedule | None = None) -> np.ndarray:
    """Exact output distribution of :func:`ancestral_sample` with T steps."""
    times, alphas = sampler_grid(T, sched)
    return reverse_process_distribution(denoiser, alphas, times)


def exact_model_nll(x, denoiser, T: int, sched: NoiseSchedule | None = None) -> float:
    """-log p_theta(x) for the T-step model, by a DP over the 2^L mask patterns consistent with x."""
    x = np.asarray(x, dtype=np.int64)
    L = x.size
    K = denoiser.vocab.K
    m = denoiser.vocab.mask_index
    _guard(K, L, T + 1)
    alphas, times = model_levels(T, sched)
    pats = mask_patterns(L)
    n = len(pats)
    zs = np.where(pats, m, x[None, :])
    code = pats @ (1 << np.arange(L - 1, -1, -1))
    p = np.zeros(n)
    p[code == (1 << L) - 1] = 1.0
    # subset relation: a pattern can only move to one of its sub-patterns
    sub = (pats[None, :, :] & ~pats[:, None, :]).sum(axis=-1) == 0  # sub[i, j]: pats[j] subset of pats[i]
    for k in range(len(alphas) - 1):
        a_t, a_s = alphas[k], alphas[k + 1]
        live = np.nonzero(p)[0]
        lp = denoiser.log_probs(zs[live], times[k])
        px = np.take_along_axis(lp, x[None, :, None].repeat(len(live), 0), axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            log_reveal = np.log(a_s - a_t) - np.log(1.0 - a_t) + px if a_s > a_t else np.full_like(px, -np.inf)
            log_stay = np.log(1.0 - a_s) - np.log(1.0 - a_t) if a_s < 1.0 else -np.inf
        new = np.zeros(n)
        for row, i in enumerate(live):
            targets = np.nonzero(sub[i])[0]
            revealed = pats[i][None, :] & ~pats[targets]
            stays = pats[targets]
            with np.errstate(invalid="ignore"):
                logw = np.where(revealed, log_reveal[row][None, :], 0.0).sum(axis=1)
                logw = logw + np.where(stays, log_stay, 0.0).sum(axis=1)
            new[targets] += p[i] * np.exp(logw)
        p = new
    final = p[code == 0][0]
    return math.inf if final <= 0 else -math.log(final)


def bound_gap_report(x, denoiser, T_list, sched: NoiseSchedule | None = None, kind: str = "rb2") -> list[dict]:
    """Exhaustive discrete NELBO and exact NLL at the same T; raises if the bound is violated."""
    rows = []
    for T in T_list:
        nelbo = diffusion_loss_discrete(ObjectiveVariant(kind, T), x, denoiser, sched)
        nll = exact_model_nll(x, denoiser, T, sched)
        gap = nelbo - nll
        rows.append({"T": int(T), "nelbo": nelbo, "nll": nll, "gap": gap})
        if gap < -BOUND_SLACK:
            raise BoundViolation(f"NELBO {nelbo} below NLL {nll} at T={T} (gap {gap})")
    return rows


def entropy_rate(p_data) -> float:
    """Entropy in nats of one sequence under an explicit distribution or generator."""
    return float(p_data.entropy())


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def empirical_distribution(samples, K: int) -> np.ndarray:
    samples = np.atleast_2d(samples)
    counts = np.bincount(state_index(samples, K), minlength=K ** samples.shape[1])
    return counts / counts.sum()
