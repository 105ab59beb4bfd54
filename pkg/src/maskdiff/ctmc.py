"""Continuous-time Markov chain view of the masked process.

Matrices are dense K x K with entry (y', y) the rate of the jump y -> y'.
"""

from __future__ import annotations

import math

import numpy as np

from .categorical import Rng, Vocabulary, log_softmax, onehot
from .errors import UnreachableLatent
from .forward import masked_prior
from .schedules import NoiseSchedule


def forward_rate(t, sched: NoiseSchedule, vocab: Vocabulary) -> np.ndarray:
    """R_t = (alpha'/alpha) (I - m 1^T): every unmasked token flows into the mask."""
    ratio = -float(sched.sigma_prime(t))
    K = vocab.K
    return ratio * (np.eye(K) - np.outer(onehot(vocab.mask_index, K), np.ones(K)))


def concrete_score(z_t: int, xout, alpha_t: float, mask_index: int, one_minus_alpha: float | None = None) -> np.ndarray:
    """Model score s(z_t)_y approximating q_t(y | x) / q_t(z_t | x).

    ``xout`` is a SUBS-constrained log-probability vector for the position.
    Pass ``one_minus_alpha`` when it is known more accurately than 1 - alpha_t.
    """
    lp = np.asarray(xout, dtype=np.float64)
    K = lp.size
    oma = 1.0 - alpha_t if one_minus_alpha is None else one_minus_alpha
    if z_t == mask_index:
        s = alpha_t / oma * np.exp(lp)
        s[mask_index] = 1.0
        return s
    s = np.zeros(K)
    s[mask_index] = oma / alpha_t
    s[z_t] = 1.0
    return s


def reverse_rate(y_prime: int, y: int, xout, t, sched: NoiseSchedule, mask_index: int) -> float:
    """Reverse-time rate of y -> y': -(alpha'/(1-alpha)) [y']^T (x_theta - m) <y, m>."""
    if y != mask_index:
        return 0.0
    lp = np.asarray(xout, dtype=np.float64)
    coef = -float(sched.weight(t))
    target = -1.0 if y_prime == mask_index else math.exp(lp[y_prime])
    return coef * target


def reverse_rate_matrix(xout, t, sched: NoiseSchedule, mask_index: int) -> np.ndarray:
    """Dense reverse generator; only the mask column is nonzero."""
    K = np.asarray(xout).size
    R = np.zeros((K, K))
    for yp in range(K):
        R[yp, mask_index] = reverse_rate(yp, mask_index, xout, t, sched, mask_index)
    return R


def _K_fn(a: np.ndarray) -> np.ndarray:
    # K(a) = a log a - a with K(0) = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)) - a, 0.0)


def sedd_nelbo_integrand(y: int, x: int, score, t, sched: NoiseSchedule, vocab: Vocabulary) -> float:
    """Score-entropy integrand sum_{y' != y} R_t(y, y') (s_y' - a log s_y' + K(a)), a = q_t(y'|x)/q_t(y|x)."""
    alpha = float(sched.alpha(t))
    q = alpha * onehot(x, vocab.K) + float(sched.one_minus_alpha(t)) * masked_prior(vocab)
    if q[y] <= 0:
        raise UnreachableLatent(f"y={y} unreachable from x={x}")
    R = forward_rate(t, sched, vocab)
    s = np.asarray(score, dtype=np.float64)
    total = 0.0
    for yp in range(vocab.K):
        if yp == y:
            continue
        rate = R[y, yp]
        if rate == 0.0:
            continue
        a = q[yp] / q[y]
        with np.errstate(divide="ignore"):
            log_s = math.log(s[yp]) if s[yp] > 0 else -math.inf
        cross = a * log_s if a > 0 else 0.0
        total += rate * (s[yp] - cross + float(_K_fn(np.array(a))))
    return total


def mdlm_integrand(y: int, x: int, xout, t, sched: NoiseSchedule, mask_index: int) -> float:
    """(alpha'/(1-alpha)) log <x_theta, x> <y, m>."""
    if y != mask_index:
        return 0.0
    return float(sched.weight(t)) * float(np.asarray(xout)[x])


def equivalence_report(denoiser_or_none, sched: NoiseSchedule, n_cases: int, rng: Rng,
                       vocab: Vocabulary | None = None, t_range=None) -> dict:
    """Compare the score-entropy and MDLM integrands on random cases.

    Each case draws (x, y in {x, m}, t) and a position output: either from
    ``denoiser_or_none`` applied to a random latent, or a random SUBS
    softmax when no denoiser is given. Also checks the reverse rate against
    score times forward rate.
    """
    if denoiser_or_none is not None:
        vocab = denoiser_or_none.vocab
    if t_range is None:
        t_range = (sched.eps, 1.0 - sched.eps)
    m = vocab.mask_index
    data = vocab.data_tokens
    cases = []
    max_dev = 0.0
    max_rate_dev = 0.0
    for _ in range(n_cases):
        x = int(data[rng.integers(0, data.size)])
        y = m if rng.random() < 0.5 else x
        t = float(t_range[0] + (t_range[1] - t_range[0]) * rng.random())
        alpha = float(sched.alpha(t))
        if alpha == 0.0:
            # an unmasked latent is unreachable once alpha underflows
            y = m
        if denoiser_or_none is None:
            logits = rng.normal(size=vocab.K) * 2.0
            logits[m] = -np.inf
            lp = log_softmax(logits)
        else:
            L = denoiser_or_none.L
            z = np.where(rng.random(L) < 0.5, m, data[rng.integers(0, data.size, size=L)])
            z[0] = y
            lp = denoiser_or_none.log_probs(z, t)[0]
        score = concrete_score(y, lp, alpha, m, float(sched.one_minus_alpha(t)))
        sedd = sedd_nelbo_integrand(y, x, score, t, sched, vocab)
        mdlm = mdlm_integrand(y, x, lp, t, sched, m)
        dev = abs(sedd - mdlm)
        # reverse rate vs score * forward rate, off-diagonal entries out of y
        R = forward_rate(t, sched, vocab)
        rate_dev = 0.0
        for yp in range(vocab.K):
            if yp != y:
                lhs = reverse_rate(yp, y, lp, t, sched, m)
                rhs = score[yp] * R[y, yp]
                rate_dev = max(rate_dev, abs(lhs - rhs))
        max_dev = max(max_dev, dev)
        max_rate_dev = max(max_rate_dev, rate_dev)
        cases.append({"x": x, "y": int(y), "t": t, "sedd": sedd, "mdlm": mdlm, "deviation": dev, "rate_deviation": rate_dev})
    return {"max_abs_deviation": max_dev, "max_rate_deviation": max_rate_dev, "n_cases": n_cases, "cases": cases}
