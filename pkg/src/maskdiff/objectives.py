"""Negative ELBO objectives for masked diffusion.

Discrete-time variants (all share the same grid and reconstruction term):

* ``d3pm_full``        -- the unsimplified two-term KL per masked position.
* ``rb2``              -- zero-masking collapses the KL to a weighted log-likelihood.
* ``rb2_rb1_discrete`` -- as rb2 but without the explicit ``<z_t, m>`` factor;
  carry-over makes the unmasked terms vanish on their own.

The continuous-time bound is evaluated either by Monte Carlo over (t, z_t) or
by Gauss-Legendre quadrature in gamma = log(1 - alpha) with the exact
expectation over mask patterns (tiny L only).

Sign convention: every value returned here is a nonnegative NELBO in nats,
to be minimised.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .categorical import Rng, Vocabulary
from .errors import InvalidSteps, NumericalError, TooLarge
from .schedules import NoiseSchedule, discrete_alpha_grid, discrete_times

DISCRETE_KINDS = ("d3pm_full", "rb2", "rb2_rb1_discrete")
KINDS = DISCRETE_KINDS + ("continuous",)
PATTERN_LIMIT = 1 << 16
MAX_T_EXHAUSTIVE = 1024
N_GAUSS_NODES = 64


@dataclass(frozen=True)
class ObjectiveVariant:
    kind: str = "continuous"
    T: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective {self.kind!r}; expected one of {KINDS}")
        if self.kind != "continuous":
            if self.T is None or int(self.T) != self.T or self.T < 1:
                raise InvalidSteps(f"discrete objective needs T >= 1, got {self.T}")


@dataclass
class NelboEstimate:
    value: float
    per_datapoint_variance: float
    n_samples: int

    @property
    def stderr(self) -> float:
        if self.n_samples <= 1:
            return 0.0
        return math.sqrt(self.per_datapoint_variance / self.n_samples)


# ---------------------------------------------------------------------------
# helpers


def mask_patterns(L: int) -> np.ndarray:
    """All 2^L boolean mask patterns, shape (2^L, L); row i has bit l = position l masked."""
    if 1 << L > PATTERN_LIMIT:
        raise TooLarge(f"2^L = {1 << L} patterns exceed {PATTERN_LIMIT}")
    return np.array(list(itertools.product([False, True], repeat=L)), dtype=bool).reshape(1 << L, L)


def pattern_latents(x, vocab: Vocabulary):
    x = np.asarray(x, dtype=np.int64)
    pats = mask_patterns(x.size)
    return np.where(pats, vocab.mask_index, x[None, :]), pats


def pattern_weights(u, pats: np.ndarray) -> np.ndarray:
    """Probability of each pattern when every position is masked independently with prob u."""
    m = pats.sum(axis=1)
    L = pats.shape[1]
    u = np.asarray(u, dtype=np.float64)
    return u[..., None] ** m * (1.0 - u[..., None]) ** (L - m)


def _picked(log_probs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log <x_theta^l, x^l> for each row/position, shape (..., L)."""
    idx = np.broadcast_to(x, log_probs.shape[:-1])[..., None]
    return np.take_along_axis(log_probs, idx, axis=-1)[..., 0]


def _grid(T: int, sched: NoiseSchedule | None):
    """(alphas, times) for levels t(0)..t(T); the last alpha is forced to 0 so the prior term vanishes."""
    times = discrete_times(T)
    if sched is None:
        alphas = discrete_alpha_grid(T)
    else:
        alphas = np.asarray(sched.alpha(times), dtype=np.float64)
        alphas[-1] = 0.0
    return alphas, times


def low_discrepancy_times(N: int, rng: Rng, eps: float | None = None) -> np.ndarray:
    """One uniform draw from each stratum [(i-1)/N, i/N), randomly assigned to batch slots."""
    if N < 1:
        raise ValueError("N must be >= 1")
    t = (np.arange(N) + rng.random(N)) / N
    t = t[rng.permutation(N)]
    if eps is not None:
        t = np.clip(t, eps, 1.0 - eps)
    return t


def iid_times(N: int, rng: Rng, eps: float | None = None) -> np.ndarray:
    t = rng.random(N)
    if eps is not None:
        t = np.clip(t, eps, 1.0 - eps)
    return t


# ---------------------------------------------------------------------------
# per-position KL terms


def kl_term_unsimplified(xout, x: int, z_t: int, alpha_s: float, alpha_t: float, mask_index: int) -> float:
    """Two-term KL between the masked posterior and the general-form model posterior.

    ``xout`` holds log-probabilities over K entries. They need not satisfy zero
    masking: ``mu = <x_theta, m>`` enters the model posterior explicitly.
    """
    if z_t != mask_index:
        return 0.0
    lp = np.asarray(xout, dtype=np.float64)
    return float(_kl_unsimplified_vec(lp[..., mask_index], lp[..., x], alpha_s, alpha_t))


def _kl_unsimplified_vec(log_mu, log_px, alpha_s, alpha_t):
    mu = np.exp(log_mu)
    one_t = 1.0 - alpha_t
    one_s = 1.0 - alpha_s
    log_den_t = np.log(alpha_t * mu + one_t)
    first = (alpha_s - alpha_t) / one_t * (log_den_t - math.log(one_t) - log_px)
    if one_s > 0:
        second = one_s / one_t * (math.log(one_s) + log_den_t - math.log(one_t) - np.log(alpha_s * mu + one_s))
    else:
        second = 0.0
    return first + second


def _transition_cost(kind, log_probs, x, z, alpha_s, alpha_t, mask_index):
    """Sum over positions of the per-transition loss, one value per row of ``z``."""
    masked = z == mask_index
    lpx = _picked(log_probs, x)
    if kind == "d3pm_full":
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = _kl_unsimplified_vec(log_probs[..., mask_index], lpx, alpha_s, alpha_t)
        return np.where(masked, kl, 0.0).sum(axis=-1)
    coef = (alpha_t - alpha_s) / (1.0 - alpha_t)
    if kind == "rb2":
        return (coef * np.where(masked, lpx, 0.0)).sum(axis=-1)
    # rb2_rb1: no explicit mask indicator; carry-over gives log 1 = 0 on unmasked positions
    return (coef * lpx).sum(axis=-1)


def _recon_cost(log_probs, x):
    return -_picked(log_probs, x).sum(axis=-1)


# ---------------------------------------------------------------------------
# discrete-time NELBO


def _outputs(denoiser, z, t, unconstrained: bool):
    if unconstrained:
        return denoiser.unconstrained_log_probs(z, t)
    return denoiser.log_probs(z, t)


def reconstruction_loss(x, denoiser, T, sched: NoiseSchedule | None = None, rng: Rng | None = None,
                        exhaustive: bool = True, unconstrained: bool = False) -> float:
    """-log p_theta(x | z_{t(0)}) averaged over z_{t(0)} ~ Cat(alpha_{t(0)} x + (1 - alpha_{t(0)}) m)."""
    if T == math.inf:
        return 0.0
    x = np.asarray(x, dtype=np.int64)
    alphas, times = _grid(T, sched)
    vocab = denoiser.vocab
    if exhaustive:
        zs, pats = pattern_latents(x, vocab)
        w = pattern_weights(1.0 - alphas[0], pats)
        lp = _outputs(denoiser, zs, times[0], unconstrained)
        return float(w @ _recon_cost(lp, x))
    z = np.where(rng.random(x.size) < 1.0 - alphas[0], vocab.mask_index, x)
    return float(_recon_cost(_outputs(denoiser, z, times[0], unconstrained), x))


def prior_loss(x=None, T=None) -> float:
    """KL between q(z_{t(T)} | x) and p(z_{t(T)}); both are the all-mask point mass."""
    return 0.0


def discrete_nelbo_terms(variant: ObjectiveVariant, x, denoiser, sched: NoiseSchedule | None = None,
                         rng: Rng | None = None, exhaustive: bool = True, unconstrained: bool | None = None):
    """Return ``(diffusion, reconstruction)`` for a discrete variant.

    Exhaustive mode sums over every transition and every mask pattern with its
    exact probability. Monte Carlo mode draws one transition i uniformly and one
    latent, scaling the transition term by T.
    """
    if variant.kind not in DISCRETE_KINDS:
        raise ValueError(f"{variant.kind} is not a discrete objective")
    if unconstrained is None:
        unconstrained = variant.kind == "d3pm_full"
    T = int(variant.T)
    x = np.asarray(x, dtype=np.int64)
    vocab = denoiser.vocab
    m = vocab.mask_index
    alphas, times = _grid(T, sched)
    if exhaustive:
        if T > MAX_T_EXHAUSTIVE:
            raise TooLarge(f"exhaustive evaluation limited to T <= {MAX_T_EXHAUSTIVE}")
        zs, pats = pattern_latents(x, vocab)
        time_free = not denoiser.time_conditioned
        cached = _outputs(denoiser, zs, times[0], unconstrained) if time_free else None
        diffusion = 0.0
        for i in range(1, T + 1):
            a_t, a_s = alphas[i], alphas[i - 1]
            lp = cached if time_free else _outputs(denoiser, zs, times[i], unconstrained)
            w = pattern_weights(1.0 - a_t, pats)
            diffusion += float(w @ _transition_cost(variant.kind, lp, x, zs, a_s, a_t, m))
        recon_w = pattern_weights(1.0 - alphas[0], pats)
        lp0 = cached if time_free else _outputs(denoiser, zs, times[0], unconstrained)
        recon = float(recon_w @ _recon_cost(lp0, x))
    else:
        i = int(rng.integers(1, T + 1))
        a_t, a_s = alphas[i], alphas[i - 1]
        z = np.where(rng.random(x.size) < 1.0 - a_t, m, x)
        lp = _outputs(denoiser, z, times[i], unconstrained)
        diffusion = T * float(_transition_cost(variant.kind, lp, x, z, a_s, a_t, m))
        recon = reconstruction_loss(x, denoiser, T, sched, rng, exhaustive=False, unconstrained=unconstrained)
    if not (np.isfinite(diffusion) or diffusion == math.inf):
        raise NumericalError(f"non-finite discrete NELBO {diffusion}")
    return diffusion, recon


def diffusion_loss_discrete(variant: ObjectiveVariant, x, denoiser, sched: NoiseSchedule | None = None,
                            rng: Rng | None = None, exhaustive: bool = True, unconstrained: bool | None = None) -> float:
    """Discrete-time NELBO of one sequence: diffusion + reconstruction + prior (= 0)."""
    diffusion, recon = discrete_nelbo_terms(variant, x, denoiser, sched, rng, exhaustive, unconstrained)
    return diffusion + recon + prior_loss()


def pattern_costs(x, denoiser, t=None):
    """-sum_{masked l} log <x_theta^l(z_P), x^l> for every mask pattern P (time-free shortcut)."""
    x = np.asarray(x, dtype=np.int64)
    zs, pats = pattern_latents(x, denoiser.vocab)
    lp = denoiser.log_probs(zs, 0.5 if t is None else t)
    return -np.where(pats, _picked(lp, x), 0.0).sum(axis=-1), pats


def discrete_nelbo_from_costs(costs, pats, T: int, sched: NoiseSchedule | None = None) -> float:
    """rb2 NELBO for a time-free denoiser given its per-pattern costs."""
    alphas, _ = _grid(T, sched)
    u = 1.0 - alphas
    total = 0.0
    for i in range(1, T + 1):
        total += (u[i] - u[i - 1]) / u[i] * float(pattern_weights(u[i], pats) @ costs)
    total += float(pattern_weights(u[0], pats) @ costs)
    return total


# ---------------------------------------------------------------------------
# continuous-time NELBO


def neg_weight_of_gamma(sched: NoiseSchedule, g):
    """-alpha'(t)/(1 - alpha(t)) at the unclamped time whose gamma is ``g``."""
    u = np.exp(np.asarray(g, dtype=np.float64))
    if sched.kind == "log_linear":
        return 1.0 / u
    if sched.kind == "cosine":
        return 0.5 * math.pi * np.sqrt(u * (2.0 - u)) / u
    if sched.kind == "cosine_squared":
        return math.pi * np.sqrt(u * (1.0 - u)) / u
    return sched.sigma_max * (1.0 - u) / u


def gamma_bounds(sched: NoiseSchedule) -> tuple[float, float]:
    """Integration range in gamma: [log eps, 0] for every schedule.

    The lower limit is shared so that the schedule-invariance comparison
    integrates the identical function over the identical range.
    """
    return math.log(sched.eps), 0.0


def gauss_legendre(a: float, b: float, n: int = N_GAUSS_NODES):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * nodes + 0.5 * (b + a), 0.5 * (b - a) * weights


def _quadrature(x, denoiser, sched, n_nodes):
    x = np.asarray(x, dtype=np.int64)
    zs, pats = pattern_latents(x, denoiser.vocab)
    lo, hi = gamma_bounds(sched)
    g, gw = gauss_legendre(lo, hi, n_nodes)
    u = np.exp(g)
    W = pattern_weights(u, pats)  # (n_nodes, 2^L)
    if denoiser.time_conditioned:
        t_nodes = sched.t_of_gamma(g, strict=False)
        costs = np.empty((n_nodes, len(zs)))
        for k, t in enumerate(np.atleast_1d(t_nodes)):
            lp = denoiser.log_probs(zs, t)
            costs[k] = -np.where(pats, _picked(lp, x), 0.0).sum(axis=-1)
    else:
        c, _ = pattern_costs(x, denoiser)
        return continuous_from_costs(c, pats, sched, n_nodes)
    first = (W * costs).sum(axis=1)
    second = (W * costs**2).sum(axis=1)
    mean = float(gw @ first)
    second_moment = float(gw @ (neg_weight_of_gamma(sched, g) * second))
    return mean, max(second_moment - mean * mean, 0.0)


def continuous_from_costs(costs, pats, sched: NoiseSchedule, n_nodes: int = N_GAUSS_NODES):
    """(mean, single-sample variance) of the continuous NELBO for a time-free denoiser's pattern costs."""
    lo, hi = gamma_bounds(sched)
    g, gw = gauss_legendre(lo, hi, n_nodes)
    W = pattern_weights(np.exp(g), pats)
    mean = float(gw @ (W @ costs))
    second_moment = float(gw @ (neg_weight_of_gamma(sched, g) * (W @ costs**2)))
    return mean, max(second_moment - mean * mean, 0.0)


def nelbo_continuous(x, denoiser, sched: NoiseSchedule, mode: str = "quadrature", n: int = N_GAUSS_NODES,
                     rng: Rng | None = None, sampler: str = "low_discrepancy") -> NelboEstimate:
    """Continuous-time NELBO of one sequence.

    ``quadrature``: Gauss-Legendre in gamma with the exact pattern expectation;
    the reported variance is the exact variance of the single-sample (t, z_t)
    estimator under t ~ U[0, 1], scored as zero where gamma(t) < log eps,
    computed by the same quadrature.

    ``mc``: ``n`` single-sample estimates with times from the chosen sampler.
    """
    if mode == "quadrature":
        mean, var = _quadrature(x, denoiser, sched, n)
        return NelboEstimate(mean, var, n)
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    vals = mc_samples(x, denoiser, sched, n, rng, sampler)
    return NelboEstimate(float(vals.mean()), float(vals.var(ddof=1)) if n > 1 else 0.0, n)


def mc_samples(x, denoiser, sched: NoiseSchedule, n: int, rng: Rng, sampler: str = "low_discrepancy") -> np.ndarray:
    """``n`` one-sample estimates for the same sequence (one t and one z_t each)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    return batch_mc_values(np.repeat(x, n, axis=0), denoiser, sched, rng, sampler)


def batch_mc_values(xs, denoiser, sched: NoiseSchedule, rng: Rng, sampler: str = "low_discrepancy") -> np.ndarray:
    """One continuous-NELBO estimate per row of ``xs`` using a single batch of times."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
    B = len(xs)
    draw = low_discrepancy_times if sampler == "low_discrepancy" else iid_times
    t = draw(B, rng, sched.eps)
    a = sched.alpha(t)
    z = np.where(rng.random(xs.shape) < (1.0 - a)[:, None], denoiser.vocab.mask_index, xs)
    lp = denoiser.log_probs(z, t)
    lpx = np.where(z == denoiser.vocab.mask_index, _picked(lp, xs), 0.0).sum(axis=1)
    vals = sched.weight(t) * lpx
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite Monte Carlo NELBO value")
    return vals


def any_order_nll(x, denoiser) -> float:
    """Average over all L! unmasking orders of the chain-rule NLL under a time-free denoiser.

    For a time-free denoiser this equals the continuous-time NELBO; it is
    computed by walking every order explicitly, independent of the quadrature.
    """
    x = np.asarray(x, dtype=np.int64)
    L = x.size
    if L > 7:
        raise TooLarge("order enumeration limited to L <= 7")
    m = denoiser.vocab.mask_index
    total = 0.0
    orders = list(itertools.permutations(range(L)))
    for order in orders:
        z = np.full(L, m)
        for pos in order:
            total -= float(denoiser.log_probs(z, 0.5)[pos, x[pos]])
            z[pos] = x[pos]
    return total / len(orders)


def dataset_nelbo(xs, denoiser, variant: ObjectiveVariant, sched: NoiseSchedule, estimator: str = "quadrature",
                  n_samples: int = 1, rng: Rng | None = None):
    """Per-sequence NELBO values (nats) for every row of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
    out = np.empty(len(xs))
    if variant.kind == "continuous":
        if estimator == "quadrature":
            for i, x in enumerate(xs):
                out[i] = nelbo_continuous(x, denoiser, sched, "quadrature").value
        else:
            acc = np.zeros(len(xs))
            for _ in range(n_samples):
                acc += batch_mc_values(xs, denoiser, sched, rng)
            out = acc / n_samples
        return out
    exhaustive = estimator == "quadrature"
    for i, x in enumerate(xs):
        if exhaustive:
            out[i] = diffusion_loss_discrete(variant, x, denoiser, sched)
        else:
            out[i] = np.mean([diffusion_loss_discrete(variant, x, denoiser, sched, rng, exhaustive=False)
                              for _ in range(n_samples)])
    return out
