"""Training loop: sample times and masks, weight the masked log-likelihood, take an Adam step."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .categorical import Rng, check_tokens
from .denoiser import AdamState, ContextBagDenoiser, ModelConfig, adam_step, init_params
from .errors import ConfigError, NumericalError, ShapeError
from .objectives import ObjectiveVariant, _grid, iid_times, low_discrepancy_times
from .schedules import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 64
    lr: float = 3e-3
    warmup_steps: int = 100
    seed: int = 0
    log_every: int = 100
    time_sampler: str = "low_discrepancy"


@dataclass
class TrainResult:
    denoiser: ContextBagDenoiser
    trace: list = field(default_factory=list)


def training_batch(corpus: np.ndarray, B: int, rng: Rng, sched: NoiseSchedule, variant: ObjectiveVariant,
                   time_sampler: str = "low_discrepancy", mask_index: int = None):
    """Draw (x, z_t, t, weight) for one step. Weights are negative; the loss they produce is >= 0."""
    x = corpus[rng.integers(0, len(corpus), size=B)]
    if variant.kind == "continuous":
        draw = low_discrepancy_times if time_sampler == "low_discrepancy" else iid_times
        t = draw(B, rng, sched.eps)
        alpha = sched.alpha(t)
        weight = sched.weight(t)
    elif variant.kind in ("rb2", "rb2_rb1_discrete"):
        alphas, times = _grid(variant.T, sched)
        i = rng.integers(1, variant.T + 1, size=B)
        alpha, a_s = alphas[i], alphas[i - 1]
        t = times[i]
        weight = variant.T * (alpha - a_s) / (1.0 - alpha)
    else:
        raise ConfigError(f"training is not supported for objective {variant.kind!r}")
    z = np.where(rng.random(x.shape) < (1.0 - alpha)[:, None], mask_index, x)
    return x, z, t, weight / B


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, corpus, sched: NoiseSchedule | None = None,
          variant: ObjectiveVariant | None = None, params=None) -> TrainResult:
    """Minimise the NELBO estimate with Adam. Deterministic given ``train_cfg.seed``.

    The trace holds the batch-mean NELBO estimate (nats per sequence) at every step.
    """
    sched = sched or NoiseSchedule("log_linear")
    variant = variant or ObjectiveVariant("continuous")
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.int64))
    if corpus.shape[1] != model_cfg.L:
        raise ShapeError(f"corpus length {corpus.shape[1]} != model L {model_cfg.L}")
    vocab = model_cfg.vocab
    check_tokens(corpus, vocab, data=True)
    root = Rng(train_cfg.seed)
    if params is None:
        params = init_params(model_cfg, root.child(0))
    batch_rng = root.child(1)
    state = AdamState()
    denoiser = ContextBagDenoiser(model_cfg, params)
    trace = []
    for step in range(train_cfg.steps):
        x, z, t, w = training_batch(corpus, train_cfg.batch_size, batch_rng, sched, variant,
                                    train_cfg.time_sampler, vocab.mask_index)
        try:
            loss, grads = denoiser.loss_and_grad(x, z, t, w)
        except NumericalError as exc:
            raise NumericalError(f"step {step}: {exc}") from exc
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalError(f"step {step}: non-finite gradient")
        trace.append(loss)
        if train_cfg.log_every and step % train_cfg.log_every == 0:
            log.info("step %d loss %.4f", step, loss)
        params, state = adam_step(params, grads, state, train_cfg.lr, warmup_steps=train_cfg.warmup_steps)
        denoiser = ContextBagDenoiser(model_cfg, params)
    return TrainResult(denoiser, trace)
