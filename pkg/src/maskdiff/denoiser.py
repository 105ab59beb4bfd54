"""Denoising networks x_theta(z_t, t) and their SUBS output constraints.

Every denoiser returns per-position log-probabilities of shape ``(..., L, K)``
with the mask entry at -inf (zero masking) and unmasked inputs copied through
as point masses (carry-over). Three implementations are provided:

* :class:`ContextBagDenoiser` -- trainable bag of token/position embeddings,
  one tanh hidden layer, per-position readout; gradients are hand-derived.
* :class:`ExactBayesDenoiser` -- q(x^l | z_t) by enumeration over an explicit
  data distribution (tiny instances only).
* :class:`TableDenoiser` -- arbitrary random logits per latent state, used as a
  generic stand-in when fuzzing identities that must hold for any denoiser.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .categorical import Rng, Vocabulary, log_softmax
from .errors import NumericalError, ShapeError, TooLarge, UnreachableLatent

N_TIME_FEATURES = 8
CHECKPOINT_VERSION = 1
TABLE_LIMIT = 1 << 16


def subs_wrap(raw_logits, z, mask_index: int) -> np.ndarray:
    """Apply zero-masking and carry-over to raw logits of shape (..., L, K)."""
    raw = np.array(raw_logits, dtype=np.float64)
    z = np.asarray(z)
    raw[..., mask_index] = -np.inf
    out = log_softmax(raw)
    return carry_over(out, z, mask_index)


def carry_over(log_probs: np.ndarray, z, mask_index: int) -> np.ndarray:
    z = np.asarray(z)
    unmasked = z != mask_index
    if np.any(unmasked):
        K = log_probs.shape[-1]
        point = np.where(np.arange(K) == z[..., None], 0.0, -np.inf)
        log_probs = np.where(unmasked[..., None], point, log_probs)
    return log_probs


def unconstrained_wrap(raw_logits, z, mask_index: int) -> np.ndarray:
    """Softmax over all K entries (mask included) with carry-over only."""
    return carry_over(log_softmax(raw_logits), z, mask_index)


def time_features(t) -> np.ndarray:
    """Eight sinusoidal features of t at frequencies pi * 2^k, k = 0..3."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = math.pi * 2.0 ** np.arange(N_TIME_FEATURES // 2)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Denoiser:
    """Common batching logic. Subclasses implement :meth:`raw_logits` on 2-D input."""

    vocab: Vocabulary
    L: int
    time_conditioned: bool = False

    def raw_logits(self, z: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _prep(self, z, t):
        z = np.asarray(z, dtype=np.int64)
        single = z.ndim == 1
        z2 = z[None, :] if single else z
        if z2.ndim != 2 or z2.shape[1] != self.L:
            raise ShapeError(f"expected latent length {self.L}, got shape {z.shape}")
        if t is None:
            t = 0.5
        t2 = np.broadcast_to(np.asarray(t, dtype=np.float64), (z2.shape[0],))
        return z2, t2, single

    def log_probs(self, z, t=None) -> np.ndarray:
        z2, t2, single = self._prep(z, t)
        out = subs_wrap(self.raw_logits(z2, t2), z2, self.vocab.mask_index)
        return out[0] if single else out

    __call__ = log_probs

    def unconstrained_log_probs(self, z, t=None) -> np.ndarray:
        z2, t2, single = self._prep(z, t)
        out = unconstrained_wrap(self.raw_logits(z2, t2), z2, self.vocab.mask_index)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# context-bag network


@dataclass(frozen=True)
class ModelConfig:
    K: int
    L: int
    d_emb: int = 32
    d_hidden: int = 64
    time_conditioning: bool = False

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.K)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        K, L, de, dh = self.K, self.L, self.d_emb, self.d_hidden
        shapes = {
            "emb": (L, K, de),
            "w_in": (dh, de),
            "b_in": (dh,),
            "w_out": (L, K - 1, dh),
            "b_out": (L, K - 1),
        }
        if self.time_conditioning:
            shapes["w_time"] = (de, N_TIME_FEATURES)
        return shapes


def init_params(cfg: ModelConfig, rng: Rng | None = None, zero: bool = False) -> dict[str, np.ndarray]:
    shapes = cfg.shapes()
    if zero or rng is None:
        return {k: np.zeros(s) for k, s in shapes.items()}
    params = {
        "emb": rng.uniform(-0.1, 0.1, shapes["emb"]),
        "w_in": rng.uniform(-1.0, 1.0, shapes["w_in"]) / math.sqrt(cfg.d_emb),
        "b_in": np.zeros(shapes["b_in"]),
        "w_out": rng.uniform(-1.0, 1.0, shapes["w_out"]) / math.sqrt(cfg.d_hidden),
        "b_out": np.zeros(shapes["b_out"]),
    }
    if cfg.time_conditioning:
        params["w_time"] = rng.uniform(-0.1, 0.1, shapes["w_time"])
    return params


class ContextBagDenoiser(Denoiser):
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        for name, shape in cfg.shapes().items():
            if name not in params or params[name].shape != shape:
                raise ShapeError(f"parameter {name!r} missing or not of shape {shape}")
        self.cfg = cfg
        self.params = params
        self.vocab = cfg.vocab
        self.L = cfg.L
        self.time_conditioned = cfg.time_conditioning
        self._nonmask = self.vocab.data_tokens

    def _forward(self, z, t):
        p = self.params
        h0 = p["emb"][np.arange(self.L)[None, :], z].sum(axis=1)
        feats = None
        if self.time_conditioned:
            feats = time_features(t)
            h0 = h0 + feats @ p["w_time"].T
        h = np.tanh(h0 @ p["w_in"].T + p["b_in"])
        logits = np.einsum("bh,lkh->blk", h, p["w_out"]) + p["b_out"]
        return logits, (h0, h, feats)

    def raw_logits(self, z, t):
        logits, _ = self._forward(z, t)
        raw = np.zeros(logits.shape[:2] + (self.vocab.K,))
        raw[..., self._nonmask] = logits
        return raw

    def loss_and_grad(self, x, z, t, weight):
        """Weighted masked log-likelihood and its gradient.

        ``loss = sum_b weight_b * sum_l log <x_theta^l(z_b, t_b), x_b^l>``. With
        the (negative) NELBO weights this is the nonnegative quantity to
        minimise. Carry-over positions contribute exactly zero to both outputs.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        z = np.atleast_2d(np.asarray(z, dtype=np.int64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (z.shape[0],))
        weight = np.broadcast_to(np.asarray(weight, dtype=np.float64), (z.shape[0],))
        if x.shape != z.shape or z.shape[1] != self.L:
            raise ShapeError(f"x and z must both have shape (B, {self.L})")
        p = self.params
        logits, (h0, h, feats) = self._forward(z, t)
        logp = log_softmax(logits)
        masked = z == self.vocab.mask_index
        # data token ids -> column in the K-1 non-mask logits
        col = np.searchsorted(self._nonmask, x)
        picked = np.take_along_axis(logp, col[..., None], axis=-1)[..., 0]
        loss = float(np.sum(weight[:, None] * np.where(masked, picked, 0.0)))
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss}")

        target = np.zeros_like(logp)
        np.put_along_axis(target, col[..., None], 1.0, axis=-1)
        g_logits = (target - np.exp(logp)) * (weight[:, None] * masked)[..., None]

        grads = {
            "w_out": np.einsum("blk,bh->lkh", g_logits, h),
            "b_out": g_logits.sum(axis=0),
        }
        g_h = np.einsum("blk,lkh->bh", g_logits, p["w_out"])
        g_a = g_h * (1.0 - h * h)
        grads["w_in"] = g_a.T @ h0
        grads["b_in"] = g_a.sum(axis=0)
        g_h0 = g_a @ p["w_in"]
        g_emb = np.zeros_like(p["emb"])
        pos = np.broadcast_to(np.arange(self.L)[None, :], z.shape)
        np.add.at(g_emb, (pos.ravel(), z.ravel()), np.repeat(g_h0, self.L, axis=0))
        grads["emb"] = g_emb
        if self.time_conditioned:
            grads["w_time"] = g_h0.T @ feats
        return loss, grads


def loss_and_grad(denoiser: ContextBagDenoiser, x, z, t, weight):
    return denoiser.loss_and_grad(x, z, t, weight)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def warmup_lr(lr: float, step: int, warmup_steps: int) -> float:
    if warmup_steps <= 0:
        return lr
    return lr * min(1.0, step / warmup_steps)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, warmup_steps: int = 0):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; inputs are not mutated."""
    lr_now = warmup_lr(lr, state.step, warmup_steps)
    n = state.step + 1
    new = {}
    for name, value in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - beta1**n)
        v_hat = v / (1.0 - beta2**n)
        new[name] = value - lr_now * m_hat / (np.sqrt(v_hat) + eps)
    state.step = n
    return new, state


def save_checkpoint(path, cfg: ModelConfig, params, schedule: dict | None = None, seed: int | None = None,
                    extra: dict | None = None) -> None:
    doc = {
        "header": {
            "format_version": CHECKPOINT_VERSION,
            **asdict(cfg),
            "schedule": schedule or {},
            "seed": seed,
        },
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(params.items())
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Return ``(denoiser, header)`` from a checkpoint written by :func:`save_checkpoint`."""
    doc = json.loads(Path(path).read_text())
    header = doc["header"]
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    cfg = ModelConfig(
        K=header["K"], L=header["L"], d_emb=header["d_emb"], d_hidden=header["d_hidden"],
        time_conditioning=header["time_conditioning"],
    )
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return ContextBagDenoiser(cfg, params), header


# ---------------------------------------------------------------------------
# oracle denoisers


def _state_index(z: np.ndarray, K: int) -> np.ndarray:
    L = z.shape[-1]
    return z @ (K ** np.arange(L - 1, -1, -1))


class TableDenoiser(Denoiser):
    """Independent random logits for every one of the K^L latent states."""

    def __init__(self, vocab: Vocabulary, L: int, rng: Rng, scale: float = 2.0, time_conditioned: bool = False):
        if vocab.K**L > TABLE_LIMIT:
            raise TooLarge(f"K^L = {vocab.K ** L} exceeds table limit {TABLE_LIMIT}")
        self.vocab = vocab
        self.L = L
        self.table = scale * rng.normal(size=(vocab.K**L, L, vocab.K))
        self.time_conditioned = time_conditioned
        if time_conditioned:
            self.time_table = scale * rng.normal(size=(vocab.K**L, L, vocab.K))

    def raw_logits(self, z, t):
        idx = _state_index(z, self.vocab.K)
        out = self.table[idx]
        if self.time_conditioned:
            out = out + np.sin(math.pi * t)[:, None, None] * self.time_table[idx]
        return out


class FixedDenoiser(Denoiser):
    """Same logits at every position regardless of the input."""

    def __init__(self, vocab: Vocabulary, L: int, logits):
        self.vocab = vocab
        self.L = L
        self.logits = np.broadcast_to(np.asarray(logits, dtype=np.float64), (L, vocab.K)).copy()

    def raw_logits(self, z, t):
        return np.broadcast_to(self.logits, (z.shape[0],) + self.logits.shape)


class ExactBayesDenoiser(Denoiser):
    """x_theta^l(z) = q(x^l | unmasked part of z) under an explicit data distribution.

    The masking likelihood is identical for every data sequence consistent with
    z, so the posterior does not depend on t.
    """

    def __init__(self, p_data):
        self.p_data = p_data
        self.vocab = p_data.vocab
        self.L = p_data.L
        seqs = p_data.sequences
        onehots = np.zeros(seqs.shape + (self.vocab.K,))
        np.put_along_axis(onehots, seqs[..., None], 1.0, axis=-1)
        self._seqs = seqs
        self._onehots = onehots.reshape(len(seqs), -1)

    def posterior(self, z) -> np.ndarray:
        z2 = np.atleast_2d(np.asarray(z, dtype=np.int64))
        m = self.vocab.mask_index
        consistent = np.all((self._seqs[None, :, :] == z2[:, None, :]) | (z2[:, None, :] == m), axis=-1)
        w = consistent * self.p_data.probs[None, :]
        total = w.sum(axis=1)
        if np.any(total <= 0):
            raise UnreachableLatent("latent is inconsistent with the support of the data distribution")
        post = (w @ self._onehots).reshape(z2.shape + (self.vocab.K,)) / total[:, None, None]
        return post

    def log_probs(self, z, t=None):
        z2, _, single = self._prep(z, t)
        with np.errstate(divide="ignore"):
            out = np.log(self.posterior(z2))
        out[..., self.vocab.mask_index] = -np.inf
        out = carry_over(out, z2, self.vocab.mask_index)
        return out[0] if single else out

    __call__ = log_probs

    def raw_logits(self, z, t):
        with np.errstate(divide="ignore"):
            return np.log(self.posterior(z))
