"""Masked (absorbing-state) discrete diffusion with exact tiny-scale oracles."""

from .categorical import Rng, TokenSeq, Vocabulary, log_prob_of, sample_categorical, validate_simplex
from .corpus import DataDistribution, Markov1Generator, TemplatedGenerator, UniformGenerator
from .denoiser import (ContextBagDenoiser, ExactBayesDenoiser, FixedDenoiser, ModelConfig, TableDenoiser, adam_step,
                       init_params, subs_wrap)
from .forward import marginal, posterior_general, posterior_masked, transition
from .objectives import (ObjectiveVariant, diffusion_loss_discrete, kl_term_unsimplified, low_discrepancy_times,
                         nelbo_continuous)
from .oracle import bound_gap_report, entropy_rate, exact_model_nll
from .sampler import ancestral_sample, reverse_step, semi_ar_generate
from .schedules import NoiseSchedule, discrete_alpha_grid

__version__ = "0.1.0"
