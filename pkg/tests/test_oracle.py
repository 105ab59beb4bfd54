import math

import numpy as np
import pytest

from maskdiff.categorical import Rng, Vocabulary
from maskdiff.corpus import DataDistribution, Markov1Generator, UniformGenerator, default_markov_table
from maskdiff.denoiser import ExactBayesDenoiser, FixedDenoiser, TableDenoiser
from maskdiff.errors import BoundViolation, TooLarge
from maskdiff.objectives import ObjectiveVariant, diffusion_loss_discrete
from maskdiff.oracle import (all_states, bound_gap_report, entropy_rate, exact_model_distribution, exact_model_nll,
                             model_levels, reverse_process_distribution, state_index, total_variation)
from maskdiff.schedules import NoiseSchedule


def test_state_indexing():
    s = all_states(3, 2)
    assert s.shape == (9, 2)
    assert np.array_equal(state_index(s, 3), np.arange(9))


def test_model_levels():
    a, t = model_levels(3)
    assert np.allclose(a, [0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(t, [1.0, 0.75, 0.5, 0.25])


def test_uniform_single_token_nll_is_log_two():
    v = Vocabulary(3)
    d = FixedDenoiser(v, 1, [0.0, 0.0, 0.0])
    for T in (1, 3, 10):
        assert exact_model_nll(np.array([0]), d, T) == pytest.approx(math.log(2), abs=1e-12)


def test_point_mass_nll_is_zero():
    v = Vocabulary(3)
    d = FixedDenoiser(v, 2, [50.0, -50.0, 0.0])
    assert exact_model_nll(np.array([0, 0]), d, 4) == pytest.approx(0.0, abs=1e-12)
    assert exact_model_nll(np.array([0, 1]), d, 4) > 50


@pytest.mark.parametrize("seed", range(3))
def test_mass_conservation_and_support(seed):
    v = Vocabulary(3)
    d = TableDenoiser(v, 3, Rng(seed))
    p = exact_model_distribution(d, 6, NoiseSchedule("cosine"))
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    states = all_states(3, 3)
    assert np.all(p[np.any(states == 2, axis=1)] == 0)


def test_pattern_dp_agrees_with_full_dp():
    v = Vocabulary(4)
    d = TableDenoiser(v, 3, Rng(4))
    p = exact_model_distribution(d, 5)
    for x in ([0, 1, 2], [2, 2, 0], [1, 1, 1]):
        assert exact_model_nll(np.array(x), d, 5) == pytest.approx(-math.log(p[state_index(np.array(x), 4)]), abs=1e-10)


def test_two_step_hand_value():
    # K=3, L=1, T=1: levels 0 -> 1/2 -> 1, x_theta = (3/4, 1/4)
    v = Vocabulary(3)
    d = FixedDenoiser(v, 1, [math.log(3), 0.0, 0.0])
    p = reverse_process_distribution(d, [0.0, 0.5, 1.0], [1.0, 0.5])
    assert np.allclose(p, [0.75, 0.25, 0.0], atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_bound_holds(seed):
    r = Rng(seed)
    v = Vocabulary(3 + seed % 2)
    d = TableDenoiser(v, 3, r, time_conditioned=bool(seed % 2))
    x = v.data_tokens[r.integers(0, v.K_data, size=3)]
    rows = bound_gap_report(x, d, [1, 2, 4, 8])
    assert all(row["gap"] >= -1e-9 for row in rows)


def test_bound_tight_for_single_step_exact_model():
    # L=1: the model posterior reproduces the data exactly, so the bound is tight
    v = Vocabulary(3)
    p = DataDistribution(v, 1, [0.3, 0.7])
    d = ExactBayesDenoiser(p)
    for T in (1, 4):
        rows = bound_gap_report(np.array([1]), d, [T])
        assert rows[0]["gap"] == pytest.approx(0.0, abs=1e-12)
        assert rows[0]["nll"] == pytest.approx(-math.log(0.7), abs=1e-12)


def test_bound_violation_is_raised(monkeypatch):
    import maskdiff.oracle as oracle

    v = Vocabulary(3)
    d = TableDenoiser(v, 2, Rng(0))
    monkeypatch.setattr(oracle, "diffusion_loss_discrete", lambda *a, **k: -1.0)
    with pytest.raises(BoundViolation):
        oracle.bound_gap_report(np.array([0, 1]), d, [2])


def test_entropy_examples():
    v = Vocabulary(3)
    assert entropy_rate(DataDistribution.uniform(v, 3)) == pytest.approx(3 * math.log(2))
    assert entropy_rate(UniformGenerator(4, 5)) == pytest.approx(5 * math.log(4))
    assert entropy_rate(DataDistribution(v, 1, [1.0, 0.0])) == 0.0
    # Markov chain from its stationary law: H(X1) + (L-1) H(row)
    gen = Markov1Generator(3, 4, table=default_markov_table(3, 0.7))
    row = -(0.7 * math.log(0.7) + 2 * 0.15 * math.log(0.15))
    assert entropy_rate(gen) == pytest.approx(math.log(3) + 3 * row, abs=1e-12)
    assert entropy_rate(gen.distribution()) == pytest.approx(entropy_rate(gen), abs=1e-12)


def test_total_variation_and_guard():
    assert total_variation([0.5, 0.5], [1.0, 0.0]) == 0.5
    with pytest.raises(TooLarge):
        exact_model_distribution(TableDenoiser(Vocabulary(4), 8, Rng(0)), 100)


def test_pattern_nll_matches_distribution_and_bound():
    # every data sequence: pattern DP equals the full distribution, and the bound holds
    v = Vocabulary(3)
    d = TableDenoiser(v, 2, Rng(6))
    p = exact_model_distribution(d, 3)
    sts = all_states(3, 2)
    keep = ~np.any(sts == 2, axis=1)
    nll = np.array([exact_model_nll(x, d, 3) for x in sts[keep]])
    assert np.allclose(np.exp(-nll), p[keep], atol=1e-12)
    nelbo = np.array([diffusion_loss_discrete(ObjectiveVariant("rb2", 3), x, d) for x in sts[keep]])
    assert np.all(nelbo >= nll - 1e-9)
