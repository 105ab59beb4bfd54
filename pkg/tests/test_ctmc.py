import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdiff.categorical import Rng, Vocabulary, log_softmax
from maskdiff.ctmc import (concrete_score, equivalence_report, forward_rate, mdlm_integrand, reverse_rate,
                           reverse_rate_matrix, sedd_nelbo_integrand)
from maskdiff.denoiser import TableDenoiser
from maskdiff.errors import UnreachableLatent
from maskdiff.forward import posterior_masked_alpha, transition_matrix, masked_prior
from maskdiff.schedules import KINDS, NoiseSchedule
from scipy.linalg import expm

V3 = Vocabulary(3)
LP = np.log(np.array([0.4, 0.6, 1e-300]))
LP[2] = -np.inf


def test_forward_rate_example():
    R = forward_rate(0.5, NoiseSchedule(), V3)
    assert R[2, 0] == pytest.approx(2.0) and R[2, 1] == pytest.approx(2.0)
    assert R[0, 0] == pytest.approx(-2.0)
    assert np.all(R[:, 2] == 0)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_rate_columns_sum_to_zero(kind):
    s = NoiseSchedule(kind)
    V = Vocabulary(6)
    for t in np.linspace(s.eps, 1 - s.eps, 101):
        R = forward_rate(t, s, V)
        assert np.max(np.abs(R.sum(axis=0))) < 1e-12


def test_forward_rate_generates_the_transition():
    # the schedule is time-inhomogeneous but R_t commutes across t, so exp(int R) is exact
    s = NoiseSchedule("cosine")
    V = Vocabulary(4)
    a, b = 0.2, 0.7
    integral = -(math.log(s.alpha(b)) - math.log(s.alpha(a)))
    base = forward_rate(0.5, s, V) / float(s.alpha_prime(0.5) / s.alpha(0.5))
    P = expm(-integral * base)
    assert np.allclose(P, transition_matrix(s.alpha(a), s.alpha(b), masked_prior(V)), atol=1e-12)


def test_score_examples():
    s = concrete_score(2, LP, 0.5, 2)
    assert np.allclose(s, [0.4, 0.6, 1.0])
    s = concrete_score(0, LP, 0.5, 2)
    assert np.allclose(s, [1.0, 0.0, 1.0])
    s = concrete_score(0, LP, 0.8, 2)
    assert s[2] == pytest.approx(0.25)


def test_reverse_rate_example():
    # log-linear at t=0.5: -alpha'/(1-alpha) = 2
    assert reverse_rate(1, 2, LP, 0.5, NoiseSchedule(), 2) == pytest.approx(1.2)
    assert reverse_rate(2, 2, LP, 0.5, NoiseSchedule(), 2) == pytest.approx(-2.0)
    assert reverse_rate(1, 0, LP, 0.5, NoiseSchedule(), 2) == 0.0
    R = reverse_rate_matrix(LP, 0.5, NoiseSchedule(), 2)
    assert np.allclose(R.sum(axis=0), 0.0, atol=1e-12)


def test_reverse_rate_is_first_order_posterior():
    s = NoiseSchedule("cosine")
    t = 0.6
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        a_t, a_s = s.alpha(t), s.alpha(t - h)
        step = (a_s - a_t) / (1 - a_t) * np.exp(LP[1])
        errs.append(abs(step - h * reverse_rate(1, 2, LP, t, s, 2)))
    # O(h^2): halving h quarters the error
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_exact_score_is_the_marginal_ratio():
    # with x_theta = x the score equals q_t(y'|x)/q_t(z_t|x)
    lp = np.log(np.array([1.0, 1e-300, 1e-300]))
    alpha = 0.3
    q = np.array([alpha, 0.0, 1 - alpha])
    s = concrete_score(2, lp, alpha, 2)
    assert np.allclose(s, q / q[2], atol=1e-12)
    assert posterior_masked_alpha(2, 0, 1.0, alpha, V3)[0] == pytest.approx(1.0)


def test_sedd_examples():
    s = NoiseSchedule()
    # unmasked latent: both integrands vanish for the exact score
    score = concrete_score(0, LP, float(s.alpha(0.3)), 2)
    assert sedd_nelbo_integrand(0, 0, score, 0.3, s, V3) == pytest.approx(0.0, abs=1e-14)
    assert mdlm_integrand(0, 0, LP, 0.3, s, 2) == 0.0
    score = concrete_score(2, LP, float(s.alpha(0.3)), 2)
    assert sedd_nelbo_integrand(2, 1, score, 0.3, s, V3) == pytest.approx(mdlm_integrand(2, 1, LP, 0.3, s, 2), abs=1e-12)
    with pytest.raises(UnreachableLatent):
        sedd_nelbo_integrand(1, 0, score, 0.3, s, V3)


@pytest.mark.parametrize("kind", KINDS)
def test_equivalence_fuzz(kind):
    s = NoiseSchedule(kind)
    rep = equivalence_report(None, s, 300, Rng(1), vocab=Vocabulary(6))
    assert rep["max_abs_deviation"] < 1e-10
    assert rep["max_rate_deviation"] < 1e-10
    d = TableDenoiser(Vocabulary(4), 2, Rng(2))
    rep = equivalence_report(d, s, 200, Rng(3))
    assert rep["max_abs_deviation"] < 1e-10 and rep["n_cases"] == 200


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.01, 0.99), st.integers(0, 2))
def test_sedd_equals_mdlm_property(logits, t, x):
    V = Vocabulary(4)
    lp = log_softmax(np.array(logits + [-np.inf]))
    s = NoiseSchedule("cosine_squared")
    score = concrete_score(3, lp, float(s.alpha(t)), 3, float(s.one_minus_alpha(t)))
    assert sedd_nelbo_integrand(3, x, score, t, s, V) == pytest.approx(mdlm_integrand(3, x, lp, t, s, 3), abs=1e-10)
