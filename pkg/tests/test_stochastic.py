import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphere_nls.fields import lp_norm, sobolev_norm
from sphere_nls.harmonics import basis_for
from sphere_nls.stochastic import (
    EnsembleError,
    GaussianStream,
    ensemble_estimate,
    ensemble_values,
    expected_hs_sq,
    sample_complex_gaussians,
    sample_e_n,
    sample_phi_alpha,
    summarize,
    tail_fit,
)

BOUND = 4 / math.sqrt(1e5)


@pytest.fixture(scope="module")
def draws():
    return sample_complex_gaussians(GaussianStream(2024, 0), 100_000)


def test_gaussian_mean(draws):
    assert abs(draws.mean()) < BOUND


def test_gaussian_second_moment(draws):
    assert abs(np.mean(np.abs(draws) ** 2) - 1) < BOUND


def test_real_and_imag_parts_uncorrelated(draws):
    assert abs(np.mean(draws.real * draws.imag)) < BOUND
    assert abs(np.mean(draws**2)) < BOUND


def test_determinism():
    a = sample_complex_gaussians(GaussianStream(1, 7), 5)
    b = sample_complex_gaussians(GaussianStream(1, 7), 5)
    assert a[0] == b[0] and np.array_equal(a, b)


@given(st.integers(0, 2**63), st.integers(0, 2**63))
def test_distinct_streams_differ(seed, sid):
    a = sample_complex_gaussians(GaussianStream(seed, sid), 4)
    b = sample_complex_gaussians(GaussianStream(seed, sid + 1), 4)
    assert not np.array_equal(a, b)


def test_advanced_stream_continues_sequence():
    s = GaussianStream(3, 4)
    words = s.words(10)
    assert np.array_equal(s.advanced(6).words(4), words[6:])


def test_uniforms_in_unit_interval():
    u = GaussianStream(0, 0).uniforms(10_000)
    assert u.min() > 0 and u.max() <= 1


def test_children_independent_of_parent():
    s = GaussianStream(5, 0)
    a = sample_complex_gaussians(s.child(1), 3)
    b = sample_complex_gaussians(s.child(2), 3)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, sample_complex_gaussians(GaussianStream(5, 0).child(1), 3))


@pytest.mark.parametrize("n", [0, 3, 5])
def test_e_n_mean_square_norm(n):
    est = ensemble_estimate(11, lambda s: float(np.sum(np.abs(sample_e_n(s, n, 6).coeffs) ** 2)), 2000)
    assert est.z_score(1.0) < 5


def test_e_n_support_and_scaling():
    f = sample_e_n(GaussianStream(0, 0), 3, 5)
    nz = np.flatnonzero(f.coeffs)
    assert nz.min() == 9 and nz.max() == 15


def test_e_n_coefficient_covariance():
    n, count = 2, 2000
    blocks = np.array([sample_e_n(GaussianStream(12, i), n, n).degree_block(n) for i in range(count)])
    cov = blocks.T @ blocks.conj() / count
    target = np.eye(2 * n + 1) / (2 * n + 1)
    # per-entry standard deviation of the empirical covariance is about (2n+1)^{-1} / sqrt(count)
    assert np.max(np.abs(cov - target)) < 5 / ((2 * n + 1) * math.sqrt(count))


def test_e_n_pointwise_l4_moment():
    # at every point e_n(x) is a standard complex Gaussian, whose fourth moment is 2
    n, count = 4, 2000
    basis = basis_for(n)
    vals = np.array([basis.synthesize(sample_e_n(GaussianStream(13, i), n, n).coeffs)[0, 0]
                     for i in range(count)])
    l4 = np.mean(np.abs(vals) ** 4) ** 0.25
    assert abs(l4 - 2**0.25) < 0.05
    assert l4 <= 1.0 * math.sqrt(4)


def test_e_n_rejects_large_degree():
    with pytest.raises(ValueError):
        sample_e_n(GaussianStream(0, 0), 5, 3)


def test_phi_alpha_degree_zero():
    s = GaussianStream(9, 1)
    phi = sample_phi_alpha(s, 1.5, 0)
    g = sample_e_n(s, 0, 0).coeffs[0]
    assert phi.coeffs[0] == g
    assert sobolev_norm(phi, 0) ** 2 == pytest.approx(abs(g) ** 2)


def test_phi_alpha_reproducible():
    a = sample_phi_alpha(GaussianStream(4, 4), 1.4, 6)
    b = sample_phi_alpha(GaussianStream(4, 4), 1.4, 6)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_phi_alpha_nested_truncations_agree():
    a = sample_phi_alpha(GaussianStream(4, 4), 1.4, 6)
    b = sample_phi_alpha(GaussianStream(4, 4), 1.4, 10)
    assert np.array_equal(b.coeffs[: a.coeffs.size], a.coeffs)


def test_phi_alpha_warns_for_small_alpha():
    with pytest.warns(UserWarning):
        sample_phi_alpha(GaussianStream(0, 0), 1.0, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sample_phi_alpha(GaussianStream(0, 0), 1.2, 2)


@pytest.mark.parametrize("alpha, s", [(1.5, 0.0), (1.2, 0.5)])
def test_phi_alpha_expected_hs(alpha, s):
    nmax = 8
    est = ensemble_estimate(21, lambda st_: sobolev_norm(sample_phi_alpha(st_, alpha, nmax), s) ** 2, 2000)
    assert est.z_score(expected_hs_sq(alpha, s, nmax)) < 5


@pytest.mark.parametrize(
    "alpha, s, nmax, expected",
    [(1.5, 0.3, 0, 1.0), (1.0, 0.0, 1, 2.0), (1.0, 0.0, 2, 2.0 + 5 / 7)],
)
def test_expected_hs_sq(alpha, s, nmax, expected):
    assert expected_hs_sq(alpha, s, nmax) == pytest.approx(expected, rel=1e-14)


def test_ensemble_constant_functional():
    est = ensemble_estimate(0, lambda s: 1.0, 10)
    assert est.mean == 1.0 and est.stderr == 0.0 and est.count == 10
    assert est.z_score(1.0) == 0.0


def test_ensemble_reproducible():
    f = lambda s: float(np.abs(sample_complex_gaussians(s, 1)[0]))  # noqa: E731
    assert ensemble_estimate(3, f, 50) == ensemble_estimate(3, f, 50)


def test_ensemble_e5_norm():
    est = ensemble_estimate(5, lambda s: float(np.sum(np.abs(sample_e_n(s, 5, 5).coeffs) ** 2)), 2000)
    assert est.z_score(1.0) < 5


def test_ensemble_error_reports_sample():
    def bad(s):
        if s.stream_id == 3:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(EnsembleError) as info:
        ensemble_values(0, bad, 5)
    assert info.value.sample_index == 3


def test_ensemble_needs_two_samples():
    with pytest.raises(ValueError):
        ensemble_estimate(0, lambda s: 0.0, 1)


def test_summarize_stderr():
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    est = summarize(vals)
    assert est.stderr == pytest.approx(vals.std(ddof=1) / 2)


def test_l4_tail_decays():
    vals = ensemble_values(17, lambda s: lp_norm(sample_e_n(s, 6, 6), 4), 500)
    fit = tail_fit(vals)
    probs = fit["prob"]
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert fit["exponent"] > 0
