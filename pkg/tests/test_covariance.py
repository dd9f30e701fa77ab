import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimo_sim.covariance import (
    CovarianceMatrix,
    ExpCorr,
    ExpLogNormal,
    LogNormalDiag,
    OneRing,
    _one_ring_gains,
    eigen_spectrum,
    exp_corr,
    exp_lognormal,
    lognormal_diag,
    one_ring,
)
from mimo_sim.numerics import RngStream


def test_one_ring_diagonal_equals_beta():
    cov = one_ring(OneRing(1.7, 0.4, np.deg2rad(10.0)), 16)
    assert np.allclose(cov.diagonal, 1.7, atol=1e-14)


def test_one_ring_linear_in_beta():
    a = one_ring(OneRing(1.0, -0.2, np.deg2rad(20.0)), 12)
    b = one_ring(OneRing(2.0, -0.2, np.deg2rad(20.0)), 12)
    assert np.allclose(b.matrix, 2.0 * a.matrix)


def test_one_ring_rank_deficiency():
    cov = one_ring(OneRing(1.0, 0.3, np.deg2rad(15.0)), 100)
    spec = eigen_spectrum(cov)
    frac = np.mean(spec < 1e-6 * spec[0])
    assert frac >= 0.6


def test_one_ring_quadrature_convergence():
    model = OneRing(1.0, 0.7, np.deg2rad(15.0))
    coarse = _one_ring_gains(model, 64, 512)
    fine = _one_ring_gains(model, 64, 1024)
    assert np.max(np.abs(fine - coarse)) < 1e-9


def test_exp_corr_zero_correlation():
    cov = exp_corr(ExpCorr(1.3, 0.0, 0.9), 8)
    assert np.allclose(cov.matrix, 1.3 * np.eye(8))


def test_exp_corr_entry_formula():
    cov = exp_corr(ExpCorr(1.0, 0.5, 0.0), 6)
    assert cov.matrix[0, 2] == pytest.approx(0.25)
    cov_t = exp_corr(ExpCorr(2.0, 0.3, 0.7), 6)
    assert cov_t.matrix[1, 4] == pytest.approx(2.0 * 0.3**3 * np.exp(1j * 3 * 0.7))


def test_exp_corr_psd_strong_correlation():
    cov = exp_corr(ExpCorr(1.0, 0.9, np.pi / 3), 64)
    assert cov.eigenvalues.min() >= 0.0


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.0, 0.99),
    st.floats(-np.pi, np.pi),
    st.integers(2, 24),
)
def test_exp_corr_always_psd(r, aoa, m):
    cov = exp_corr(ExpCorr(1.0, r, aoa), m)  # construction clips; would raise otherwise
    assert cov.eigenvalues.min() >= 0.0
    assert np.allclose(cov.diagonal, 1.0)


def test_lognormal_no_variation():
    cov = lognormal_diag(LogNormalDiag(0.7, 0.0), 10, RngStream(1))
    assert np.allclose(cov.matrix, 0.7 * np.eye(10))


def test_lognormal_std_dev_matches():
    cov = lognormal_diag(LogNormalDiag(1.0, 4.0), 10_000, RngStream(2))
    db = 10.0 * np.log10(cov.diagonal)
    assert abs(db.std(ddof=1) - 4.0) / 4.0 < 0.05


def test_lognormal_positive_entries():
    cov = lognormal_diag(LogNormalDiag(1.0, 12.0), 200, RngStream(3))
    assert cov.diagonal.min() > 0


def test_exp_lognormal_degenerate_combinations():
    base = exp_corr(ExpCorr(1.0, 0.6, 0.4), 32)
    combo = exp_lognormal(ExpLogNormal(1.0, 0.6, 0.4, 0.0), 32, RngStream(4))
    assert np.allclose(combo.matrix, base.matrix)

    diag = lognormal_diag(LogNormalDiag(1.0, 4.0), 32, RngStream(5))
    combo_r0 = exp_lognormal(ExpLogNormal(1.0, 0.0, 0.4, 4.0), 32, RngStream(5))
    assert np.allclose(combo_r0.matrix, diag.matrix)


def test_exp_lognormal_psd_and_diagonal():
    cov = exp_lognormal(ExpLogNormal(1.0, 0.5, 0.1, 4.0), 64, RngStream(6))
    assert cov.eigenvalues.min() >= 0.0
    # diagonal entry m equals beta * 10^(f_m / 10)
    diag_only = lognormal_diag(LogNormalDiag(1.0, 4.0), 64, RngStream(6))
    assert np.allclose(cov.diagonal, diag_only.diagonal)


def test_eigen_spectrum_trivial_cases():
    cov = CovarianceMatrix.from_matrix(0.5 * np.eye(7))
    assert np.allclose(eigen_spectrum(cov), 0.5)
    u = np.ones(6) / np.sqrt(6.0)
    rank1 = CovarianceMatrix.from_matrix(3.0 * np.outer(u, u.conj()))
    spec = eigen_spectrum(rank1)
    assert spec[0] == pytest.approx(3.0)
    assert np.allclose(spec[1:], 0.0, atol=1e-12)


def test_eigen_spectrum_sums_to_trace():
    cov = exp_lognormal(ExpLogNormal(1.0, 0.7, 0.3, 3.0), 48, RngStream(7))
    assert abs(eigen_spectrum(cov).sum() - cov.trace) / cov.trace < 1e-8


def test_spectrum_ordering_across_models():
    # Averaged over angle draws: the one-ring spectrum is rank deficient, the
    # exponential model decays moderately, and the diagonal model has the
    # flattest tail among the full-rank models.
    m, draws = 100, 40
    gen = RngStream(8).generator()
    acc = {"one-ring": np.zeros(m), "exp-corr": np.zeros(m), "lognormal": np.zeros(m)}
    for _ in range(draws):
        aoa = float(gen.uniform(-np.pi, np.pi))
        acc["one-ring"] += eigen_spectrum(one_ring(OneRing(1.0, aoa, np.deg2rad(15.0)), m))
        acc["exp-corr"] += eigen_spectrum(exp_corr(ExpCorr(1.0, 0.5, aoa), m))
        acc["lognormal"] += eigen_spectrum(lognormal_diag(LogNormalDiag(1.0, 2.0), m, gen))
    below_half = {k: np.mean(v / draws < 0.5) for k, v in acc.items()}
    assert below_half["one-ring"] > below_half["exp-corr"] > below_half["lognormal"]
    assert np.mean(acc["one-ring"] / draws < 1e-6) > 0.5
    assert (acc["exp-corr"] / draws).min() > 1e-6  # full rank
    assert (acc["lognormal"] / draws).min() > 1e-6


def test_normalized_trace_bounds():
    m = 64
    assert one_ring(OneRing(1.0, 0.2, np.deg2rad(15.0)), m).trace / m == pytest.approx(1.0)
    assert exp_corr(ExpCorr(2.0, 0.8, 0.1), m).trace / m == pytest.approx(2.0)
    sigma = 4.0
    cov = lognormal_diag(LogNormalDiag(1.0, sigma), m, RngStream(9))
    lo, hi = 10 ** (-3 * sigma / 10.0), 10 ** (3 * sigma / 10.0)
    assert lo <= cov.trace / m <= hi


def test_model_parameter_validation():
    with pytest.raises(ValueError):
        ExpCorr(1.0, 1.5, 0.0)
    with pytest.raises(ValueError):
        OneRing(-1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        LogNormalDiag(1.0, -2.0)
