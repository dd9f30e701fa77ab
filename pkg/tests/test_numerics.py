import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimo_sim.covariance import ExpCorr, OneRing, exp_corr, one_ring
from mimo_sim.numerics import (
    NotPSDError,
    RngStream,
    SingularMatrixError,
    hermitian_solve,
    hermitize,
    psd_factor,
    sample_cn,
)


def random_hermitian_pd(m, seed=0, shift=None):
    gen = np.random.default_rng(seed)
    a = gen.standard_normal((m, m)) + 1j * gen.standard_normal((m, m))
    h = a @ a.conj().T
    if shift is not None:
        h = h + shift * np.eye(m)
    return h


def test_psd_factor_identity():
    f = psd_factor(np.eye(4))
    assert np.allclose(f.eigenvalues, 1.0)
    assert f.rank == 4


def test_psd_factor_diagonal_rank_deficient():
    f = psd_factor(np.diag([2.0, 1.0, 0.0]))
    assert np.allclose(f.eigenvalues, [2.0, 1.0, 0.0])
    assert f.rank == 2


def test_psd_factor_one_ring_reconstruction():
    cov = one_ring(OneRing(1.0, 0.3, np.deg2rad(15.0)), 64)
    f = psd_factor(cov.matrix)  # no NotPSDError despite rank deficiency
    err = np.linalg.norm(f.matrix() - cov.matrix) / max(1.0, np.linalg.norm(cov.matrix))
    assert err <= 1e-10
    assert f.eigenvalues.min() == 0.0  # clipped tail


def test_psd_factor_rejects_indefinite():
    with pytest.raises(NotPSDError):
        psd_factor(np.diag([1.0, -1.0]))


def test_psd_factor_descending_order():
    f = psd_factor(random_hermitian_pd(12, seed=3))
    assert np.all(np.diff(f.eigenvalues) <= 0)


def test_sample_cn_zero_matrix():
    f = psd_factor(np.zeros((5, 5)))
    assert np.array_equal(sample_cn(f, RngStream(1)), np.zeros(5))


def test_sample_cn_identity_moments():
    f = psd_factor(np.eye(2))
    draws = sample_cn(f, RngStream(2), size=100_000)
    cov = draws.T @ draws.conj() / draws.shape[0]
    assert np.linalg.norm(cov - np.eye(2)) / np.linalg.norm(np.eye(2)) < 0.05


def test_sample_cn_rank_one_support():
    u = np.array([1.0, 1j, -1.0]) / np.sqrt(3.0)
    f = psd_factor(np.outer(u, u.conj()))
    draws = sample_cn(f, RngStream(3), size=50)
    # every sample parallel to u
    proj = draws - np.outer(draws @ u.conj(), u)
    assert np.abs(proj).max() < 1e-12


def test_sample_cn_scaling_linearity():
    a = random_hermitian_pd(8, seed=5, shift=1.0)
    base = psd_factor(a)
    scaled = psd_factor(4.0 * a)
    x = sample_cn(base, RngStream(7))
    y = sample_cn(scaled, RngStream(7))
    assert np.allclose(y, 2.0 * x, atol=1e-8)


def test_hermitian_solve_identity_and_scalar():
    b = np.arange(6.0) + 1j
    assert np.allclose(hermitian_solve(np.eye(6), b), b)
    assert np.allclose(hermitian_solve(2.0 * np.eye(6), b), b / 2.0)


def test_hermitian_solve_residual():
    a = random_hermitian_pd(32, seed=11, shift=0.5)
    b = np.random.default_rng(12).standard_normal((32, 3)) + 0j
    x = hermitian_solve(a, b)
    assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 1e-8


def test_hermitian_solve_singular():
    with pytest.raises(SingularMatrixError):
        hermitian_solve(np.zeros((3, 3)), np.ones(3))


def _quadform_deviation(a, m, draws, rng, cross=False):
    gen = rng.generator()
    g = (gen.standard_normal((draws, m)) + 1j * gen.standard_normal((draws, m))) / np.sqrt(2 * m)
    if cross:
        g2 = (gen.standard_normal((draws, m)) + 1j * gen.standard_normal((draws, m))) / np.sqrt(2 * m)
        vals = np.abs(np.einsum("ti,ij,tj->t", g.conj(), a, g2))
    else:
        vals = np.abs(np.einsum("ti,ij,tj->t", g.conj(), a, g) - np.trace(a) / m)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(draws)


@pytest.mark.parametrize("cross", [False, True])
def test_trace_concentration_rate(cross):
    # mean |x^H A x - tr(A)/M| (or |x^H A y|) decays ~ M^{-1/2} for bounded ||A||_2
    means = {}
    errs = {}
    for m in (16, 64, 256):
        a = exp_corr(ExpCorr(1.0, 0.9, 0.3), m).matrix  # spectral norm bounded in M
        means[m], errs[m] = _quadform_deviation(a, m, 1000, RngStream(100 + m), cross=cross)
    assert means[64] < means[16] + 2 * (errs[16] + errs[64])
    assert means[256] < means[64] + 2 * (errs[64] + errs[256])
    # the 4x antenna step should shrink the deviation by roughly 2x
    assert means[256] < 0.75 * means[16]


def test_rng_stream_reproducible():
    a = RngStream(9, 4).generator().standard_normal(8)
    b = RngStream(9, 4).generator().standard_normal(8)
    assert np.array_equal(a, b)


def test_rng_stream_children_distinct():
    base = RngStream(9)
    kids = [base.child(i).generator().standard_normal(4) for i in range(6)]
    for i in range(6):
        for j in range(i + 1, 6):
            assert not np.allclose(kids[i], kids[j])


complex_entries = st.complex_numbers(
    min_magnitude=0.0, max_magnitude=5.0, allow_nan=False, allow_infinity=False
)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_hermitize_projection(n, seed):
    gen = np.random.default_rng(seed)
    a = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))
    h = hermitize(a)
    assert np.allclose(h, h.conj().T)
    assert np.allclose(hermitize(h), h)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_psd_factor_roundtrip_property(n, seed):
    gen = np.random.default_rng(seed)
    b = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))
    a = b @ b.conj().T
    f = psd_factor(a)
    assert f.eigenvalues.min() >= 0
    err = np.linalg.norm(f.matrix() - a) / max(1.0, np.linalg.norm(a))
    assert err <= 1e-10
