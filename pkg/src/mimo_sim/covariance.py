"""Channel covariance models for a uniform linear array.

Three families are supported, plus the combination of the last two used in
the downlink experiments:

* one-ring scattering: [R]_{m,n} = (beta / 2*spread) * integral over
  [-spread, spread] of exp(i*pi*(n-m)*sin(aoa + delta)) d(delta). Rank
  deficient for narrow angular spreads.
* exponential antenna correlation: [R]_{m,n} = beta * r^|n-m| * exp(i*(n-m)*aoa).
* uncorrelated fading with independent log-normal large-scale variations
  over the array: R = beta * diag(10^(f_m/10)), f_m ~ N(0, sigma_db^2).
* exponential correlation modulated by log-normal variations:
  [R]_{m,n} = beta * r^|n-m| * exp(i*(n-m)*aoa) * 10^((f_m + f_n)/20).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .numerics import RngStream, SpectralFactor, psd_factor

_QUAD_START_ORDER = 32
_QUAD_MAX_ORDER = 1 << 14


class QuadratureFailureError(RuntimeError):
    """One-ring entry integral did not converge within the order budget."""


@dataclass(frozen=True)
class OneRing:
    beta: float
    aoa: float
    spread: float  # half-width of the scattering interval, radians

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.spread <= 0:
            raise ValueError("spread must be positive")


@dataclass(frozen=True)
class ExpCorr:
    beta: float
    r: float
    aoa: float = 0.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("correlation factor must lie in [0, 1]")


@dataclass(frozen=True)
class LogNormalDiag:
    beta: float
    sigma_db: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.sigma_db < 0:
            raise ValueError("sigma_db must be non-negative")


@dataclass(frozen=True)
class ExpLogNormal:
    beta: float
    r: float
    aoa: float
    sigma_db: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("correlation factor must lie in [0, 1]")
        if self.sigma_db < 0:
            raise ValueError("sigma_db must be non-negative")


@dataclass
class CovarianceMatrix:
    """Hermitian PSD matrix with its clipped spectral factor cached."""

    matrix: np.ndarray
    factor: SpectralFactor = field(repr=False)

    @classmethod
    def from_matrix(cls, a: np.ndarray, tol: float | None = None) -> "CovarianceMatrix":
        f = psd_factor(a, tol=tol)
        m = np.asarray(a, dtype=complex)
        return cls(0.5 * (m + m.conj().T), f)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.ascontiguousarray(self.matrix.diagonal().real)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.factor.eigenvalues

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def scaled(self, c: float) -> "CovarianceMatrix":
        """c*R for c > 0, reusing the eigenbasis exactly."""
        if c <= 0:
            raise ValueError("scale must be positive")
        return CovarianceMatrix(self.matrix * c, self.factor.scaled(c))


def _toeplitz_from_gains(gains: np.ndarray) -> np.ndarray:
    # gains[d] is the entry at offset d = column - row; Hermitian by r(-d) = conj(r(d)).
    return scipy.linalg.toeplitz(np.conj(gains), gains)


def _one_ring_gains(model: OneRing, m: int, order: int) -> np.ndarray:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    delta = nodes * model.spread
    sin_angles = np.sin(model.aoa + delta)
    offsets = np.arange(m)
    phases = np.exp(1j * np.pi * np.outer(offsets, sin_angles))
    return phases @ (weights * model.beta / 2.0)


def one_ring(model: OneRing, m: int) -> CovarianceMatrix:
    """One-ring covariance via adaptive Gauss-Legendre quadrature.

    The quadrature order is doubled until successive estimates of every
    entry agree to 1e-12 * beta; the model gives no closed form for the
    integral. Diagonal entries equal beta exactly (unit-magnitude integrand).
    """
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    tol = 1e-12 * model.beta
    order = _QUAD_START_ORDER
    gains = _one_ring_gains(model, m, order)
    while True:
        order *= 2
        if order > _QUAD_MAX_ORDER:
            raise QuadratureFailureError(
                f"entry integral not converged at quadrature order {order // 2}"
            )
        refined = _one_ring_gains(model, m, order)
        if np.max(np.abs(refined - gains)) < tol:
            gains = refined
            break
        gains = refined
    gains[0] = model.beta
    return CovarianceMatrix.from_matrix(_toeplitz_from_gains(gains))


def exp_corr(model: ExpCorr, m: int) -> CovarianceMatrix:
    """Exponential correlation covariance (Hermitian Toeplitz, PSD)."""
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    offsets = np.arange(m)
    gains = model.beta * (model.r ** offsets) * np.exp(1j * offsets * model.aoa)
    return CovarianceMatrix.from_matrix(_toeplitz_from_gains(gains))


def _db_variations(sigma_db: float, m: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.normal(0.0, sigma_db, m) if sigma_db > 0 else np.zeros(m)


def lognormal_diag(
    model: LogNormalDiag, m: int, rng: RngStream | np.random.Generator
) -> CovarianceMatrix:
    """Diagonal covariance with log-normal large-scale variations."""
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    f = _db_variations(model.sigma_db, m, rng)
    entries = model.beta * 10.0 ** (f / 10.0)
    return CovarianceMatrix.from_matrix(np.diag(entries.astype(complex)))


def exp_lognormal(
    model: ExpLogNormal, m: int, rng: RngStream | np.random.Generator
) -> CovarianceMatrix:
    """Exponential correlation with log-normal variations over the array.

    Equals G * R_exp * G with G = diag(10^(f_m/20)); a congruence of a PSD
    matrix, hence PSD. Diagonal entry m is beta * 10^(f_m/10).
    """
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    f = _db_variations(model.sigma_db, m, rng)
    g = 10.0 ** (f / 20.0)
    base = exp_corr(ExpCorr(model.beta, model.r, model.aoa), m).matrix
    return CovarianceMatrix.from_matrix(base * np.outer(g, g))


def build_model(model, m: int, rng: RngStream | np.random.Generator | None = None) -> CovarianceMatrix:
    """Dispatch on the model dataclass type."""
    if isinstance(model, OneRing):
        return one_ring(model, m)
    if isinstance(model, ExpCorr):
        return exp_corr(model, m)
    if isinstance(model, LogNormalDiag):
        if rng is None:
            raise ValueError("lognormal_diag requires an RNG")
        return lognormal_diag(model, m, rng)
    if isinstance(model, ExpLogNormal):
        if rng is None:
            raise ValueError("exp_lognormal requires an RNG")
        return exp_lognormal(model, m, rng)
    raise TypeError(f"unknown covariance model {type(model).__name__}")


def eigen_spectrum(cov: CovarianceMatrix) -> np.ndarray:
    """Eigenvalues in descending order."""
    return cov.eigenvalues.copy()
