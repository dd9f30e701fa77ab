"""Complex Hermitian linear algebra, PSD sampling, and reproducible RNG streams.

All covariance-level operations in the simulator funnel through this module:
eigendecomposition with non-negativity clipping (rank-deficient covariance
models make Cholesky unusable), circularly-symmetric Gaussian sampling from a
spectral factor, and positive-definite solves. Random number streams are
counter-based (Philox) so that per-trial substreams reproduce bit-exactly
regardless of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class NotPSDError(ValueError):
    """Matrix has an eigenvalue below the negative clip tolerance."""


class SingularMatrixError(ValueError):
    """Positive-definite factorization failed."""


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # SplitMix64 finalizer; used only to derive child stream ids.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Seeded, splittable random stream.

    Identical (seed, stream) pairs produce identical sample sequences on
    every run and under any thread schedule, because the underlying Philox
    generator is keyed, not state-shared. Child streams are derived by a
    64-bit mix of the parent stream id and the child index, so sibling
    streams never collide in practice.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=0, key=key))

    def child(self, index: int) -> "RngStream":
        """Derive the index-th subordinate stream."""
        mixed = _splitmix64((self.stream ^ _splitmix64(index & _MASK64)) & _MASK64)
        return RngStream(self.seed, mixed)


def hermitize(a: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian cone: (A + A^H)/2."""
    a = np.asarray(a)
    return 0.5 * (a + a.conj().T)


def trace_product(a: np.ndarray, b: np.ndarray) -> complex:
    """tr(A B) without forming the product."""
    return complex(np.einsum("ij,ji->", a, b))


@dataclass
class SpectralFactor:
    """Eigendecomposition A = U diag(w) U^H with w >= 0, descending.

    Eigenvector phases are canonicalized (largest-magnitude entry made real
    positive) so that factoring c*A for c > 0 yields the same basis as A.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    _sampler: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues > 0.0))

    def matrix(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T

    def scaled(self, c: float) -> "SpectralFactor":
        """Factor of c*A for c >= 0, reusing the eigenbasis exactly."""
        if c < 0:
            raise ValueError("scale must be non-negative")
        return SpectralFactor(self.eigenvalues * c, self.eigenvectors)

    def sampling_matrix(self) -> np.ndarray:
        """U_r sqrt(w_r) restricted to the strictly positive eigenvalues."""
        if self._sampler is None:
            r = self.rank
            self._sampler = self.eigenvectors[:, :r] * np.sqrt(self.eigenvalues[:r])
        return self._sampler


def psd_factor(a: np.ndarray, tol: float | None = None) -> SpectralFactor:
    """Factor a Hermitian PSD matrix, clipping small negative eigenvalues.

    Eigenvalues in [-tol, 0) are treated as numerical noise and clipped to
    zero; anything below -tol raises NotPSDError. The default tolerance is
    1e-10 times the largest eigenvalue magnitude.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    h = hermitize(a)
    w, u = np.linalg.eigh(h)
    if tol is None:
        tol = 1e-10 * float(np.max(np.abs(w), initial=0.0))
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if w[0] < -tol:
        raise NotPSDError(
            f"smallest eigenvalue {w[0]:.3e} is below the clip tolerance {-tol:.3e}"
        )
    w = np.clip(w, 0.0, None)
    # Descending order, then canonical phase per eigenvector.
    w = w[::-1].copy()
    u = u[:, ::-1].copy()
    lead = np.argmax(np.abs(u), axis=0)
    phase = u[lead, np.arange(u.shape[1])]
    safe = np.abs(phase) > 0
    u[:, safe] = u[:, safe] * (np.abs(phase[safe]) / phase[safe])
    return SpectralFactor(w, u)


def sample_cn(
    factor: SpectralFactor, rng: RngStream | np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw CN(0, A) vectors from the spectral factor of A.

    Returns U sqrt(w) g with g i.i.d. standard circularly-symmetric complex
    Gaussian. With ``size=None`` a single length-M vector is returned,
    otherwise an array of shape (size, M).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    b = factor.sampling_matrix()
    n = 1 if size is None else size
    g = gen.standard_normal((n, b.shape[1], 2))
    g = (g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0)
    out = g @ b.T
    return out[0] if size is None else out


def hermitian_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for Hermitian positive-definite A via Cholesky."""
    try:
        c = scipy.linalg.cho_factor(a, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def cholesky_factor(a: np.ndarray):
    """Cached-friendly Cholesky factor of a Hermitian PD matrix."""
    try:
        return scipy.linalg.cho_factor(a, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc


def cholesky_solve(factor, b: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve(factor, b, check_finite=False)
