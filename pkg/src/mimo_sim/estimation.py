"""Pilot-domain channel estimation and its exact second-order statistics.

Working in the de-spread pilot domain, the normalized observation for pilot
group g at base station j is

    y_jg = sum over group members (l,i) of h_jli + n / sqrt(rho_tr),

with n ~ CN(0, I). The linear MMSE estimate of a member channel is
h_hat_jli = R_jli Q_jg^{-1} y_jg with Q_jg = sum of member covariances plus
(1/rho_tr) I; the element-wise variant replaces the matrices by their
diagonals. All deterministic matrices (Q, the cached Q^{-1}R products, the
estimate covariances Phi, the interference-plus-noise matrices Z) are
computed once per scenario and shared read-only across Monte Carlo trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    NotPSDError,
    RngStream,
    SpectralFactor,
    cholesky_factor,
    cholesky_solve,
    hermitize,
    psd_factor,
)
from .scenario import NetworkScenario, pilot_groups

MMSE = "mmse"
EW = "ew"


@dataclass
class EwContext:
    """Diagonal-only statistics for the element-wise estimator."""

    d: np.ndarray  # (L, L, K, M) covariance diagonals
    lam: np.ndarray  # (L, groups, M) pilot-group diagonal normalizers
    s: np.ndarray  # (L, M) diagonal interference-plus-noise for combining


@dataclass
class EstimationContext:
    """Closed-form estimation statistics for one network realization."""

    scenario: NetworkScenario
    groups: list
    group_of: np.ndarray  # (L, K) pilot index per UE, mirrors scenario.pilot_of
    q: list  # q[j][g] -> (M, M) observation covariance
    x_h: np.ndarray  # (L, L, K, M, M) cached estimator matrices R Q^{-1}
    phi: np.ndarray  # (L, L, K, M, M) estimate covariances
    z: np.ndarray  # (L, M, M) M-MMSE interference-plus-noise
    z_bar: np.ndarray  # (L, M, M) single-cell variant (other cells as raw covariance)
    ew: EwContext
    _z_cho: list = field(default=None, repr=False)
    _z_bar_cho: list = field(default=None, repr=False)
    _err_factors: dict = field(default_factory=dict, repr=False)

    @property
    def antennas(self) -> int:
        return self.scenario.antennas

    def z_solve(self, j: int, b: np.ndarray) -> np.ndarray:
        return cholesky_solve(self._z_cho[j], b)

    def z_bar_solve(self, j: int, b: np.ndarray) -> np.ndarray:
        return cholesky_solve(self._z_bar_cho[j], b)

    def error_cov(self, j: int, l: int, i: int) -> np.ndarray:
        """Estimation-error covariance R - Phi (Hermitian)."""
        return hermitize(self.scenario.cov[j][l][i].matrix - self.phi[j, l, i])

    def error_factor(self, j: int, l: int, i: int) -> SpectralFactor:
        key = (j, l, i)
        if key not in self._err_factors:
            r = self.scenario.cov[j][l][i]
            tol = 1e-10 * float(r.eigenvalues[0]) if r.eigenvalues.size else 0.0
            self._err_factors[key] = psd_factor(self.error_cov(j, l, i), tol=tol)
        return self._err_factors[key]

    def ew_estimate_cov(self, j: int, l: int, i: int) -> np.ndarray:
        """Covariance of the element-wise estimate: D Lam^-1 Q Lam^-1 D."""
        g = int(self.group_of[l, i])
        w = self.ew.d[j, l, i] / self.ew.lam[j, g]
        return self.q[j][g] * np.outer(w, w)

    def ew_cross_cov(self, j: int, n: int, ni: int, m: int, mi: int) -> np.ndarray:
        """E{h_hat_jn h_hat_jm^H} for two element-wise estimates sharing a pilot."""
        g = int(self.group_of[n, ni])
        if int(self.group_of[m, mi]) != g:
            raise ValueError("cross-covariance is defined for pilot-sharing UEs")
        wn = self.ew.d[j, n, ni] / self.ew.lam[j, g]
        wm = self.ew.d[j, m, mi] / self.ew.lam[j, g]
        return self.q[j][g] * np.outer(wn, wm)

    def ew_est_err_cross(self, j: int, l: int, i: int) -> np.ndarray:
        """E{h_hat h_err^H} for the element-wise estimate (non-zero in general)."""
        g = int(self.group_of[l, i])
        w = self.ew.d[j, l, i] / self.ew.lam[j, g]
        r = self.scenario.cov[j][l][i].matrix
        return w[:, None] * r - self.ew_estimate_cov(j, l, i)


@dataclass
class ChannelDraw:
    """One coherence-block realization: true channels, estimates, observations."""

    estimator: str
    h: np.ndarray  # (L, L, K, M) true channels, first axis = receiving BS
    h_hat: np.ndarray  # (L, L, K, M) estimates
    y: np.ndarray  # (L, groups, M) normalized de-spread observations

    @property
    def error(self) -> np.ndarray:
        return self.h - self.h_hat


def estimation_statistics(s: NetworkScenario) -> EstimationContext:
    """Compute Q, Q^{-1}R, Phi, Z (and the element-wise variants) once.

    Raises NotPSDError if any estimation-error covariance R - Phi is
    indefinite beyond the clip tolerance, which signals a broken covariance
    input rather than roundoff.
    """
    L, K, M = s.cells, s.ues_per_cell, s.antennas
    groups = pilot_groups(s)
    eye = np.eye(M)

    q = [[None] * s.tau_p for _ in range(L)]
    x_h = np.zeros((L, L, K, M, M), dtype=complex)
    phi = np.zeros((L, L, K, M, M), dtype=complex)
    z = np.zeros((L, M, M), dtype=complex)
    z_bar = np.zeros((L, M, M), dtype=complex)

    d = np.zeros((L, L, K, M))
    lam = np.zeros((L, s.tau_p, M))
    s_diag = np.zeros((L, M))

    for j in range(L):
        for g, members in enumerate(groups):
            qm = eye / s.rho_tr + sum(s.cov[j][l][i].matrix for (l, i) in members)
            qm = hermitize(qm)
            q[j][g] = qm
            q_cho = cholesky_factor(qm)
            for (l, i) in members:
                r = s.cov[j][l][i].matrix
                x = cholesky_solve(q_cho, r)  # Q^{-1} R
                x_h[j, l, i] = x.conj().T  # R Q^{-1}, applied to observations
                phi[j, l, i] = hermitize(r @ x)
                d[j, l, i] = r.diagonal().real
            lam[j, g] = sum(d[j, l, i] for (l, i) in members) + 1.0 / s.rho_tr

    for j in range(L):
        acc = eye / s.rho_ul
        acc_bar = eye / s.rho_ul
        acc_s = np.full(M, 1.0 / s.rho_ul)
        for l in range(L):
            for i in range(K):
                r = s.cov[j][l][i].matrix
                err = r - phi[j, l, i]
                lam_g = lam[j, int(s.pilot_of[l, i])]
                acc = acc + err
                acc_bar = acc_bar + (err if l == j else r)
                acc_s = acc_s + d[j, l, i] * (1.0 - d[j, l, i] / lam_g)
        z[j] = hermitize(acc)
        z_bar[j] = hermitize(acc_bar)
        s_diag[j] = acc_s

    # Indefiniteness beyond the clip tolerance signals a broken input.
    for j in range(L):
        for l in range(L):
            for i in range(K):
                r = s.cov[j][l][i]
                lam_max = float(r.eigenvalues[0]) if r.eigenvalues.size else 0.0
                w_min = float(np.linalg.eigvalsh(hermitize(r.matrix - phi[j, l, i]))[0])
                if w_min < -1e-10 * max(lam_max, 1e-300):
                    raise NotPSDError(
                        f"error covariance of link ({j},{l},{i}) has eigenvalue {w_min:.3e}"
                    )

    ctx = EstimationContext(
        scenario=s,
        groups=groups,
        group_of=s.pilot_of.copy(),
        q=q,
        x_h=x_h,
        phi=phi,
        z=z,
        z_bar=z_bar,
        ew=EwContext(d=d, lam=lam, s=s_diag),
    )
    ctx._z_cho = [cholesky_factor(z[j]) for j in range(L)]
    ctx._z_bar_cho = [cholesky_factor(z_bar[j]) for j in range(L)]
    return ctx


def draw_observation(ctx: EstimationContext, rng: RngStream | np.random.Generator):
    """Sample true channels and the normalized de-spread observations."""
    s = ctx.scenario
    L, K, M = s.cells, s.ues_per_cell, s.antennas
    gen = rng.generator() if isinstance(rng, RngStream) else rng

    h = np.empty((L, L, K, M), dtype=complex)
    for j in range(L):
        for l in range(L):
            for i in range(K):
                b = s.cov[j][l][i].factor.sampling_matrix()
                g = gen.standard_normal((b.shape[1], 2))
                h[j, l, i] = b @ ((g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0))

    y = np.empty((L, s.tau_p, M), dtype=complex)
    noise_scale = 1.0 / np.sqrt(2.0 * s.rho_tr)
    for j in range(L):
        for g_idx, members in enumerate(ctx.groups):
            n = gen.standard_normal((M, 2))
            y[j, g_idx] = sum(h[j, l, i] for (l, i) in members) + (
                (n[:, 0] + 1j * n[:, 1]) * noise_scale
            )
    return h, y


def estimates_from_observation(
    ctx: EstimationContext, y: np.ndarray, estimator: str
) -> np.ndarray:
    """Linear estimates of every link channel from the de-spread observations."""
    s = ctx.scenario
    h_hat = np.empty((s.cells, s.cells, s.ues_per_cell, s.antennas), dtype=complex)
    for j in range(s.cells):
        for g_idx, members in enumerate(ctx.groups):
            for (l, i) in members:
                if estimator == MMSE:
                    h_hat[j, l, i] = ctx.x_h[j, l, i] @ y[j, g_idx]
                elif estimator == EW:
                    h_hat[j, l, i] = (ctx.ew.d[j, l, i] / ctx.ew.lam[j, g_idx]) * y[j, g_idx]
                else:
                    raise ValueError(f"unknown estimator '{estimator}'")
    return h_hat


def draw_and_estimate_mmse(
    ctx: EstimationContext, rng: RngStream | np.random.Generator
) -> ChannelDraw:
    h, y = draw_observation(ctx, rng)
    return ChannelDraw(estimator=MMSE, h=h, h_hat=estimates_from_observation(ctx, y, MMSE), y=y)


def draw_and_estimate_ew(
    ctx: EstimationContext, rng: RngStream | np.random.Generator
) -> ChannelDraw:
    h, y = draw_observation(ctx, rng)
    return ChannelDraw(estimator=EW, h=h, h_hat=estimates_from_observation(ctx, y, EW), y=y)


def draw_and_estimate(
    ctx: EstimationContext, rng: RngStream | np.random.Generator, estimator: str
) -> ChannelDraw:
    if estimator == MMSE:
        return draw_and_estimate_mmse(ctx, rng)
    if estimator == EW:
        return draw_and_estimate_ew(ctx, rng)
    raise ValueError(f"unknown estimator '{estimator}'")
