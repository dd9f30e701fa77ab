"""Receive combining and transmit precoding vectors.

Schemes:

* mr: v_jk = own-channel estimate.
* m-mmse: v_jk = (sum over all cells' estimate outer products + Z_j)^{-1} h_hat_jjk,
  the SINR-optimal uplink combiner.
* s-mmse: own-cell estimates only; other-cell terms enter through their raw
  covariance inside Z_bar_j.
* m-zf: v_jk = H_jk (H_jk^H H_jk)^{-1} e_1 with H_jk stacking the own estimate
  and the pilot-sharing interferers' estimates; exact null-steering.
* approx-m-mmse: like m-mmse but built from element-wise estimates and the
  diagonal interference matrix S_j.
* pcp: the two-array/two-UE network-cooperation heuristic, implemented only
  for that fixture topology.

Precoders are w = sqrt(theta) * v with theta = 1 / E{||v||^2}, so that
E{||w||^2} = 1; theta is estimated by Monte Carlo over fresh channel draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .estimation import EW, MMSE, ChannelDraw, EstimationContext, draw_and_estimate
from .numerics import RngStream, cholesky_factor, cholesky_solve

MR = "mr"
S_MMSE = "s-mmse"
M_MMSE = "m-mmse"
M_ZF = "m-zf"
APPROX_M_MMSE = "approx-m-mmse"
PCP = "pcp"

SCHEMES = (MR, S_MMSE, M_MMSE, M_ZF, APPROX_M_MMSE, PCP)

_DEFAULT_COND_LIMIT = 1e12
_DEFAULT_PIVOT_RTOL = 1e-8


class RankDeficientError(ValueError):
    """Stacked estimates are (numerically) linearly dependent."""


class SingularGainError(ValueError):
    """The 2x2 gain matrix of the cooperation fixture is singular."""


@dataclass
class CombinerSet:
    """Combining vectors for every served UE, plus precoder normalization."""

    scheme: str
    v: np.ndarray  # (L, K, M)
    theta: np.ndarray | None = None  # (L, K), 1 / E{||v||^2}

    def precoders(self) -> np.ndarray:
        if self.theta is None:
            raise ValueError("precoder normalization has not been estimated")
        return np.sqrt(self.theta)[..., None] * self.v


def _stacked_estimates(draw: ChannelDraw, j: int) -> np.ndarray:
    """All LK estimates at BS j as an (LK, M) array, (cell, ue) row order."""
    L, K, M = draw.h_hat.shape[0], draw.h_hat.shape[2], draw.h_hat.shape[3]
    return draw.h_hat[j].reshape(L * K, M)


def mr(draw: ChannelDraw) -> CombinerSet:
    L, K = draw.h_hat.shape[0], draw.h_hat.shape[2]
    v = np.stack([draw.h_hat[j, j] for j in range(L)])
    return CombinerSet(MR, v)


def m_mmse(draw: ChannelDraw, ctx: EstimationContext) -> CombinerSet:
    if draw.estimator != MMSE:
        raise ValueError("m-mmse combining requires MMSE estimates")
    L, K, M = ctx.scenario.cells, ctx.scenario.ues_per_cell, ctx.scenario.antennas
    v = np.empty((L, K, M), dtype=complex)
    for j in range(L):
        hs = _stacked_estimates(draw, j)
        a = hs.T @ hs.conj() + ctx.z[j]  # sum of h_hat h_hat^H over rows
        v[j] = cholesky_solve(cholesky_factor(a), draw.h_hat[j, j].T).T
    return CombinerSet(M_MMSE, v)


def s_mmse(draw: ChannelDraw, ctx: EstimationContext) -> CombinerSet:
    if draw.estimator != MMSE:
        raise ValueError("s-mmse combining requires MMSE estimates")
    L, K, M = ctx.scenario.cells, ctx.scenario.ues_per_cell, ctx.scenario.antennas
    v = np.empty((L, K, M), dtype=complex)
    for j in range(L):
        own = draw.h_hat[j, j]  # (K, M)
        a = own.T @ own.conj() + ctx.z_bar[j]
        v[j] = cholesky_solve(cholesky_factor(a), own.T).T
    return CombinerSet(S_MMSE, v)


def approx_m_mmse(draw: ChannelDraw, ctx: EstimationContext) -> CombinerSet:
    if draw.estimator != EW:
        raise ValueError("approx-m-mmse combining requires element-wise estimates")
    L, K, M = ctx.scenario.cells, ctx.scenario.ues_per_cell, ctx.scenario.antennas
    v = np.empty((L, K, M), dtype=complex)
    for j in range(L):
        hs = _stacked_estimates(draw, j)
        a = hs.T @ hs.conj() + np.diag(ctx.ew.s[j]).astype(complex)
        v[j] = cholesky_solve(cholesky_factor(a), draw.h_hat[j, j].T).T
    return CombinerSet(APPROX_M_MMSE, v)


def _zf_basis(own: np.ndarray, interferers: list, pivot_rtol: float) -> list:
    """Greedy pivoted selection of interferer columns independent of the basis.

    Returns (index, residual ratio) pairs for the kept columns, ratio being
    the norm fraction left after projecting off the already-selected basis.
    """
    basis = [own / np.linalg.norm(own)]
    kept = []
    order = sorted(range(len(interferers)), key=lambda n: -np.linalg.norm(interferers[n]))
    for n in order:
        col = interferers[n]
        resid = col.copy()
        for b in basis:
            resid = resid - b * (b.conj() @ resid)
        ratio = np.linalg.norm(resid) / np.linalg.norm(col)
        if ratio >= pivot_rtol:
            basis.append(resid / np.linalg.norm(resid))
            kept.append((n, ratio))
    return kept


def m_zf(
    draw: ChannelDraw,
    ctx: EstimationContext,
    rank_reduction: bool = False,
    pivot_rtol: float = _DEFAULT_PIVOT_RTOL,
    cond_limit: float = _DEFAULT_COND_LIMIT,
) -> CombinerSet:
    """Null-steering on the pilot-sharing interferers.

    By default every interfering same-pilot estimate enters the basis and a
    Gram condition number above ``cond_limit`` raises RankDeficientError.
    With ``rank_reduction`` enabled, interferer columns that are numerically
    dependent on the already-selected basis are dropped first, which keeps
    degenerate setups (proportional covariances) runnable.
    """
    s = ctx.scenario
    L, K, M = s.cells, s.ues_per_cell, s.antennas
    v = np.empty((L, K, M), dtype=complex)
    for j in range(L):
        for k in range(K):
            g = int(ctx.group_of[j, k])
            peers = [(l, i) for (l, i) in ctx.groups[g] if (l, i) != (j, k)]
            own = draw.h_hat[j, j, k]
            cols = [draw.h_hat[j, l, i] for (l, i) in peers]
            if rank_reduction and cols:
                kept = _zf_basis(own, cols, pivot_rtol)
                while True:
                    hmat = np.column_stack([own] + [cols[n] for n, _ in kept])
                    gram = hmat.conj().T @ hmat
                    if np.linalg.cond(gram) <= cond_limit or not kept:
                        break
                    # Still ill-conditioned: drop the weakest pivot and retry.
                    kept.remove(min(kept, key=lambda item: item[1]))
            else:
                hmat = np.column_stack([own] + cols)
                gram = hmat.conj().T @ hmat
            if np.linalg.cond(gram) > cond_limit:
                raise RankDeficientError(
                    f"estimate Gram at BS {j}, UE {k} has condition number above {cond_limit:.1e}"
                )
            coeff = np.linalg.solve(gram, np.eye(gram.shape[0], 1)[:, 0])
            v[j, k] = hmat @ coeff
    return CombinerSet(M_ZF, v)


def pcp(observation: np.ndarray, gains: np.ndarray, m_half: int) -> np.ndarray:
    """Two-array/two-UE cooperation vectors from the raw de-spread observation.

    ``observation`` is the stacked de-spread pilot signal divided by the
    pilot power; its halves belong to the two distributed sub-arrays. The
    2x2 ``gains`` matrix holds the per-array average channel gains and must
    be invertible. Returns the two combining vectors as columns of an
    (2*m_half, 2) array.
    """
    observation = np.asarray(observation)
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (2, 2):
        raise ValueError("gain matrix must be 2x2")
    if observation.shape != (2 * m_half,):
        raise ValueError("observation length must be 2 * m_half")
    det = gains[0, 0] * gains[1, 1] - gains[0, 1] * gains[1, 0]
    if abs(det) <= 1e-12 * float(np.max(np.abs(gains))) ** 2:
        raise SingularGainError("gain matrix is singular: rows are proportional")
    inv = np.array([[gains[1, 1], -gains[0, 1]], [-gains[1, 0], gains[0, 0]]]) / det
    blocks = observation.reshape(2, m_half) / m_half
    v = np.zeros((2 * m_half, 2), dtype=complex)
    for col in range(2):
        v[:m_half, col] = blocks[0] * inv[0, col]
        v[m_half:, col] = blocks[1] * inv[1, col]
    return v


def make_combiner(draw: ChannelDraw, ctx: EstimationContext, scheme: str, **kwargs) -> CombinerSet:
    if scheme == MR:
        return mr(draw)
    if scheme == M_MMSE:
        return m_mmse(draw, ctx)
    if scheme == S_MMSE:
        return s_mmse(draw, ctx)
    if scheme == M_ZF:
        return m_zf(draw, ctx, **kwargs)
    if scheme == APPROX_M_MMSE:
        return approx_m_mmse(draw, ctx)
    raise ValueError(f"unknown combining scheme '{scheme}'")


def estimator_for_scheme(scheme: str, estimator: str) -> str:
    """Which channel estimates feed a scheme under the configured estimator."""
    if scheme == APPROX_M_MMSE:
        return EW
    if scheme in (M_MMSE, S_MMSE):
        return MMSE
    return estimator


def precoder_normalization(
    ctx: EstimationContext,
    scheme: str,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    **kwargs,
) -> np.ndarray:
    """theta_jk = 1 / mean ||v_jk||^2 over fresh channel draws."""
    if trials < 100:
        raise ValueError("precoder normalization needs at least 100 trials")
    which = estimator_for_scheme(scheme, estimator)
    s = ctx.scenario
    acc = np.zeros((s.cells, s.ues_per_cell))
    with threadpool_limits(limits=1):
        for t in range(trials):
            draw = draw_and_estimate(ctx, rng.child(t), which)
            vset = make_combiner(draw, ctx, scheme, **kwargs)
            acc += np.sum(np.abs(vset.v) ** 2, axis=-1)
    return trials / acc
