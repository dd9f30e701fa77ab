"""Spectral-efficiency bounds and received-power accounting.

Two uplink bounds are implemented: the per-realization effective-SINR bound
SE = prelog * E{log2(1 + gamma)} with

    gamma_jk = |v^H h_hat_jjk|^2
             / (v^H (sum of all other estimate outer products + Z_j) v),

and the use-and-then-forget bound built from moments of the effective
channel, SE = prelog * log2(1 + gamma_lb) with

    gamma_lb = |E{v^H h_own}|^2
             / (sum E{|v^H h|^2} - |E{v^H h_own}|^2 + E{||v||^2} / rho).

The downlink uses the same moment structure with precoded channels. All
expectations are Monte Carlo means over independent coherence blocks; each
trial draws from its own child stream so results do not depend on execution
order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .combining import (
    M_MMSE,
    CombinerSet,
    estimator_for_scheme,
    make_combiner,
    precoder_normalization,
)
from .estimation import (
    EW,
    MMSE,
    ChannelDraw,
    EstimationContext,
    draw_observation,
    estimates_from_observation,
    estimation_statistics,
)
from .numerics import RngStream, cholesky_factor, cholesky_solve
from .scenario import NetworkScenario, isolated_cell

CAPACITY_LB = "capacity-lb"
UATF = "uatf"

_UATF_BATCHES = 10


class NegativeVarianceError(RuntimeError):
    """Monte Carlo noise drove a moment-based SINR denominator non-positive."""


@dataclass
class SeReport:
    scheme: str
    direction: str  # "ul" or "dl"
    bound: str  # "capacity-lb" or "uatf"
    prelog: float
    trials: int
    se: np.ndarray  # (L, K) bits/s/Hz
    se_stderr: np.ndarray  # (L, K)
    sinr_over_m: np.ndarray  # (L, K) mean gamma / M


@dataclass
class PowerDecomposition:
    """Mean received power after combining, split by origin (noise power = 1)."""

    scheme: str
    trials: int
    desired: np.ndarray  # (L, K)
    same_pilot_interf: np.ndarray
    other_interf: np.ndarray
    noise: np.ndarray
    total: np.ndarray  # independently accumulated; equals the component sum


def ul_sinr_instant(draw: ChannelDraw, ctx: EstimationContext, vset: CombinerSet) -> np.ndarray:
    """Instantaneous effective uplink SINR per (cell, UE)."""
    s = ctx.scenario
    L, K = s.cells, s.ues_per_cell
    gamma = np.empty((L, K))
    for j in range(L):
        hs = draw.h_hat[j].reshape(L * K, -1)
        v = vset.v[j]  # (K, M)
        t = v.conj() @ hs.T  # (K, LK)
        zq = np.sum(v.conj().T * (ctx.z[j] @ v.T), axis=0).real
        power = np.abs(t) ** 2
        own = power[np.arange(K), j * K + np.arange(K)]
        gamma[j] = own / (power.sum(axis=1) - own + zq)
    return gamma


def ul_sinr_quadform(draw: ChannelDraw, ctx: EstimationContext, j: int, k: int) -> float:
    """M-MMSE SINR via the deflated quadratic form h^H (B + Z)^{-1} h.

    Independent code path from ul_sinr_instant (no combining vector is
    formed); used to cross-check the combiner-based computation.
    """
    s = ctx.scenario
    hs = draw.h_hat[j].reshape(s.cells * s.ues_per_cell, -1)
    own = draw.h_hat[j, j, k]
    b = hs.T @ hs.conj() - np.outer(own, own.conj()) + ctx.z[j]
    return float((own.conj() @ cholesky_solve(cholesky_factor(b), own)).real)


def _trial_draws(ctx: EstimationContext, stream: RngStream, estimators: set) -> dict:
    h, y = draw_observation(ctx, stream)
    return {
        est: ChannelDraw(est, h, estimates_from_observation(ctx, y, est), y)
        for est in (MMSE, EW)
        if est in estimators
    }


def _run_trials(trials: int, threads: int, worker):
    """Evaluate worker(t) for t in range(trials), results ordered by trial.

    Per-trial matrices are small, so BLAS-internal threading only adds
    synchronization cost; it is clamped to one thread and parallelism comes
    from running whole trials concurrently.
    """
    with threadpool_limits(limits=1):
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(worker, range(trials)))
        return [worker(t) for t in range(trials)]


def ul_se_multi(
    ctx: EstimationContext,
    schemes: list,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    zf_kwargs: dict | None = None,
) -> dict:
    """Capacity-bound uplink SE for several schemes on shared channel draws."""
    if trials < 1:
        raise ValueError("need at least one trial")
    s = ctx.scenario
    needed = {estimator_for_scheme(sch, estimator) for sch in schemes}
    kwargs = {sch: (zf_kwargs or {}) if sch == "m-zf" else {} for sch in schemes}

    def worker(t):
        draws = _trial_draws(ctx, rng.child(t), needed)
        out = {}
        for sch in schemes:
            draw = draws[estimator_for_scheme(sch, estimator)]
            vset = make_combiner(draw, ctx, sch, **kwargs[sch])
            out[sch] = ul_sinr_instant(draw, ctx, vset)
        return out

    results = _run_trials(trials, threads, worker)
    reports = {}
    for sch in schemes:
        gam = np.stack([r[sch] for r in results])  # (T, L, K)
        rate = np.log2(1.0 + gam)
        stderr = rate.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros_like(gam[0])
        reports[sch] = SeReport(
            scheme=sch,
            direction="ul",
            bound=CAPACITY_LB,
            prelog=s.prelog,
            trials=trials,
            se=s.prelog * rate.mean(axis=0),
            se_stderr=s.prelog * stderr,
            sinr_over_m=gam.mean(axis=0) / s.antennas,
        )
    return reports


def ul_se(
    ctx: EstimationContext,
    scheme: str,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    zf_kwargs: dict | None = None,
) -> SeReport:
    return ul_se_multi(ctx, [scheme], trials, rng, estimator, threads, zf_kwargs)[scheme]


def _uatf_sinr(a, p, nn, rho, s):
    num = np.abs(a) ** 2
    denom = p.sum(axis=(2, 3)) - num + nn / rho
    if np.any(denom <= 0):
        raise NegativeVarianceError(
            "moment denominator is non-positive; increase the trial budget"
        )
    return num / denom


def ul_se_uatf_multi(
    ctx: EstimationContext,
    schemes: list,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    zf_kwargs: dict | None = None,
) -> dict:
    """Use-and-then-forget uplink SE from Monte Carlo channel moments."""
    if trials < _UATF_BATCHES:
        raise ValueError(f"need at least {_UATF_BATCHES} trials for the moment bound")
    s = ctx.scenario
    L, K = s.cells, s.ues_per_cell
    needed = {estimator_for_scheme(sch, estimator) for sch in schemes}
    kwargs = {sch: (zf_kwargs or {}) if sch == "m-zf" else {} for sch in schemes}

    def worker(t):
        draws = _trial_draws(ctx, rng.child(t), needed)
        out = {}
        for sch in schemes:
            draw = draws[estimator_for_scheme(sch, estimator)]
            v = make_combiner(draw, ctx, sch, **kwargs[sch]).v
            a = np.empty((L, K), dtype=complex)
            p = np.empty((L, K, L, K))
            for j in range(L):
                t_all = v[j].conj() @ draw.h[j].reshape(L * K, -1).T  # (K, LK)
                p[j] = (np.abs(t_all) ** 2).reshape(K, L, K)
                a[j] = t_all[np.arange(K), j * K + np.arange(K)]
            nn = np.sum(np.abs(v) ** 2, axis=-1)
            out[sch] = (a, p, nn)
        return out

    results = _run_trials(trials, threads, worker)
    reports = {}
    for sch in schemes:
        a = np.stack([r[sch][0] for r in results])
        p = np.stack([r[sch][1] for r in results])
        nn = np.stack([r[sch][2] for r in results])
        gamma = _uatf_sinr(a.mean(axis=0), p.mean(axis=0), nn.mean(axis=0), s.rho_ul, s)
        se = s.prelog * np.log2(1.0 + gamma)
        # Batch means for the Monte Carlo uncertainty of the moment ratio.
        edges = np.array_split(np.arange(trials), _UATF_BATCHES)
        batch_se = []
        for idx in edges:
            try:
                g_b = _uatf_sinr(a[idx].mean(axis=0), p[idx].mean(axis=0), nn[idx].mean(axis=0), s.rho_ul, s)
                batch_se.append(s.prelog * np.log2(1.0 + g_b))
            except NegativeVarianceError:
                continue
        if len(batch_se) >= 2:
            stderr = np.std(np.stack(batch_se), axis=0, ddof=1) / np.sqrt(len(batch_se))
        else:
            stderr = np.full((L, K), np.nan)
        reports[sch] = SeReport(
            scheme=sch,
            direction="ul",
            bound=UATF,
            prelog=s.prelog,
            trials=trials,
            se=se,
            se_stderr=stderr,
            sinr_over_m=gamma / s.antennas,
        )
    return reports


def ul_se_uatf(
    ctx: EstimationContext,
    scheme: str,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    zf_kwargs: dict | None = None,
) -> SeReport:
    return ul_se_uatf_multi(ctx, [scheme], trials, rng, estimator, threads, zf_kwargs)[scheme]


def dl_se_multi(
    ctx: EstimationContext,
    schemes: list,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    theta: dict | None = None,
    theta_trials: int = 500,
    zf_kwargs: dict | None = None,
) -> dict:
    """Downlink SE with Monte Carlo moments of the precoded channels.

    Precoder normalizations are estimated on a dedicated substream, then the
    moment expectations run on independent draws to avoid optimistic bias.
    """
    if trials < _UATF_BATCHES:
        raise ValueError(f"need at least {_UATF_BATCHES} trials for the moment bound")
    s = ctx.scenario
    L, K = s.cells, s.ues_per_cell
    kwargs = {sch: (zf_kwargs or {}) if sch == "m-zf" else {} for sch in schemes}
    if theta is None:
        theta = {
            sch: precoder_normalization(
                ctx, sch, theta_trials, rng.child(-1), estimator, **kwargs[sch]
            )
            for sch in schemes
        }
    needed = {estimator_for_scheme(sch, estimator) for sch in schemes}

    def worker(t):
        draws = _trial_draws(ctx, rng.child(t), needed)
        out = {}
        for sch in schemes:
            draw = draws[estimator_for_scheme(sch, estimator)]
            vset = make_combiner(draw, ctx, sch, **kwargs[sch])
            w = np.sqrt(theta[sch])[..., None] * vset.v  # (L, K, M)
            a = np.empty((L, K), dtype=complex)
            p = np.empty((L, K, L, K))
            for l in range(L):
                # Channels from every UE (j, k) to BS l, against BS l's precoders.
                t_all = w[l].conj() @ draw.h[l].reshape(L * K, -1).T  # (K_prec, LK)
                p[:, :, l, :] = (np.abs(t_all) ** 2).T.reshape(L, K, K)
                a[l] = t_all[np.arange(K), l * K + np.arange(K)]
            out[sch] = (a, p)
        return out

    results = _run_trials(trials, threads, worker)
    reports = {}
    for sch in schemes:
        a = np.stack([r[sch][0] for r in results])
        p = np.stack([r[sch][1] for r in results])
        gamma = _dl_sinr(a.mean(axis=0), p.mean(axis=0), s.rho_dl)
        se = s.prelog * np.log2(1.0 + gamma)
        edges = np.array_split(np.arange(trials), _UATF_BATCHES)
        batch_se = []
        for idx in edges:
            try:
                g_b = _dl_sinr(a[idx].mean(axis=0), p[idx].mean(axis=0), s.rho_dl)
                batch_se.append(s.prelog * np.log2(1.0 + g_b))
            except NegativeVarianceError:
                continue
        if len(batch_se) >= 2:
            stderr = np.std(np.stack(batch_se), axis=0, ddof=1) / np.sqrt(len(batch_se))
        else:
            stderr = np.full((L, K), np.nan)
        reports[sch] = SeReport(
            scheme=sch,
            direction="dl",
            bound=UATF,
            prelog=s.prelog,
            trials=trials,
            se=se,
            se_stderr=stderr,
            sinr_over_m=gamma / s.antennas,
        )
    return reports


def _dl_sinr(a, p, rho_dl):
    num = np.abs(a) ** 2
    denom = p.sum(axis=(2, 3)) - num + 1.0 / rho_dl
    if np.any(denom <= 0):
        raise NegativeVarianceError(
            "moment denominator is non-positive; increase the trial budget"
        )
    return num / denom


def dl_se(
    ctx: EstimationContext,
    scheme: str,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    theta: np.ndarray | None = None,
    theta_trials: int = 500,
    zf_kwargs: dict | None = None,
) -> SeReport:
    th = None if theta is None else {scheme: theta}
    return dl_se_multi(
        ctx, [scheme], trials, rng, estimator, threads, th, theta_trials, zf_kwargs
    )[scheme]


def power_decomposition(
    ctx: EstimationContext,
    scheme: str,
    trials: int,
    rng: RngStream,
    estimator: str = MMSE,
    threads: int = 1,
    zf_kwargs: dict | None = None,
) -> PowerDecomposition:
    """Mean uplink received power after combining, split by origin.

    Conditioned on the estimates, the received power decomposes exactly into
    the coherent estimate terms plus the estimation-error quadratic forms and
    the filtered noise; interferers' error terms are attributed to the
    interference class of their pilot, the own-channel error term to the
    noise component. The components therefore sum to the independently
    accumulated total mean received power.
    """
    s = ctx.scenario
    L, K = s.cells, s.ues_per_cell
    which = estimator_for_scheme(scheme, estimator)
    kwargs = (zf_kwargs or {}) if scheme == "m-zf" else {}
    err_b = [
        [[ctx.error_factor(j, l, i).sampling_matrix() for i in range(K)] for l in range(L)]
        for j in range(L)
    ]

    def worker(t):
        draws = _trial_draws(ctx, rng.child(t), {which})
        draw = draws[which]
        vset = make_combiner(draw, ctx, scheme, **kwargs)
        des = np.zeros((L, K))
        same = np.zeros((L, K))
        other = np.zeros((L, K))
        noise = np.zeros((L, K))
        total = np.zeros((L, K))
        for j in range(L):
            hs = draw.h_hat[j].reshape(L * K, -1)
            for k in range(K):
                v = vset.v[j, k]
                coh = np.abs(hs.conj() @ v) ** 2  # (LK,)
                errq = np.array(
                    [
                        np.sum(np.abs(err_b[j][l][i].conj().T @ v) ** 2)
                        for l in range(L)
                        for i in range(K)
                    ]
                )
                vnorm = float(np.sum(np.abs(v) ** 2))
                g = int(ctx.group_of[j, k])
                own_idx = j * K + k
                des[j, k] = s.rho_ul * coh[own_idx]
                noise[j, k] = vnorm + s.rho_ul * errq[own_idx]
                for l in range(L):
                    for i in range(K):
                        idx = l * K + i
                        if idx == own_idx:
                            continue
                        term = s.rho_ul * (coh[idx] + errq[idx])
                        if int(ctx.group_of[l, i]) == g:
                            same[j, k] += term
                        else:
                            other[j, k] += term
                total[j, k] = s.rho_ul * (coh.sum() + errq.sum()) + vnorm
        return des, same, other, noise, total

    results = _run_trials(trials, threads, worker)
    sums = [np.mean([r[i] for r in results], axis=0) for i in range(5)]
    return PowerDecomposition(
        scheme=scheme,
        trials=trials,
        desired=sums[0],
        same_pilot_interf=sums[1],
        other_interf=sums[2],
        noise=sums[3],
        total=sums[4],
    )


def time_splitting_se(
    s: NetworkScenario, trials: int, rng: RngStream, threads: int = 1
) -> SeReport:
    """Cells active in disjoint coherence-block shares, MMSE combining.

    Each cell runs in isolation (no inter-cell channels) and the SE picks up
    an extra prelog factor 1/L for the time share.
    """
    L, K = s.cells, s.ues_per_cell
    se = np.empty((L, K))
    stderr = np.empty((L, K))
    sinr = np.empty((L, K))
    for j in range(L):
        ictx = estimation_statistics(isolated_cell(s, j))
        rep = ul_se(ictx, M_MMSE, trials, rng.child(j), threads=threads)
        se[j] = rep.se[0] / L
        stderr[j] = rep.se_stderr[0] / L
        sinr[j] = rep.sinr_over_m[0]
    return SeReport(
        scheme="time-splitting",
        direction="ul",
        bound=CAPACITY_LB,
        prelog=s.prelog / L,
        trials=trials,
        se=se,
        se_stderr=stderr,
        sinr_over_m=sinr,
    )
