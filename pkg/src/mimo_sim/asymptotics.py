"""Deterministic equivalents of the normalized SINRs and independence margins.

The normalized M-MMSE uplink SINR gamma/M concentrates, as the array grows,
on a Schur complement of a Gram matrix built from the weighted covariance
vectors

    u_l = vec(Z^{-1/2} R_l Q^{-1/2}) / sqrt(M),

restricted to the UEs sharing the target's pilot: with G_ab = <u_a, u_b>
(computed as traces of cached solve products, never via matrix square
roots), the limit is

    delta = G_own,own - b^H C^{-1} b,

where b stacks the inner products against the interferers and C is the
interferers' Gram matrix. The downlink limit and the element-wise-estimator
limit follow the same pattern with squared weighting and diagonal-only
sums, respectively. The linear-independence margin of a covariance family
is the same Schur complement computed on either the plain Frobenius Gram or
the (Q, Z)-weighted Gram; a positive margin at the pinned index certifies
that the SINR limit is strictly positive.

All limits here are evaluated at the scenario's finite M; they are finite-M
deterministic equivalents, not claims about a true limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceMatrix
from .estimation import EstimationContext
from .numerics import hermitian_solve, trace_product

FROBENIUS = "frobenius"
WEIGHTED = "weighted"

_COND_LIMIT = 1e12
_DENOM_FLOOR = 1e-14


class DegenerateDenominatorError(ValueError):
    """A normalization scalar vanished; the scenario violates the trace bound."""


class GramSingularError(ValueError):
    """The interferer Gram matrix is numerically singular (dependent covariances)."""


@dataclass
class TwoUserDeltas:
    beta11: float
    beta22: float
    beta12: complex
    delta1: float
    delta2: float


@dataclass
class DownlinkDeltas:
    beta11p: float
    beta22p: float
    beta12p: complex
    delta1p: float
    delta2p: float
    # Predicted large-array limits of gamma_dl / M.
    dl_limit1: float
    dl_limit2: float


@dataclass
class EwUpsilons:
    alpha11: float
    alpha22: float
    alpha12: float
    alpha11p: float
    alpha22p: float
    alpha12p: float
    upsilon1: float
    upsilon2: float
    upsilon1p: float
    upsilon2p: float
    # Predicted large-array limits of the use-and-then-forget SINR / M.
    uatf_limit1: float
    uatf_limit2: float


@dataclass
class MulticellDelta:
    beta_own: float
    b: np.ndarray  # (P,) inner products against the pilot-sharing interferers
    c: np.ndarray  # (P, P) Hermitian PSD interferer Gram
    delta: float
    cond_c: float


@dataclass
class MarginResult:
    margin: float
    coefficients: np.ndarray  # minimizing lambda, pinned entry = 1


@dataclass
class GramDiagnostics:
    cond_c: float
    u_margin: float
    frobenius_margin: float
    independent: bool


def _require_two_user(ctx: EstimationContext):
    s = ctx.scenario
    if not (s.cells == 1 and s.ues_per_cell == 2 and s.tau_p == 1):
        raise ValueError("expected the canonical two-user single-pilot scenario")


def _weighted_gram(ctx: EstimationContext, j: int, members: list, power: int = 1) -> np.ndarray:
    """Gram of the weighted covariance vectors, Z^{-power} in the middle.

    Entry (a, b) equals tr(Q^{-1} R_a Z^{-power} R_b) / M, computed from the
    cached Q^{-1}R products and Cholesky solves against Z. The cached
    estimator matrices hold R Q^{-1}, so tr(Q^{-1} R_a Y) = <vec(R_a Q^{-1}),
    vec(Y)>.
    """
    m = ctx.antennas
    ys = []
    for (l, i) in members:
        y = ctx.z_solve(j, ctx.scenario.cov[j][l][i].matrix)
        for _ in range(power - 1):
            y = ctx.z_solve(j, y)
        ys.append(y)
    n = len(members)
    g = np.empty((n, n), dtype=complex)
    for a, (l, i) in enumerate(members):
        for b in range(n):
            g[a, b] = np.vdot(ctx.x_h[j, l, i], ys[b]) / m
    return 0.5 * (g + g.conj().T)


def two_user_delta(ctx: EstimationContext) -> TwoUserDeltas:
    """Limits of gamma_ul / M for the contaminated pair under MMSE combining."""
    _require_two_user(ctx)
    g = _weighted_gram(ctx, 0, [(0, 0), (0, 1)])
    beta11, beta22 = float(g[0, 0].real), float(g[1, 1].real)
    beta12 = complex(g[0, 1])
    if min(beta11, beta22) <= _DENOM_FLOOR:
        raise DegenerateDenominatorError("a normalized estimate trace is numerically zero")
    return TwoUserDeltas(
        beta11=beta11,
        beta22=beta22,
        beta12=beta12,
        delta1=beta11 - abs(beta12) ** 2 / beta22,
        delta2=beta22 - abs(beta12) ** 2 / beta11,
    )


def dl_delta_prime(ctx: EstimationContext) -> DownlinkDeltas:
    """Squared-weighting traces and the downlink limit rho_dl * delta^2 / delta'."""
    _require_two_user(ctx)
    d = two_user_delta(ctx)
    g2 = _weighted_gram(ctx, 0, [(0, 0), (0, 1)], power=2)
    b11p, b22p = float(g2[0, 0].real), float(g2[1, 1].real)
    b12p = complex(g2[0, 1])
    delta1p = (
        b11p
        - 2.0 * (d.beta12 * np.conj(b12p)).real / d.beta22
        + abs(d.beta12) ** 2 * b22p / d.beta22**2
    )
    delta2p = (
        b22p
        - 2.0 * (np.conj(d.beta12) * b12p).real / d.beta11
        + abs(d.beta12) ** 2 * b11p / d.beta11**2
    )
    if min(delta1p, delta2p) <= 0:
        raise DegenerateDenominatorError("squared-weighting trace is non-positive")
    rho = ctx.scenario.rho_dl
    return DownlinkDeltas(
        beta11p=b11p,
        beta22p=b22p,
        beta12p=b12p,
        delta1p=delta1p,
        delta2p=delta2p,
        dl_limit1=rho * d.delta1**2 / delta1p,
        dl_limit2=rho * d.delta2**2 / delta2p,
    )


def ew_upsilon(ctx: EstimationContext) -> EwUpsilons:
    """Diagonal-only limits for the element-wise estimator pipeline."""
    _require_two_user(ctx)
    d1 = ctx.ew.d[0, 0, 0]
    d2 = ctx.ew.d[0, 0, 1]
    lam = ctx.ew.lam[0, 0]
    s = ctx.ew.s[0]
    m = ctx.antennas

    def alpha(da, db, s_power):
        return float(np.sum(da * db / (s**s_power * lam)) / m)

    a11, a22, a12 = alpha(d1, d1, 1), alpha(d2, d2, 1), alpha(d1, d2, 1)
    a11p, a22p, a12p = alpha(d1, d1, 2), alpha(d2, d2, 2), alpha(d1, d2, 2)
    if min(a11, a22) <= _DENOM_FLOOR:
        raise DegenerateDenominatorError("a diagonal moment sum is numerically zero")
    ups1 = a11 - a12**2 / a22
    ups2 = a22 - a12**2 / a11
    ups1p = a11p - 2.0 * a12 * a12p / a22 + a12**2 * a22p / a22**2
    ups2p = a22p - 2.0 * a12 * a12p / a11 + a12**2 * a11p / a11**2
    rho = ctx.scenario.rho_ul
    return EwUpsilons(
        alpha11=a11,
        alpha22=a22,
        alpha12=a12,
        alpha11p=a11p,
        alpha22p=a22p,
        alpha12p=a12p,
        upsilon1=ups1,
        upsilon2=ups2,
        upsilon1p=ups1p,
        upsilon2p=ups2p,
        uatf_limit1=rho * ups1**2 / ups1p,
        uatf_limit2=rho * ups2**2 / ups2p,
    )


def multicell_delta(ctx: EstimationContext, j: int, k: int) -> MulticellDelta:
    """Limit of gamma_ul / M for UE (j, k) under M-MMSE combining."""
    g_idx = int(ctx.group_of[j, k])
    members = [(j, k)] + [(l, i) for (l, i) in ctx.groups[g_idx] if (l, i) != (j, k)]
    g = _weighted_gram(ctx, j, members)
    beta_own = float(g[0, 0].real)
    if beta_own <= _DENOM_FLOOR:
        raise DegenerateDenominatorError("normalized estimate trace is numerically zero")
    b = g[1:, 0].copy()
    c = g[1:, 1:].copy()
    if b.size == 0:
        return MulticellDelta(beta_own=beta_own, b=b, c=c, delta=beta_own, cond_c=1.0)
    cond = float(np.linalg.cond(c))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise GramSingularError(
            f"interferer Gram for UE ({j},{k}) has condition number {cond:.3e}"
        )
    delta = beta_own - float((b.conj() @ np.linalg.solve(c, b)).real)
    return MulticellDelta(beta_own=beta_own, b=b, c=c, delta=delta, cond_c=cond)


def _as_matrix(r) -> np.ndarray:
    return r.matrix if isinstance(r, CovarianceMatrix) else np.asarray(r, dtype=complex)


def _pinned_schur(g: np.ndarray, index: int) -> MarginResult:
    """Minimize lambda^T G lambda over real lambda with lambda[index] = 1.

    Uses the pseudo-inverse of the free block, so linearly dependent families
    return their exact infimum (zero) instead of failing.
    """
    n = g.shape[0]
    others = [a for a in range(n) if a != index]
    gv = g[np.ix_(others, [index])][:, 0]
    sub = g[np.ix_(others, others)]
    lam_free = -np.linalg.pinv(sub, hermitian=True) @ gv
    margin = float(g[index, index] + 2.0 * gv @ lam_free + lam_free @ sub @ lam_free)
    coeff = np.ones(n)
    for pos, a in enumerate(others):
        coeff[a] = lam_free[pos]
    return MarginResult(margin=max(margin, 0.0), coefficients=coeff)


def independence_margin(
    r_list: list,
    index: int,
    mode: str = FROBENIUS,
    q: np.ndarray | None = None,
    z: np.ndarray | None = None,
) -> MarginResult:
    """inf over real lambda (pinned at ``index``) of the normalized Gram quadratic.

    In Frobenius mode the quadratic is ||sum lambda_l R_l||_F^2 / M; in
    weighted mode it is the (Q, Z)-weighted trace form, which upper-bounds a
    positive Frobenius margin away from zero. The infimum is computed in
    closed form via the Gram Schur complement.
    """
    if len(r_list) < 2:
        raise ValueError("need at least two covariance matrices")
    if not 0 <= index < len(r_list):
        raise ValueError("pinned index out of range")
    mats = [_as_matrix(r) for r in r_list]
    m = mats[0].shape[0]
    n = len(mats)
    if mode == FROBENIUS:
        g = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                g[a, b] = g[b, a] = trace_product(mats[a], mats[b]).real / m
    elif mode == WEIGHTED:
        if q is None or z is None:
            raise ValueError("weighted mode needs the Q and Z matrices")
        xs = [hermitian_solve(q, r) for r in mats]
        ys = [hermitian_solve(z, r) for r in mats]
        g = np.empty((n, n))
        for a in range(n):
            for b in range(n):
                g[a, b] = (trace_product(xs[a], ys[b]) / m).real
        g = 0.5 * (g + g.T)
    else:
        raise ValueError(f"unknown margin mode '{mode}'")
    return _pinned_schur(g, index)


def gram_diagnostics(ctx: EstimationContext, j: int, k: int) -> GramDiagnostics:
    """Condition number of the interferer Gram and the matching margins."""
    g_idx = int(ctx.group_of[j, k])
    members = [(j, k)] + [(l, i) for (l, i) in ctx.groups[g_idx] if (l, i) != (j, k)]
    g = _weighted_gram(ctx, j, members)
    beta_own = float(g[0, 0].real)
    c = g[1:, 1:]
    cond = float(np.linalg.cond(c)) if c.size else 1.0
    u_margin = _pinned_schur(g.real, 0).margin if len(members) > 1 else beta_own
    r_group = [ctx.scenario.cov[j][l][i] for (l, i) in members]
    if len(members) > 1:
        frob = independence_margin(r_group, 0, FROBENIUS).margin
        frob_scale = trace_product(r_group[0].matrix, r_group[0].matrix).real / ctx.antennas
    else:
        frob = frob_scale = 1.0
    independent = bool(
        u_margin > 1e-9 * max(beta_own, _DENOM_FLOOR) and frob > 1e-9 * frob_scale
    )
    return GramDiagnostics(
        cond_c=cond,
        u_margin=u_margin,
        frobenius_margin=frob,
        independent=independent,
    )


def asymptotic_report(ctx: EstimationContext) -> dict:
    """JSON-ready summary: per-UE deltas, margins, and Gram diagnostics."""
    s = ctx.scenario
    per_ue = {}
    for j in range(s.cells):
        for k in range(s.ues_per_cell):
            diag = gram_diagnostics(ctx, j, k)
            entry = {
                "gram_condition": diag.cond_c,
                "weighted_margin": diag.u_margin,
                "frobenius_margin": diag.frobenius_margin,
                "independent": diag.independent,
            }
            try:
                md = multicell_delta(ctx, j, k)
                entry["delta"] = md.delta
                entry["beta_own"] = md.beta_own
            except (GramSingularError, DegenerateDenominatorError) as exc:
                entry["delta"] = None
                entry["delta_error"] = type(exc).__name__
            per_ue[f"{j}:{k}"] = entry
    report = {"antennas": s.antennas, "per_ue": per_ue}
    if s.cells == 1 and s.ues_per_cell == 2 and s.tau_p == 1:
        d = two_user_delta(ctx)
        report["two_user"] = {
            "beta11": d.beta11,
            "beta22": d.beta22,
            "beta12": [d.beta12.real, d.beta12.imag],
            "delta1": d.delta1,
            "delta2": d.delta2,
        }
        try:
            dd = dl_delta_prime(ctx)
            report["two_user"]["dl_limit1"] = dd.dl_limit1
            report["two_user"]["dl_limit2"] = dd.dl_limit2
        except DegenerateDenominatorError:
            pass
        try:
            ups = ew_upsilon(ctx)
            report["two_user"]["uatf_limit1"] = ups.uatf_limit1
            report["two_user"]["uatf_limit2"] = ups.uatf_limit2
        except DegenerateDenominatorError:
            pass
    return report
