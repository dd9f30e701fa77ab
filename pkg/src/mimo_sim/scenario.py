"""Network assembly: per-link covariance matrices scaled to target SNRs.

The experiments are parameterized by average per-antenna SNRs rather than by
geometry: every (receiving base station j, cell l, UE i) link gets a target
SNR and the link covariance is rescaled so that rho_ul * tr(R)/M matches it
exactly. Pilot-sharing UEs see similar angles at every base station (a
cell-edge cluster), modeled as a per-BS base angle plus a small per-link
jitter, which is what makes pilot contamination severe but the covariance
matrices still linearly independent.

Pilot sequences are never materialized: all statistics depend on the
de-spread pilot observation only, so the simulation works directly in that
domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import (
    CovarianceMatrix,
    ExpCorr,
    ExpLogNormal,
    LogNormalDiag,
    OneRing,
    build_model,
)
from .numerics import RngStream


class ConfigError(ValueError):
    """Inconsistent or out-of-range experiment configuration."""


MODEL_NAMES = ("one-ring", "exp-corr", "lognormal", "exp-lognormal")


@dataclass(frozen=True)
class SnrTargets:
    """Average per-antenna SNR targets, in dB."""

    intracell_db: float = -6.0
    intercell_db: tuple[float, float] = (-11.5, -6.3)

    def __post_init__(self):
        lo, hi = self.intercell_db
        if lo > hi:
            raise ConfigError(f"intercell_db range [{lo}, {hi}] has lo > hi")


@dataclass(frozen=True)
class ScenarioSpec:
    """Static description of the network to build."""

    cells: int
    ues_per_cell: int
    antennas: int
    coherence_block: int = 200
    rho_tr: float = 1.0
    rho_ul: float = 1.0
    rho_dl: float = 1.0
    snr: SnrTargets = field(default_factory=SnrTargets)
    model: str = "exp-corr"
    corr_r: float = 0.5
    spread_deg: float = 15.0
    sigma_db: float = 4.0
    # "spread": pilot groups sit on opposite sides of the BS and the
    # interfering cells step away from the served UE by aoa_step_deg, which
    # keeps same-pilot covariance matrices linearly independent while the
    # whole constellation stays symmetric; "clustered": every UE shares one
    # base angle per BS, the adversarial near-dependent case.
    aoa_layout: str = "spread"
    aoa_step_deg: float = 80.0
    aoa_jitter_deg: float = 5.0
    # "spaced": intercell SNRs evenly spaced over the range, interleaved over
    # the links of each BS; "random": every intercell link draws uniformly
    # from the range (many UEs spread over the cell-edge area).
    intercell_layout: str = "spaced"

    def __post_init__(self):
        if self.cells < 1 or self.ues_per_cell < 1 or self.antennas < 1:
            raise ConfigError("cells, ues_per_cell, and antennas must be >= 1")
        if min(self.rho_tr, self.rho_ul, self.rho_dl) <= 0:
            raise ConfigError("all powers must be positive")
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown covariance model '{self.model}'")
        if self.intercell_layout not in ("spaced", "random"):
            raise ConfigError(f"unknown intercell layout '{self.intercell_layout}'")
        if self.aoa_layout not in ("spread", "clustered"):
            raise ConfigError(f"unknown AoA layout '{self.aoa_layout}'")
        if self.ues_per_cell > self.coherence_block:
            raise ConfigError("pilot length K exceeds the coherence block")


@dataclass
class NetworkScenario:
    """Immutable network realization shared read-only across trials."""

    cells: int
    ues_per_cell: int
    antennas: int
    tau_p: int
    tau_c: int
    rho_tr: float
    rho_ul: float
    rho_dl: float
    cov: list  # cov[j][l][i] -> CovarianceMatrix at BS j for UE i of cell l
    pilot_of: np.ndarray  # (cells, ues_per_cell) pilot indices
    snr_db: np.ndarray | None = None  # target SNR per link, for reporting

    def __post_init__(self):
        L, K, M = self.cells, self.ues_per_cell, self.antennas
        if not (1 <= self.tau_p <= self.tau_c):
            raise ConfigError(f"need 1 <= tau_p <= tau_c, got {self.tau_p}, {self.tau_c}")
        if min(self.rho_tr, self.rho_ul, self.rho_dl) <= 0:
            raise ConfigError("all powers must be positive")
        self.pilot_of = np.asarray(self.pilot_of, dtype=int)
        if self.pilot_of.shape != (L, K):
            raise ConfigError(f"pilot map shape {self.pilot_of.shape} != ({L}, {K})")
        if self.pilot_of.min() < 0 or self.pilot_of.max() >= self.tau_p:
            raise ConfigError("pilot indices must lie in [0, tau_p)")
        if len(self.cov) != L:
            raise ConfigError("covariance table must have one row per receiving BS")
        for j in range(L):
            if len(self.cov[j]) != L or any(len(self.cov[j][l]) != K for l in range(L)):
                raise ConfigError("covariance table must be cells x cells x ues_per_cell")
            for l in range(L):
                for i in range(K):
                    r = self.cov[j][l][i]
                    if r.dim != M:
                        raise ConfigError(f"link ({j},{l},{i}) has dimension {r.dim} != {M}")
                    if r.trace <= 0:
                        raise ConfigError(f"link ({j},{l},{i}) has non-positive trace")

    @property
    def prelog(self) -> float:
        return 1.0 - self.tau_p / self.tau_c


def pilot_groups(s: NetworkScenario) -> list:
    """UE index groups sharing a pilot: groups[g] is a list of (cell, ue)."""
    groups = [[] for _ in range(s.tau_p)]
    for l in range(s.cells):
        for i in range(s.ues_per_cell):
            groups[int(s.pilot_of[l, i])].append((l, i))
    return groups


def _link_model(spec: ScenarioSpec, aoa: float):
    if spec.model == "one-ring":
        return OneRing(1.0, aoa, np.deg2rad(spec.spread_deg))
    if spec.model == "exp-corr":
        return ExpCorr(1.0, spec.corr_r, aoa)
    if spec.model == "lognormal":
        return LogNormalDiag(1.0, spec.sigma_db)
    return ExpLogNormal(1.0, spec.corr_r, aoa, spec.sigma_db)


def _target_snr_db(spec: ScenarioSpec, j: int, l: int, i: int, gen: np.random.Generator) -> float:
    if l == j:
        return spec.snr.intracell_db
    lo, hi = spec.snr.intercell_db
    if spec.intercell_layout == "random":
        return float(gen.uniform(lo, hi))
    # Evenly spaced over all intercell links of this BS, interleaved so that
    # every pilot group contains both strong and weak contaminators.
    others = [c for c in range(spec.cells) if c != j]
    count = len(others) * spec.ues_per_cell
    rank = others.index(l) * spec.ues_per_cell + i
    if count == 1:
        return hi
    return hi - (hi - lo) * rank / (count - 1)


def build_scenario(spec: ScenarioSpec, rng: RngStream) -> NetworkScenario:
    """Assemble a network realization from a spec and a seeded stream.

    Angle and SNR draws use an M-independent substream so that rebuilding the
    same spec at a different antenna count keeps the same network layout;
    the per-link log-normal array variations use dedicated substreams.
    """
    L, K, M = spec.cells, spec.ues_per_cell, spec.antennas
    layout_gen = rng.child(0).generator()
    jitter = np.deg2rad(spec.aoa_jitter_deg)
    step = np.deg2rad(spec.aoa_step_deg)

    base_aoa = layout_gen.uniform(-np.pi, np.pi, size=L)
    aoa = np.empty((L, L, K))
    snr_db = np.empty((L, L, K))
    for j in range(L):
        others = [c for c in range(L) if c != j]
        for l in range(L):
            for i in range(K):
                theta = base_aoa[j]
                if spec.aoa_layout == "spread":
                    theta += i * 2.0 * np.pi / K
                    if l != j:
                        theta += step * (others.index(l) + 1)
                aoa[j, l, i] = theta + layout_gen.uniform(-jitter, jitter)
                snr_db[j, l, i] = _target_snr_db(spec, j, l, i, layout_gen)

    cov = []
    link = 0
    for j in range(L):
        row = []
        for l in range(L):
            cell = []
            for i in range(K):
                link += 1
                r = build_model(_link_model(spec, aoa[j, l, i]), M, rng.child(link))
                target = 10.0 ** (snr_db[j, l, i] / 10.0)
                cell.append(r.scaled(target * M / (spec.rho_ul * r.trace)))
            row.append(cell)
        cov.append(row)

    pilot_of = np.tile(np.arange(K), (L, 1))
    return NetworkScenario(
        cells=L,
        ues_per_cell=K,
        antennas=M,
        tau_p=K,
        tau_c=spec.coherence_block,
        rho_tr=spec.rho_tr,
        rho_ul=spec.rho_ul,
        rho_dl=spec.rho_dl,
        cov=cov,
        pilot_of=pilot_of,
        snr_db=snr_db,
    )


def scenario_for_antennas(spec: ScenarioSpec, m: int, rng: RngStream) -> NetworkScenario:
    """Rebuild the same network layout with a different antenna count."""
    return build_scenario(replace(spec, antennas=m), rng)


def two_user_scenario(
    cov1: CovarianceMatrix,
    cov2: CovarianceMatrix,
    rho_tr: float = 1.0,
    rho_ul: float = 1.0,
    rho_dl: float = 1.0,
    tau_c: int = 200,
) -> NetworkScenario:
    """One BS, two UEs sharing the single pilot (the canonical contaminated pair)."""
    return NetworkScenario(
        cells=1,
        ues_per_cell=2,
        antennas=cov1.dim,
        tau_p=1,
        tau_c=tau_c,
        rho_tr=rho_tr,
        rho_ul=rho_ul,
        rho_dl=rho_dl,
        cov=[[[cov1, cov2]]],
        pilot_of=np.array([[0, 0]]),
    )


def isolated_cell(s: NetworkScenario, j: int) -> NetworkScenario:
    """Cell j alone, with no inter-cell channels (time-splitting reference)."""
    K = s.ues_per_cell
    return NetworkScenario(
        cells=1,
        ues_per_cell=K,
        antennas=s.antennas,
        tau_p=s.tau_p,
        tau_c=s.tau_c,
        rho_tr=s.rho_tr,
        rho_ul=s.rho_ul,
        rho_dl=s.rho_dl,
        cov=[[[s.cov[j][j][i] for i in range(K)]]],
        pilot_of=s.pilot_of[j : j + 1],
        snr_db=None if s.snr_db is None else s.snr_db[j : j + 1, j : j + 1],
    )
