"""Experiment runner: figure presets, custom configs, deterministic outputs.

Each run writes into the output directory:

* ``results.csv``   one row per (scheme, antenna count or sweep point, UE),
  RFC-4180 quoting, LF line endings, fixed column order;
* ``asymptotics.json``  per-point deterministic equivalents and margins;
* ``manifest.json``  the fully resolved config echo, seed, versions;
* preset-specific extras: ``spectra.csv`` (eigenvalue curves), ``power.csv``
  (received-power decomposition), ``pcp.csv`` (cooperation-fixture decay).

Identical (config, seed) pairs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy
import yaml

from . import __version__
from .asymptotics import (
    DegenerateDenominatorError,
    GramSingularError,
    asymptotic_report,
)
from .combining import (
    APPROX_M_MMSE,
    M_MMSE,
    M_ZF,
    MR,
    PCP,
    S_MMSE,
    RankDeficientError,
    SingularGainError,
    m_zf,
    pcp,
)
from .covariance import (
    ExpCorr,
    LogNormalDiag,
    OneRing,
    QuadratureFailureError,
    eigen_spectrum,
    exp_corr,
    lognormal_diag,
    one_ring,
)
from .estimation import ChannelDraw, estimation_statistics
from .numerics import NotPSDError, RngStream, SingularMatrixError
from .scenario import (
    ConfigError,
    NetworkScenario,
    ScenarioSpec,
    SnrTargets,
    build_scenario,
)
from .se import (
    CAPACITY_LB,
    UATF,
    NegativeVarianceError,
    dl_se_multi,
    time_splitting_se,
    ul_se_multi,
    ul_se_uatf_multi,
    ul_sinr_instant,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    NotPSDError,
    SingularMatrixError,
    QuadratureFailureError,
    RankDeficientError,
    SingularGainError,
    NegativeVarianceError,
    GramSingularError,
    DegenerateDenominatorError,
)

CSV_COLUMNS = (
    "preset",
    "scheme",
    "estimator",
    "direction",
    "M",
    "ue",
    "se_mean",
    "se_stderr",
    "sinr_over_m",
    "delta_prediction",
    "seed",
)

_SE_SCHEMES = (MR, S_MMSE, M_MMSE, M_ZF, APPROX_M_MMSE)


class RunFailureError(RuntimeError):
    """A numerical failure, annotated with the experiment coordinates."""


@dataclass
class ExperimentConfig:
    kind: str = "se-curve"
    preset: str | None = None
    seed: int = 1
    trials: int = 500
    threads: int = 0
    estimator: str = "mmse"
    direction: str = "ul"
    bound: str = CAPACITY_LB
    schemes: tuple = (MR, S_MMSE, M_MMSE, M_ZF)
    time_splitting: bool = False
    zf_rank_reduction: bool = True
    antennas: tuple = (32, 64, 128, 256)
    sigma_sweep: tuple = ()
    spectra_draws: int = 100
    scenario: ScenarioSpec = field(
        default_factory=lambda: ScenarioSpec(cells=4, ues_per_cell=2, antennas=1)
    )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schemes"] = list(self.schemes)
        d["antennas"] = list(self.antennas)
        d["sigma_sweep"] = list(self.sigma_sweep)
        scen = d["scenario"]
        scen.pop("antennas", None)
        scen["snr"] = {
            "intracell_db": self.scenario.snr.intracell_db,
            "intercell_db": list(self.scenario.snr.intercell_db),
        }
        d.pop("threads", None)  # runtime knob; outputs must not depend on it
        return d


# Preset name -> (description, config overrides).
PRESETS: dict = {
    "fig3": (
        "average eigenvalue spectra of the three covariance models, M=100",
        {
            "kind": "spectra",
            "antennas": [100],
            "scenario": {"cells": 1, "ues_per_cell": 1},
        },
    ),
    "fig4": (
        "uplink SE vs antennas, exponential correlation r=0.5, L=4, K=2",
        {
            "kind": "se-curve",
            "direction": "ul",
            "schemes": [MR, S_MMSE, M_MMSE, M_ZF],
            "time_splitting": True,
            "antennas": [32, 64, 128, 256],
            "scenario": {
                "cells": 4,
                "ues_per_cell": 2,
                "model": "exp-corr",
                "corr_r": 0.5,
                "aoa_jitter_deg": 3.0,
                "snr": {"intracell_db": -6.0, "intercell_db": [-6.3, -6.3]},
            },
        },
    ),
    "fig5a": (
        "uplink SE vs large-scale fading variation sigma, uncorrelated model, M=200",
        {
            "kind": "sigma-sweep",
            "direction": "ul",
            "schemes": [MR, S_MMSE, M_MMSE, M_ZF],
            "antennas": [200],
            "sigma_sweep": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            "scenario": {
                "cells": 4,
                "ues_per_cell": 2,
                "model": "lognormal",
                "snr": {"intracell_db": -6.0, "intercell_db": [-6.3, -6.3]},
            },
        },
    ),
    "fig5b": (
        "received-power decomposition after combining, sigma=4, M=200",
        {
            "kind": "power",
            "schemes": [MR, S_MMSE, M_MMSE, M_ZF],
            "antennas": [200],
            "scenario": {
                "cells": 4,
                "ues_per_cell": 2,
                "model": "lognormal",
                "sigma_db": 4.0,
                "snr": {"intracell_db": -6.0, "intercell_db": [-6.3, -6.3]},
            },
        },
    ),
    "fig6a": (
        "downlink SE vs antennas, full covariance estimates, K=2",
        {
            "kind": "se-curve",
            "direction": "dl",
            "schemes": [MR, S_MMSE, M_MMSE, M_ZF],
            "antennas": [32, 64, 128, 256],
            "scenario": {
                "cells": 4,
                "ues_per_cell": 2,
                "model": "exp-lognormal",
                "corr_r": 0.5,
                "sigma_db": 4.0,
                "aoa_layout": "clustered",
                "snr": {"intracell_db": -6.0, "intercell_db": [-6.3, -6.3]},
            },
        },
    ),
    "fig6b": (
        "downlink SE vs antennas, diagonal-only (element-wise) estimates, K=2",
        {
            "kind": "se-curve",
            "direction": "dl",
            "estimator": "ew-mmse",
            "schemes": [MR, APPROX_M_MMSE, M_ZF],
            "antennas": [32, 64, 128, 256],
            "scenario": {
                "cells": 4,
                "ues_per_cell": 2,
                "model": "exp-lognormal",
                "corr_r": 0.5,
                "sigma_db": 4.0,
                "aoa_layout": "clustered",
                "snr": {"intracell_db": -6.0, "intercell_db": [-6.3, -6.3]},
            },
        },
    ),
    "fig7a": (
        "downlink SE vs antennas, full covariance estimates, K=10 cell-edge UEs",
        {
            "kind": "se-curve",
            "direction": "dl",
            "schemes": [MR, S_MMSE, M_MMSE, M_ZF],
            "antennas": [64, 128, 256],
            "trials": 300,
            "scenario": {
                "cells": 4,
                "ues_per_cell": 10,
                "model": "exp-lognormal",
                "corr_r": 0.5,
                "sigma_db": 4.0,
                "aoa_layout": "clustered",
                "intercell_layout": "random",
            },
        },
    ),
    "fig7b": (
        "downlink SE vs antennas, element-wise estimates, K=10 cell-edge UEs",
        {
            "kind": "se-curve",
            "direction": "dl",
            "estimator": "ew-mmse",
            "schemes": [MR, APPROX_M_MMSE, M_ZF],
            "antennas": [64, 128, 256],
            "trials": 300,
            "scenario": {
                "cells": 4,
                "ues_per_cell": 10,
                "model": "exp-lognormal",
                "corr_r": 0.5,
                "sigma_db": 4.0,
                "aoa_layout": "clustered",
                "intercell_layout": "random",
            },
        },
    ),
    "example1": (
        "closed-form vs simulated zero-forcing SINR for the block fixture",
        {
            "kind": "example1",
            "antennas": [100],
            "scenario": {"cells": 1, "ues_per_cell": 2},
        },
    ),
    "example3": (
        "cooperation-fixture residual decay over the antenna grid",
        {
            "kind": "example3",
            "antennas": [64, 256, 1024],
            "trials": 100,
            "scenario": {"cells": 1, "ues_per_cell": 2},
        },
    ),
}

_TOP_KEYS = {
    "kind",
    "preset",
    "seed",
    "trials",
    "threads",
    "estimator",
    "direction",
    "bound",
    "schemes",
    "time_splitting",
    "zf_rank_reduction",
    "antennas",
    "sigma_sweep",
    "spectra_draws",
    "scenario",
}
_SCENARIO_KEYS = {
    "cells",
    "ues_per_cell",
    "coherence_block",
    "rho_tr",
    "rho_ul",
    "rho_dl",
    "model",
    "corr_r",
    "spread_deg",
    "sigma_db",
    "aoa_layout",
    "aoa_step_deg",
    "aoa_jitter_deg",
    "intercell_layout",
    "snr",
}
_KINDS = ("se-curve", "sigma-sweep", "spectra", "power", "example1", "example3")


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _build_config(tree: dict) -> ExperimentConfig:
    _require(isinstance(tree, dict), "config root must be a key/value mapping")
    merged: dict = {}
    preset = tree.get("preset")
    if preset is not None:
        _require(preset in PRESETS, f"unknown preset '{preset}'")
        merged = json.loads(json.dumps(PRESETS[preset][1]))  # deep copy
        merged["preset"] = preset
    for key, value in tree.items():
        _require(key in _TOP_KEYS, f"unknown key '{key}'")
        if key == "scenario":
            _require(isinstance(value, dict), "'scenario' must be a mapping")
            merged.setdefault("scenario", {})
            for sk, sv in value.items():
                _require(sk in _SCENARIO_KEYS, f"unknown key 'scenario.{sk}'")
                merged["scenario"][sk] = sv
        else:
            merged[key] = value

    scen_tree = merged.pop("scenario", {})
    snr_tree = scen_tree.pop("snr", {})
    _require(isinstance(snr_tree, dict), "'scenario.snr' must be a mapping")
    for sk in snr_tree:
        _require(sk in {"intracell_db", "intercell_db"}, f"unknown key 'scenario.snr.{sk}'")
    for rho_key in ("rho_tr", "rho_ul", "rho_dl"):
        if rho_key in scen_tree:
            _require(
                isinstance(scen_tree[rho_key], (int, float)) and scen_tree[rho_key] > 0,
                f"'scenario.{rho_key}' must be a positive number",
            )
    try:
        snr = SnrTargets(
            intracell_db=float(snr_tree.get("intracell_db", -6.0)),
            intercell_db=tuple(snr_tree.get("intercell_db", (-11.5, -6.3))),
        )
        scenario = ScenarioSpec(antennas=1, snr=snr, **scen_tree)
    except TypeError as exc:
        raise ConfigError(f"bad scenario block: {exc}") from exc

    cfg = ExperimentConfig(scenario=scenario)
    for key, value in merged.items():
        setattr(cfg, key, value)
    cfg.schemes = tuple(cfg.schemes)
    cfg.antennas = tuple(int(m) for m in cfg.antennas)
    cfg.sigma_sweep = tuple(float(v) for v in cfg.sigma_sweep)

    _require(cfg.kind in _KINDS, f"'kind' must be one of {_KINDS}")
    _require(isinstance(cfg.seed, int), "'seed' must be an integer")
    _require(isinstance(cfg.trials, int) and cfg.trials >= 1, "'trials' must be >= 1")
    _require(isinstance(cfg.threads, int) and cfg.threads >= 0, "'threads' must be >= 0")
    _require(cfg.estimator in ("mmse", "ew-mmse"), "'estimator' must be mmse or ew-mmse")
    _require(cfg.direction in ("ul", "dl", "both"), "'direction' must be ul, dl, or both")
    _require(cfg.bound in (CAPACITY_LB, UATF), f"'bound' must be {CAPACITY_LB} or {UATF}")
    _require(len(cfg.antennas) >= 1, "'antennas' must list at least one size")
    _require(all(m >= 1 for m in cfg.antennas), "'antennas' entries must be >= 1")
    _require(
        all(a < b for a, b in zip(cfg.antennas, cfg.antennas[1:])),
        "'antennas' must be strictly increasing",
    )
    if cfg.kind in ("se-curve", "sigma-sweep", "power"):
        _require(len(cfg.schemes) >= 1, "'schemes' must not be empty")
        for sch in cfg.schemes:
            _require(sch in _SE_SCHEMES, f"unknown scheme '{sch}'")
            if sch == APPROX_M_MMSE:
                _require(
                    cfg.estimator == "ew-mmse",
                    f"scheme '{sch}' requires estimator ew-mmse",
                )
            if sch in (M_MMSE, S_MMSE):
                _require(
                    cfg.estimator == "mmse", f"scheme '{sch}' requires estimator mmse"
                )
    if cfg.kind == "sigma-sweep":
        _require(len(cfg.sigma_sweep) >= 1, "'sigma_sweep' must list at least one value")
        _require(len(cfg.antennas) == 1, "sigma sweeps run at a single antenna count")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML key/value tree into an ExperimentConfig."""
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if tree is None:
        tree = {}
    return _build_config(tree)


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'")
    return _build_config({"preset": name})


def list_presets() -> str:
    width = max(len(name) for name in PRESETS)
    lines = [f"{name:<{width}}  {desc}" for name, (desc, _) in PRESETS.items()]
    return "\n".join(lines)


def _estimator_tag(cfg: ExperimentConfig, scheme: str) -> str:
    if scheme == APPROX_M_MMSE:
        return "ew-mmse"
    if scheme in (M_MMSE, S_MMSE):
        return "mmse"
    return cfg.estimator


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and not np.isfinite(value):
        return "nan"
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def _write_csv(path: str, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _delta_predictions(cfg: ExperimentConfig, report: dict, scheme: str, direction: str):
    """Per-UE SINR/M prediction column, where a closed form is available."""
    per_ue = report["per_ue"]
    two_user = report.get("two_user", {})
    out = {}
    for ue, entry in per_ue.items():
        value = None
        if direction == "ul" and scheme == M_MMSE and cfg.bound == CAPACITY_LB:
            value = entry.get("delta")
        elif direction == "ul" and scheme == APPROX_M_MMSE and cfg.bound == UATF:
            value = two_user.get(f"uatf_limit{int(ue.split(':')[1]) + 1}")
        elif direction == "dl" and scheme == M_MMSE:
            value = two_user.get(f"dl_limit{int(ue.split(':')[1]) + 1}")
        out[ue] = value
    return out


def _point_scenario(cfg: ExperimentConfig, m: int, sigma: float | None, rng: RngStream):
    spec = dataclasses.replace(cfg.scenario, antennas=m)
    if sigma is not None:
        spec = dataclasses.replace(spec, sigma_db=sigma)
    return build_scenario(spec, rng)


def _run_se_points(cfg: ExperimentConfig, out_dir: str, threads: int):
    rows = []
    asym = {}
    master = RngStream(cfg.seed)
    scen_stream = master.child(1)
    zf_kwargs = {"rank_reduction": cfg.zf_rank_reduction}
    points = (
        [(m, None) for m in cfg.antennas]
        if cfg.kind == "se-curve"
        else [(cfg.antennas[0], sig) for sig in cfg.sigma_sweep]
    )
    for p_idx, (m, sigma) in enumerate(points):
        label = cfg.preset or "custom"
        if sigma is not None:
            label = f"{label}[sigma={sigma:g}]"
        coords = f"preset={label} M={m}"
        try:
            scenario = _point_scenario(cfg, m, sigma, scen_stream)
            ctx = estimation_statistics(scenario)
            report = asymptotic_report(ctx)
            asym[label if sigma is not None else str(m)] = report
            directions = ("ul", "dl") if cfg.direction == "both" else (cfg.direction,)
            for direction in directions:
                trial_rng = master.child(1000 + p_idx * 4 + (0 if direction == "ul" else 1))
                if direction == "ul":
                    runner = ul_se_multi if cfg.bound == CAPACITY_LB else ul_se_uatf_multi
                    reports = runner(
                        ctx,
                        list(cfg.schemes),
                        cfg.trials,
                        trial_rng,
                        estimator=cfg.estimator.replace("ew-mmse", "ew"),
                        threads=threads,
                        zf_kwargs=zf_kwargs,
                    )
                else:
                    reports = dl_se_multi(
                        ctx,
                        list(cfg.schemes),
                        cfg.trials,
                        trial_rng,
                        estimator=cfg.estimator.replace("ew-mmse", "ew"),
                        threads=threads,
                        zf_kwargs=zf_kwargs,
                    )
                for sch in cfg.schemes:
                    rep = reports[sch]
                    deltas = _delta_predictions(cfg, report, sch, direction)
                    for j in range(scenario.cells):
                        for k in range(scenario.ues_per_cell):
                            ue = f"{j}:{k}"
                            rows.append(
                                (
                                    label,
                                    sch,
                                    _estimator_tag(cfg, sch),
                                    direction,
                                    m,
                                    ue,
                                    rep.se[j, k],
                                    rep.se_stderr[j, k],
                                    rep.sinr_over_m[j, k],
                                    deltas.get(ue),
                                    cfg.seed,
                                )
                            )
                if direction == "ul" and cfg.time_splitting:
                    ts = time_splitting_se(
                        scenario, cfg.trials, master.child(2000 + p_idx), threads=threads
                    )
                    for j in range(scenario.cells):
                        for k in range(scenario.ues_per_cell):
                            rows.append(
                                (
                                    label,
                                    "time-splitting",
                                    "mmse",
                                    "ul",
                                    m,
                                    f"{j}:{k}",
                                    ts.se[j, k],
                                    ts.se_stderr[j, k],
                                    ts.sinr_over_m[j, k],
                                    None,
                                    cfg.seed,
                                )
                            )
        except _NUMERICAL_ERRORS as exc:
            raise RunFailureError(f"{coords}: {type(exc).__name__}: {exc}") from exc
    _write_csv(os.path.join(out_dir, "results.csv"), CSV_COLUMNS, rows)
    return asym, ["results.csv"]


def _run_power(cfg: ExperimentConfig, out_dir: str, threads: int):
    from .se import power_decomposition

    master = RngStream(cfg.seed)
    m = cfg.antennas[0]
    scenario = _point_scenario(cfg, m, None, master.child(1))
    ctx = estimation_statistics(scenario)
    asym = {str(m): asymptotic_report(ctx)}
    label = cfg.preset or "custom"
    rows = []
    power_rows = []
    for s_idx, sch in enumerate(cfg.schemes):
        try:
            dec = power_decomposition(
                ctx,
                sch,
                cfg.trials,
                master.child(1000 + s_idx),
                estimator=cfg.estimator.replace("ew-mmse", "ew"),
                threads=threads,
                zf_kwargs={"rank_reduction": cfg.zf_rank_reduction},
            )
        except _NUMERICAL_ERRORS as exc:
            raise RunFailureError(f"preset={label} M={m} scheme={sch}: {exc}") from exc
        for j in range(scenario.cells):
            for k in range(scenario.ues_per_cell):
                power_rows.append(
                    (
                        label,
                        sch,
                        _estimator_tag(cfg, sch),
                        m,
                        f"{j}:{k}",
                        dec.desired[j, k],
                        dec.same_pilot_interf[j, k],
                        dec.other_interf[j, k],
                        dec.noise[j, k],
                        dec.total[j, k],
                        cfg.seed,
                    )
                )
    _write_csv(os.path.join(out_dir, "results.csv"), CSV_COLUMNS, rows)
    _write_csv(
        os.path.join(out_dir, "power.csv"),
        (
            "preset",
            "scheme",
            "estimator",
            "M",
            "ue",
            "desired",
            "same_pilot_interf",
            "other_interf",
            "noise",
            "total",
            "seed",
        ),
        power_rows,
    )
    return asym, ["results.csv", "power.csv"]


def _run_spectra(cfg: ExperimentConfig, out_dir: str):
    master = RngStream(cfg.seed)
    m = cfg.antennas[0]
    label = cfg.preset or "custom"
    gen = master.child(1).generator()
    draws = cfg.spectra_draws
    spectra_rows = []
    models = (
        ("one-ring", lambda aoa, rng: one_ring(OneRing(1.0, aoa, np.deg2rad(15.0)), m)),
        ("exp-corr", lambda aoa, rng: exp_corr(ExpCorr(1.0, 0.5, aoa), m)),
        ("lognormal", lambda aoa, rng: lognormal_diag(LogNormalDiag(1.0, 2.0), m, rng)),
    )
    for name, builder in models:
        acc = np.zeros(m)
        for _ in range(draws):
            aoa = float(gen.uniform(-np.pi, np.pi))
            acc += eigen_spectrum(builder(aoa, gen))
        acc /= draws
        for idx, val in enumerate(acc):
            spectra_rows.append((label, name, m, idx, val, cfg.seed))
    _write_csv(os.path.join(out_dir, "results.csv"), CSV_COLUMNS, [])
    _write_csv(
        os.path.join(out_dir, "spectra.csv"),
        ("preset", "model", "M", "index", "eigenvalue", "seed"),
        spectra_rows,
    )
    return {}, ["results.csv", "spectra.csv"]


def example1_fixture(m: int = 100, n: int | None = None):
    """Two-block fixture: simulated zero-forcing SINR vs its closed form."""
    from .covariance import CovarianceMatrix
    from .scenario import two_user_scenario

    n = m // 2 if n is None else n
    r1 = CovarianceMatrix.from_matrix(np.diag(np.r_[2.0 * np.ones(n), np.ones(m - n)]))
    r2 = CovarianceMatrix.from_matrix(np.eye(m))
    s = two_user_scenario(r1, r2, rho_tr=1.0, rho_ul=1.0, rho_dl=1.0)
    ctx = estimation_statistics(s)
    h_hat = np.empty((1, 1, 2, m), dtype=complex)
    h_hat[0, 0, 0] = np.r_[2.0 * np.ones(n), np.ones(m - n)]
    h_hat[0, 0, 1] = np.ones(m)
    draw = ChannelDraw("mmse", h_hat.copy(), h_hat, np.zeros((1, 1, m), dtype=complex))
    vset = m_zf(draw, ctx)
    gamma = float(ul_sinr_instant(draw, ctx, vset)[0, 0])
    closed = 1.0 / (7.0 / (4 * n) + 4.0 / (3 * (m - n)) + m / (n * (m - n)))
    return gamma, closed


def _run_example1(cfg: ExperimentConfig, out_dir: str):
    m = cfg.antennas[0]
    gamma, closed = example1_fixture(m)
    label = cfg.preset or "custom"
    rel = abs(gamma - closed) / closed
    print(f"zero-forcing fixture SINR: simulated {gamma:.9f}, closed form {closed:.9f}, "
          f"relative error {rel:.3e}")
    rows = [
        (
            label,
            M_ZF,
            "mmse",
            "ul",
            m,
            "0:0",
            None,
            None,
            gamma / m,
            closed / m,
            cfg.seed,
        )
    ]
    _write_csv(os.path.join(out_dir, "results.csv"), CSV_COLUMNS, rows)
    return {}, ["results.csv"]


def pcp_residual(m: int, draws: int, rng: RngStream, gains=None, rho_tr: float = 1.0):
    """Mean ||H^H V - I||_F for the two-array cooperation fixture."""
    gains = np.array([[2.0, 1.0], [1.0, 2.0]]) if gains is None else np.asarray(gains)
    half = m // 2
    gen = rng.generator()
    vals = np.empty(draws)
    for t in range(draws):
        g = gen.standard_normal((2, 2, half, 2))
        h = (g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0)
        hk = np.empty((m, 2), dtype=complex)
        for k in range(2):
            hk[:half, k] = np.sqrt(gains[k, 0]) * h[k, 0]
            hk[half:, k] = np.sqrt(gains[k, 1]) * h[k, 1]
        noise = gen.standard_normal((m, 2))
        obs_raw = np.sqrt(rho_tr) * hk.sum(axis=1) + (noise[:, 0] + 1j * noise[:, 1]) / np.sqrt(2.0)
        v = pcp(obs_raw / rho_tr, gains, half)
        vals[t] = np.linalg.norm(hk.conj().T @ v - np.eye(2))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(draws))


def _run_example3(cfg: ExperimentConfig, out_dir: str):
    master = RngStream(cfg.seed)
    label = cfg.preset or "custom"
    rows = []
    means = []
    for idx, m in enumerate(cfg.antennas):
        mean, stderr = pcp_residual(m, cfg.trials, master.child(1000 + idx))
        means.append(mean)
        rows.append((label, PCP, m, cfg.trials, mean, stderr, cfg.seed))
    slope = np.polyfit(np.log(cfg.antennas), np.log(means), 1)[0]
    print(f"cooperation-fixture residual decay: log-log slope {slope:.3f} (expect -0.5)")
    _write_csv(os.path.join(out_dir, "results.csv"), CSV_COLUMNS, [])
    _write_csv(
        os.path.join(out_dir, "pcp.csv"),
        ("preset", "scheme", "M", "draws", "residual_mean", "residual_stderr", "seed"),
        rows,
    )
    return {"slope": slope}, ["results.csv", "pcp.csv"]


def run(cfg: ExperimentConfig, out_dir: str) -> list:
    """Execute the experiment and write deterministic artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    threads = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    if cfg.kind in ("se-curve", "sigma-sweep"):
        asym, outputs = _run_se_points(cfg, out_dir, threads)
    elif cfg.kind == "power":
        asym, outputs = _run_power(cfg, out_dir, threads)
    elif cfg.kind == "spectra":
        asym, outputs = _run_spectra(cfg, out_dir)
    elif cfg.kind == "example1":
        asym, outputs = _run_example1(cfg, out_dir)
    elif cfg.kind == "example3":
        asym, outputs = _run_example3(cfg, out_dir)
    else:  # pragma: no cover - guarded by validation
        raise ConfigError(f"unknown kind '{cfg.kind}'")

    with open(os.path.join(out_dir, "asymptotics.json"), "w", encoding="utf-8") as f:
        json.dump(asym, f, indent=2, sort_keys=True)
        f.write("\n")
    outputs.append("asymptotics.json")

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "outputs": sorted(outputs + ["manifest.json"]),
        "versions": {
            "mimo-sim": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return sorted(outputs + ["manifest.json"])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mimo-sim",
        description="Monte Carlo spectral-efficiency experiments for multicell massive MIMO",
    )
    parser.add_argument("--preset", help="named experiment preset")
    parser.add_argument("--config", help="path to a YAML config file")
    parser.add_argument("--out-dir", default="results", help="output directory")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--trials", type=int, help="override the trial budget")
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads (0 = auto)"
    )
    parser.add_argument("--list-presets", action="store_true", help="list presets and exit")
    args = parser.parse_args(argv)

    if args.list_presets:
        print(list_presets())
        return EXIT_OK

    try:
        if args.config:
            with open(args.config, "r", encoding="utf-8") as f:
                cfg = parse_config(f.read())
            if args.preset:
                raise ConfigError("give either --preset or --config, not both")
        elif args.preset:
            cfg = preset_config(args.preset)
        else:
            raise ConfigError("one of --preset or --config is required")
        if args.seed is not None:
            cfg.seed = args.seed
        if args.trials is not None:
            cfg.trials = args.trials
            if not cfg.trials >= 1:
                raise ConfigError("'trials' must be >= 1")
        env_threads = os.environ.get("MIMO_SIM_THREADS")
        if env_threads is not None:
            cfg.threads = int(env_threads)
        elif args.threads is not None:
            cfg.threads = args.threads
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        outputs = run(cfg, args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailureError, *_NUMERICAL_ERRORS) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {', '.join(outputs)} to {args.out_dir}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
