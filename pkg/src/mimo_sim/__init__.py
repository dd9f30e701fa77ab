"""Monte Carlo and deterministic-equivalent SE calculator for multicell massive MIMO."""

__version__ = "0.1.0"

from .numerics import RngStream, hermitian_solve, psd_factor, sample_cn
from .covariance import (
    CovarianceMatrix,
    ExpCorr,
    ExpLogNormal,
    LogNormalDiag,
    OneRing,
    eigen_spectrum,
    exp_corr,
    exp_lognormal,
    lognormal_diag,
    one_ring,
)
from .scenario import (
    NetworkScenario,
    ScenarioSpec,
    SnrTargets,
    build_scenario,
    pilot_groups,
    two_user_scenario,
)
from .estimation import (
    EstimationContext,
    draw_and_estimate_ew,
    draw_and_estimate_mmse,
    estimation_statistics,
)
from .combining import (
    CombinerSet,
    approx_m_mmse,
    m_mmse,
    m_zf,
    mr,
    pcp,
    precoder_normalization,
    s_mmse,
)
from .se import (
    PowerDecomposition,
    SeReport,
    dl_se,
    power_decomposition,
    time_splitting_se,
    ul_se,
    ul_se_uatf,
    ul_sinr_instant,
)
from .asymptotics import (
    dl_delta_prime,
    ew_upsilon,
    gram_diagnostics,
    independence_margin,
    multicell_delta,
    two_user_delta,
)
