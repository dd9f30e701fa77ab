import numpy as np
import pytest

import mimo_sim as ms
from mimo_sim.numerics import RngStream


def scaled_to_snr(cov, snr_db, rho=1.0):
    """Rescale a covariance so that rho * tr(R)/M hits the target SNR."""
    return cov.scaled(10 ** (snr_db / 10.0) * cov.dim / (rho * cov.trace))


def expcorr_pair_scenario(m, sep_deg=120.0, r=0.5, snr_db=(-6.0, -6.3), rho_tr=1.0,
                          rho_ul=1.0, rho_dl=1.0, aoa=0.2):
    """Two pilot-sharing UEs with exponential-correlation covariances."""
    c1 = ms.exp_corr(ms.ExpCorr(1.0, r, aoa), m)
    c2 = ms.exp_corr(ms.ExpCorr(1.0, r, aoa + np.deg2rad(sep_deg)), m)
    return ms.two_user_scenario(
        scaled_to_snr(c1, snr_db[0], rho_ul),
        scaled_to_snr(c2, snr_db[1], rho_ul),
        rho_tr=rho_tr,
        rho_ul=rho_ul,
        rho_dl=rho_dl,
    )


def iid_pair_scenario(m, beta1=2.0, beta2=1.0, **kwargs):
    r1 = ms.CovarianceMatrix.from_matrix(beta1 * np.eye(m))
    r2 = ms.CovarianceMatrix.from_matrix(beta2 * np.eye(m))
    return ms.two_user_scenario(r1, r2, **kwargs)


@pytest.fixture
def rng():
    return RngStream(42)
