"""
Path loss, log-normal shadowing and the dB-domain distributions of received
power, SNR and SINR for the macro/femto downlink.

Carrier frequency enters the path-loss log terms in GHz. Noise power is the
noise density integrated over the channel bandwidth.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from oppspec.utils.exceptions import DomainError


logger = structlog.get_logger()

REFERENCE_C0_BPS = 100e6


class Link(str, Enum):
    """MBS_TO_INDOOR: macro signal reaching the indoor terminal. FBS_INDOOR: femto link."""
    MBS_TO_INDOOR = "mbs_to_indoor"
    FBS_INDOOR = "fbs_indoor"


class RadioEnv(BaseModel):
    """Transmit powers, geometry, carrier and shadowing of one deployment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    pt_mbs_dbm: float = 40.0
    pt_fbs_dbm: float = 23.85
    mbs_distance_m: float = Field(default=100.0, gt=0)
    indoor_distance_m: float = Field(default=10.0, gt=0)
    carrier_ghz: float = Field(default=2.65, gt=0)
    shadow_sigma_mbs_db: float = Field(default=7.0, ge=0)
    shadow_sigma_fbs_db: float = Field(default=4.0, ge=0)
    noise_density_dbm_hz: float = -170.0
    bandwidth_hz: float = Field(default=5e6, gt=0)


class DbNormal(BaseModel):
    """Gaussian in the dB domain (log-normal in linear scale)."""

    model_config = ConfigDict(frozen=True)

    mean: float
    sigma: float = Field(ge=0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.sigma, size=n)


@dataclass(frozen=True)
class SinrDistributions:
    gamma: DbNormal
    gamma0: DbNormal


@dataclass(frozen=True)
class LinkRateDraws:
    """Per-period draws: interference-free rate, interfered rate (bit/s) and MBS sensing SNR (linear)."""

    c0: np.ndarray
    c: np.ndarray
    sensing_snr: np.ndarray


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(mw)


def noise_power_dbm(env: RadioEnv) -> float:
    """Noise over the channel bandwidth in dBm."""
    return env.noise_density_dbm_hz + 10.0 * np.log10(env.bandwidth_hz)


def path_loss(env: RadioEnv, link: Link) -> float:
    """
    Path loss in dB.

    MBS_TO_INDOOR: 36.7 log10(R) + 26 log10(f_c) + 0.5 d + 42.7 (outdoor-to-indoor)
    FBS_INDOOR:    43.3 log10(d) + 20 log10(f_c) + 11.5
    """
    if env.mbs_distance_m <= 0 or env.indoor_distance_m <= 0:
        raise DomainError("distances must be positive")
    log_fc = np.log10(env.carrier_ghz)
    if link is Link.MBS_TO_INDOOR:
        return float(36.7 * np.log10(env.mbs_distance_m) + 26.0 * log_fc
                     + 0.5 * env.indoor_distance_m + 42.7)
    return float(43.3 * np.log10(env.indoor_distance_m) + 20.0 * log_fc + 11.5)


def received_power_dist(env: RadioEnv, link: Link) -> DbNormal:
    """Received power at the indoor terminal, dBm."""
    if link is Link.MBS_TO_INDOOR:
        return DbNormal(mean=env.pt_mbs_dbm - path_loss(env, link), sigma=env.shadow_sigma_mbs_db)
    return DbNormal(mean=env.pt_fbs_dbm - path_loss(env, link), sigma=env.shadow_sigma_fbs_db)


def sinr_dist(env: RadioEnv) -> SinrDistributions:
    """
    SINR γ (interference-dominated approximation) and SNR γ0, both in dB.

    μ_γ = μ_F - μ_M, σ_γ = √(σ_F² + σ_M²); μ_γ0 = μ_F - N, σ_γ0 = σ_F.
    """
    mbs = received_power_dist(env, Link.MBS_TO_INDOOR)
    fbs = received_power_dist(env, Link.FBS_INDOOR)
    return SinrDistributions(
        gamma=DbNormal(mean=fbs.mean - mbs.mean, sigma=float(np.hypot(fbs.sigma, mbs.sigma))),
        gamma0=DbNormal(mean=fbs.mean - noise_power_dbm(env), sigma=fbs.sigma),
    )


def alpha(env: RadioEnv) -> float:
    """α = (μ_M - N) / (μ_F - N), every quantity in dB."""
    noise = noise_power_dbm(env)
    mu_m = received_power_dist(env, Link.MBS_TO_INDOOR).mean
    mu_f = received_power_dist(env, Link.FBS_INDOOR).mean
    denominator = mu_f - noise
    if abs(denominator) < 1e-12:
        raise DomainError("FBS received power equals the noise floor; alpha undefined")
    return (mu_m - noise) / denominator


def sample_link_rates(env: RadioEnv, rng: np.random.Generator, n: int) -> LinkRateDraws:
    """
    Draw n independent shadowing realizations.

    γ0 = P_F / N and γ = P_F / (P_M + N) share the same FBS draw.
    """
    fbs = received_power_dist(env, Link.FBS_INDOOR).sample(rng, n)
    mbs = received_power_dist(env, Link.MBS_TO_INDOOR).sample(rng, n)
    noise_mw = float(dbm_to_mw(noise_power_dbm(env)))
    p_f, p_m = dbm_to_mw(fbs), dbm_to_mw(mbs)
    return LinkRateDraws(
        c0=env.bandwidth_hz * np.log2(1.0 + p_f / noise_mw),
        c=env.bandwidth_hz * np.log2(1.0 + p_f / (p_m + noise_mw)),
        sensing_snr=p_m / noise_mw,
    )


def calibrate_fbs_power(env: RadioEnv, target_c0_bps: float = REFERENCE_C0_BPS) -> RadioEnv:
    """
    Adjust the FBS transmit power so that the quadrature E{C0} hits the target.

    Returns:
        Copy of env with pt_fbs_dbm replaced
    """
    # local import: analytics depends on this module
    from oppspec.core.analytics import RateMode, expected_capacity

    def excess(pt_fbs: float) -> float:
        trial = env.model_copy(update={"pt_fbs_dbm": pt_fbs})
        return expected_capacity(sinr_dist(trial).gamma0, env.bandwidth_hz, RateMode.QUADRATURE) - target_c0_bps

    # E{C0} grows by B/3.01 per dB at high SNR; bracket generously around the start
    lo, hi = env.pt_fbs_dbm - 100.0, env.pt_fbs_dbm + 100.0
    try:
        pt_fbs = optimize.brentq(excess, lo, hi, xtol=1e-10)
    except ValueError as e:
        raise DomainError(
            f"E{{C0}} = {target_c0_bps:.6g} bps not reachable with bandwidth {env.bandwidth_hz:.6g} Hz "
            f"for FBS power in [{lo:g}, {hi:g}] dBm"
        ) from e
    logger.debug("FBS power calibrated", pt_fbs_dbm=pt_fbs, target_c0_bps=target_c0_bps)
    return env.model_copy(update={"pt_fbs_dbm": float(pt_fbs)})


def reference_env() -> RadioEnv:
    """Default deployment (R = 100 m, d = 10 m) calibrated to E{C0} = 100 Mbps."""
    return calibrate_fbs_power(RadioEnv(), REFERENCE_C0_BPS)
