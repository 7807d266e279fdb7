"""
Energy detection: threshold setting, false-alarm/detection probabilities and
window classification.

noise_variance is the per-sample noise variance σ_n², so the mean window
energy under H0 is M σ_n² with M = 2 B t_s samples.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from oppspec.core.qfunc import q_function, q_inverse
from oppspec.utils.exceptions import DomainError, InvalidInputError


class Hypothesis(str, Enum):
    """H0: channel idle (noise only). H1: primary user present."""
    H0 = "H0"
    H1 = "H1"


class DetectorSpec(BaseModel):
    """Energy-detector configuration."""

    model_config = ConfigDict(frozen=True)

    target_pfa: float = Field(default=1e-3, gt=0, lt=1)
    sensing_time: float = Field(default=0.02, gt=0)
    bandwidth: float = Field(default=5e6, gt=0)
    noise_variance: float = Field(default=1.0, gt=0)
    duty_cycle_prior: float = Field(default=0.5, ge=0, lt=1)

    @model_validator(mode="after")
    def check_operating_point(self) -> "DetectorSpec":
        if not self.target_pfa < 1.0 - self.duty_cycle_prior:
            raise ValueError("target_pfa must be below 1 - duty_cycle_prior")
        if 2.0 * self.bandwidth * self.sensing_time < 1.0:
            raise ValueError("sensing window holds fewer than one sample (2 B t_s < 1)")
        return self

    @property
    def time_bandwidth(self) -> float:
        """t_s * B."""
        return self.sensing_time * self.bandwidth

    @property
    def sample_count(self) -> int:
        """M = 2 B t_s rounded to the nearest integer."""
        return int(round(2.0 * self.time_bandwidth))

    @property
    def conditional_target(self) -> float:
        """Classical false-alarm rate p_fa / (1 - u)."""
        return self.target_pfa / (1.0 - self.duty_cycle_prior)


@dataclass(frozen=True)
class DetectorPerformance:
    """Prior-weighted rates: pfa ≤ 1-u, pd ≤ u."""

    pfa: float
    pd: float
    duty_cycle_prior: float

    @property
    def conditional_pfa(self) -> float:
        return self.pfa / (1.0 - self.duty_cycle_prior)

    @property
    def conditional_pd(self) -> float:
        if self.duty_cycle_prior == 0:
            raise DomainError("conditional detection rate undefined for a zero duty-cycle prior")
        return self.pd / self.duty_cycle_prior


def detection_threshold(spec: DetectorSpec) -> float:
    """
    Energy threshold ρ meeting the target false-alarm rate.

    ρ = 2 √(t_s B) σ² Q⁻¹(p_fa/(1-u)) + 2 t_s B σ²
    """
    arg = spec.conditional_target
    if not 0.0 < arg < 1.0:
        raise DomainError(f"p_fa/(1-u) = {arg!r} outside (0, 1)")
    tb = spec.time_bandwidth
    return 2.0 * np.sqrt(tb) * spec.noise_variance * q_inverse(arg) + 2.0 * tb * spec.noise_variance


def conditional_false_alarm(spec: DetectorSpec, rho: float) -> float:
    """P(energy ≥ ρ | H0)."""
    tb = spec.time_bandwidth
    sigma2 = spec.noise_variance
    return float(q_function((rho - 2.0 * tb * sigma2) / (2.0 * np.sqrt(tb) * sigma2)))


def conditional_detection(spec: DetectorSpec, rho: float, gamma0):
    """P(energy ≥ ρ | H1) at linear SNR γ0; vectorized over γ0."""
    tb = spec.time_bandwidth
    scale = (np.asarray(gamma0, dtype=float) + 1.0) * spec.noise_variance
    return q_function((rho - 2.0 * tb * scale) / (2.0 * np.sqrt(tb) * scale))


def detector_performance(spec: DetectorSpec, rho: float, gamma0: float) -> DetectorPerformance:
    """
    Prior-weighted false-alarm and detection probabilities at threshold ρ.

    Args:
        spec: Detector configuration
        rho: Energy threshold
        gamma0: Linear SNR of the primary signal at the detector

    Returns:
        pfa = (1-u) P(H1 verdict | H0), pd = u P(H1 verdict | H1)
    """
    if rho <= 0:
        raise InvalidInputError(f"threshold must be positive, got {rho!r}")
    if gamma0 < 0:
        raise InvalidInputError(f"SNR must be non-negative, got {gamma0!r}")
    u = spec.duty_cycle_prior
    return DetectorPerformance(
        pfa=(1.0 - u) * conditional_false_alarm(spec, rho),
        pd=u * float(conditional_detection(spec, rho, gamma0)),
        duty_cycle_prior=u,
    )


def window_energy(samples) -> float:
    """Σ |r(m)|² over a window."""
    samples = np.asarray(samples)
    return float(np.sum(np.abs(samples) ** 2))


def classify_energy(energy, rho: float):
    """H0 iff energy < ρ; vectorized, True means H1."""
    return np.asarray(energy) >= rho


def classify_window(samples, spec: DetectorSpec, rho: float) -> Hypothesis:
    """Classify one window of exactly M received samples."""
    samples = np.asarray(samples)
    if samples.ndim != 1 or samples.size != spec.sample_count:
        raise InvalidInputError(
            f"window holds {samples.size} samples, detector expects M={spec.sample_count}"
        )
    return Hypothesis.H1 if window_energy(samples) >= rho else Hypothesis.H0


def threshold_dbm(spec: DetectorSpec) -> float:
    """ρ expressed as mean per-sample received power in dBm (σ² in mW)."""
    return float(10.0 * np.log10(detection_threshold(spec) / spec.sample_count))
