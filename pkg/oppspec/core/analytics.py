"""
Closed-form opportunistic-access metrics and sensing-interval optimization.

η(T) = T/(T+t_s), ζ (captured idle time per channel), ζ_s = 1 - Π(1-ζ_l),
τ (mutual-operation fraction) and the throughput drop
χ(T) = 1 - η ζ_s (1 - α τ), minimized over T.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from oppspec.core.linkbudget import DbNormal, RadioEnv, alpha, sinr_dist
from oppspec.core.occupancy import ChannelModel, ExpMixture
from oppspec.core.sensing import DetectorSpec
from oppspec.utils.exceptions import DomainError, InvalidInputError


logger = structlog.get_logger()

HERMITE_NODES = 64
DB_PER_BIT = 10.0 * np.log10(2.0)


class RateMode(str, Enum):
    """HIGH_SNR: E{log2(1+γ)} ≈ μ_dB / (10 log10 2). QUADRATURE: Gauss–Hermite."""
    HIGH_SNR = "high_snr"
    QUADRATURE = "quadrature"


class ClosedForm(str, Enum):
    """
    CLASSIC: ζ from the ON mixture, τ from the OFF dwell CDF.
    RENEWAL: both from the equilibrium residual of the OFF dwell.
    """
    CLASSIC = "classic"
    RENEWAL = "renewal"


class AccessPolicy(BaseModel):
    """Periodic sensing policy over L channels."""

    model_config = ConfigDict(frozen=True)

    period: float = Field(gt=0)
    sensing_time: float = Field(default=0.02, gt=0)
    num_channels: int = Field(default=2, ge=1)


@dataclass(frozen=True)
class LinkRates:
    c0_mean: float
    c_mean: float


@dataclass(frozen=True)
class ThroughputFigures:
    """Closed-form figures at one sensing period."""

    period: float
    eta: float
    zeta_per_channel: tuple[float, ...]
    zeta_s: float
    tau: float
    alpha: float
    chi: float
    c0_mean: float
    c_all_mean: float


@dataclass(frozen=True)
class DropMinimum:
    t_opt: float
    chi_min: float
    at_boundary: bool


@dataclass(frozen=True)
class IntervalOptimum:
    t_opt: float
    chi_min: float
    c_opt: float
    c0_mean: float
    at_boundary: bool
    bounds: tuple[float, float]


def transmission_efficiency(period: float, sensing_time: float) -> float:
    """η = T / (T + t_s)."""
    if period <= 0 or sensing_time < 0:
        raise InvalidInputError("period must be positive and sensing time non-negative")
    return period / (period + sensing_time)


def _residual_factor(m: ExpMixture, period: float) -> np.ndarray:
    x = m.lam * period
    # (1 - e^-x)/x, stable for tiny x
    return -np.expm1(-x) / x


def captured_opportunities(ch: ChannelModel, period: float, form: ClosedForm = ClosedForm.CLASSIC) -> float:
    """
    Fraction of time a single channel's idle periods are exploited.

    CLASSIC: (1-u) Σ w^x_i (1 - e^{-λ^x_i T}) / (λ^x_i T)
    RENEWAL: (1-u) Σ (w^y_i/λ^y_i²)(1 - e^{-λ^y_i T}) / (T Σ w^y_i/λ^y_i)
    """
    if period <= 0:
        raise InvalidInputError(f"period must be positive, got {period!r}")
    idle = 1.0 - ch.duty_cycle
    if form is ClosedForm.CLASSIC:
        return float(idle * np.sum(ch.on.w * _residual_factor(ch.on, period)))
    off = ch.off
    return float(idle * np.sum(off.w / off.lam * _residual_factor(off, period)) / off.mean)


def system_captured(zetas: Sequence[float]) -> float:
    """ζ_s = 1 - Π(1 - ζ_l)."""
    zetas = np.asarray(zetas, dtype=float)
    if zetas.size == 0 or np.any((zetas < 0) | (zetas > 1)):
        raise InvalidInputError("captured fractions must be a non-empty list within [0, 1]")
    return float(1.0 - np.prod(1.0 - zetas))


def mutual_fraction(off: ExpMixture, period: float, pfa: float,
                    form: ClosedForm = ClosedForm.CLASSIC) -> float:
    """
    Fraction of exploited time spent in mutual operation.

    CLASSIC: (1 - p_fa) F_Y(T). RENEWAL: (1 - p_fa) times the CDF of the
    equilibrium residual idle time at T.
    """
    if period <= 0:
        raise InvalidInputError(f"period must be positive, got {period!r}")
    if not 0.0 <= pfa < 1.0:
        raise InvalidInputError(f"pfa must lie in [0, 1), got {pfa!r}")
    decay = np.exp(-off.lam * period)
    if form is ClosedForm.CLASSIC:
        survival = np.sum(off.w * decay)
    else:
        survival = np.sum(off.w / off.lam * decay) / off.mean
    return float((1.0 - pfa) * (1.0 - survival))


def expected_capacity(dist: DbNormal, bandwidth: float, mode: RateMode = RateMode.QUADRATURE) -> float:
    """B E{log2(1 + X)} for X log-normal with dB parameters `dist`."""
    if mode is RateMode.HIGH_SNR:
        if dist.mean <= 0:
            raise DomainError(
                f"high-SNR approximation invalid at mean {dist.mean:.3g} dB; use quadrature mode"
            )
        return bandwidth * dist.mean / DB_PER_BIT
    nodes, weights = np.polynomial.hermite.hermgauss(HERMITE_NODES)
    db = dist.mean + np.sqrt(2.0) * dist.sigma * nodes
    bits = np.log2(1.0 + 10.0 ** (db / 10.0))
    return float(bandwidth * np.sum(weights * bits) / np.sqrt(np.pi))


def expected_rates(env: RadioEnv, mode: RateMode = RateMode.QUADRATURE) -> LinkRates:
    """E{C0} and E{C}."""
    dists = sinr_dist(env)
    return LinkRates(
        c0_mean=expected_capacity(dists.gamma0, env.bandwidth_hz, mode),
        c_mean=expected_capacity(dists.gamma, env.bandwidth_hz, mode),
    )


def effective_alpha(env: RadioEnv, mode: RateMode = RateMode.QUADRATURE) -> float:
    """
    Relative throughput loss under interference, 1 - E{C}/E{C0}; the dB ratio α in high-SNR mode.

    The dB ratio leaves [0, 1] once the MBS signal exceeds the FBS signal or sinks below
    the noise floor; it is clamped there so χ stays within [0, 1].
    """
    if mode is RateMode.HIGH_SNR:
        ratio = alpha(env)
        if not 0.0 <= ratio <= 1.0:
            logger.warning("Alpha outside [0, 1] clamped", alpha=ratio)
        return float(np.clip(ratio, 0.0, 1.0))
    rates = expected_rates(env, mode)
    return 1.0 - rates.c_mean / rates.c0_mean


def expected_throughputs(env: RadioEnv, eta: float, zeta_s: float, tau: float,
                         mode: RateMode = RateMode.QUADRATURE) -> dict[str, float]:
    """
    E{C0}, E{C}, E{C_all} = η ζ_s (τ E{C} + (1-τ) E{C0}) and χ = 1 - E{C_all}/E{C0}.
    """
    rates = expected_rates(env, mode)
    c_all = eta * zeta_s * (tau * rates.c_mean + (1.0 - tau) * rates.c0_mean)
    return {
        "c0_mean": rates.c0_mean,
        "c_mean": rates.c_mean,
        "c_all_mean": c_all,
        "chi": 1.0 - c_all / rates.c0_mean,
    }


def _channel_list(channels: Sequence[ChannelModel], num_channels: int) -> list[ChannelModel]:
    channels = list(channels)
    if len(channels) == num_channels:
        return channels
    if len(channels) == 1:
        return channels * num_channels
    raise InvalidInputError(
        f"{len(channels)} channel models given for a policy over {num_channels} channels"
    )


def _zetas_and_tau(policy: AccessPolicy, channels: Sequence[ChannelModel], pfa: float,
                   form: ClosedForm) -> tuple[list[float], float]:
    channels = _channel_list(channels, policy.num_channels)
    zetas = [captured_opportunities(ch, policy.period, form) for ch in channels]
    idle = np.array([1.0 - ch.duty_cycle for ch in channels])
    taus = np.array([mutual_fraction(ch.off, policy.period, pfa, form) for ch in channels])
    tau = float(np.sum(idle * taus) / np.sum(idle))
    return zetas, tau


def throughput_drop(policy: AccessPolicy, channels: Sequence[ChannelModel], env: RadioEnv, pfa: float,
                    mode: RateMode = RateMode.HIGH_SNR, form: ClosedForm = ClosedForm.CLASSIC) -> float:
    """
    χ = 1 - η ζ_s (1 - α τ).

    τ over several channels is their idle-share-weighted mean.
    """
    zetas, tau = _zetas_and_tau(policy, channels, pfa, form)
    eta = transmission_efficiency(policy.period, policy.sensing_time)
    return 1.0 - eta * system_captured(zetas) * (1.0 - effective_alpha(env, mode) * tau)


def evaluate_policy(policy: AccessPolicy, channels: Sequence[ChannelModel], env: RadioEnv, pfa: float,
                    mode: RateMode = RateMode.QUADRATURE,
                    form: ClosedForm = ClosedForm.CLASSIC) -> ThroughputFigures:
    """All closed-form figures at the policy's period."""
    zetas, tau = _zetas_and_tau(policy, channels, pfa, form)
    eta = transmission_efficiency(policy.period, policy.sensing_time)
    zeta_s = system_captured(zetas)
    summary = expected_throughputs(env, eta, zeta_s, tau, mode)
    return ThroughputFigures(
        period=policy.period,
        eta=eta,
        zeta_per_channel=tuple(zetas),
        zeta_s=zeta_s,
        tau=tau,
        alpha=effective_alpha(env, mode),
        chi=summary["chi"],
        c0_mean=summary["c0_mean"],
        c_all_mean=summary["c_all_mean"],
    )


def minimize_drop(chi: Callable[[float], float], bounds: tuple[float, float],
                  grid_points: int = 200, xatol: float = 1e-4) -> DropMinimum:
    """
    Minimize χ(T) on [T_min, T_max]: log-spaced grid scan, then golden section
    inside the bracket around the best grid point.
    """
    t_min, t_max = bounds
    if not 0 < t_min < t_max:
        raise InvalidInputError(f"invalid bounds {bounds!r}")
    grid = np.geomspace(t_min, t_max, grid_points)
    values = np.array([chi(t) for t in grid])
    best = int(np.argmin(values))

    if best == 0 or best == grid_points - 1:
        logger.info("Drop minimum on bracket boundary", t=float(grid[best]), chi=float(values[best]))
        return DropMinimum(t_opt=float(grid[best]), chi_min=float(values[best]), at_boundary=True)

    a, b, c = grid[best - 1], grid[best], grid[best + 1]
    try:
        res = optimize.minimize_scalar(
            chi, bracket=(a, b, c), method="golden",
            options={"xtol": xatol / (2.0 * c)},
        )
        t_opt, chi_min = float(res.x), float(res.fun)
    except ValueError:
        # flat grid neighbourhood: no strict bracket for golden section
        res = optimize.minimize_scalar(chi, bounds=(a, c), method="bounded", options={"xatol": xatol})
        t_opt, chi_min = float(res.x), float(res.fun)

    if not a <= t_opt <= c or chi_min > values[best]:
        t_opt, chi_min = float(b), float(values[best])
    return DropMinimum(t_opt=t_opt, chi_min=chi_min, at_boundary=False)


def default_bounds(channels: Sequence[ChannelModel], detector: DetectorSpec) -> tuple[float, float]:
    """[t_s, 100 × the longest mean dwell]."""
    longest = max(max(ch.on.mean, ch.off.mean) for ch in channels)
    return detector.sensing_time, 100.0 * longest


def optimize_interval(channels: Sequence[ChannelModel], env: RadioEnv, detector: DetectorSpec,
                      bounds: Optional[tuple[float, float]] = None, *, num_channels: Optional[int] = None,
                      mode: RateMode = RateMode.QUADRATURE, form: ClosedForm = ClosedForm.CLASSIC,
                      grid_points: int = 200, xatol: float = 1e-4) -> IntervalOptimum:
    """
    Sensing period minimizing the throughput drop.

    Args:
        channels: Channel models (one model is replicated over num_channels)
        env: Radio environment supplying α and E{C0}
        detector: Sensing time t_s and target p_fa
        bounds: [T_min, T_max]; defaults to default_bounds
        num_channels: L; defaults to len(channels)

    Returns:
        T_opt, χ_min, C_opt = (1 - χ_min) E{C0}, boundary flag
    """
    channels = list(channels)
    num_channels = num_channels or len(channels)
    bounds = bounds or default_bounds(channels, detector)
    alpha_eff = effective_alpha(env, mode)
    c0_mean = expected_rates(env, mode).c0_mean

    def chi(period: float) -> float:
        policy = AccessPolicy(period=period, sensing_time=detector.sensing_time, num_channels=num_channels)
        zetas, tau = _zetas_and_tau(policy, channels, detector.target_pfa, form)
        eta = transmission_efficiency(period, detector.sensing_time)
        return 1.0 - eta * system_captured(zetas) * (1.0 - alpha_eff * tau)

    best = minimize_drop(chi, bounds, grid_points, xatol)
    logger.info(
        "Sensing interval optimized",
        t_opt=best.t_opt,
        chi_min=best.chi_min,
        num_channels=num_channels,
        at_boundary=best.at_boundary,
    )
    return IntervalOptimum(
        t_opt=best.t_opt,
        chi_min=best.chi_min,
        c_opt=(1.0 - best.chi_min) * c0_mean,
        c0_mean=c0_mean,
        at_boundary=best.at_boundary,
        bounds=(float(bounds[0]), float(bounds[1])),
    )


def solve_for_target_drop(target_chi: float, channels: Sequence[ChannelModel], env: RadioEnv,
                          detector: DetectorSpec, bounds: Optional[tuple[float, float]] = None, *,
                          num_channels: Optional[int] = None, mode: RateMode = RateMode.QUADRATURE,
                          form: ClosedForm = ClosedForm.CLASSIC) -> float:
    """
    Longest sensing period whose throughput drop equals target_chi.

    Raises:
        DomainError: target below the achievable minimum or above χ(T_max)
    """
    channels = list(channels)
    num_channels = num_channels or len(channels)
    bounds = bounds or default_bounds(channels, detector)
    best = optimize_interval(channels, env, detector, bounds, num_channels=num_channels, mode=mode, form=form)
    if target_chi < best.chi_min:
        raise DomainError(f"target drop {target_chi:.6g} below the minimum achievable {best.chi_min:.6g}")
    if np.isclose(target_chi, best.chi_min, rtol=0.0, atol=1e-12):
        return best.t_opt

    def excess(period: float) -> float:
        policy = AccessPolicy(period=period, sensing_time=detector.sensing_time, num_channels=num_channels)
        return throughput_drop(policy, channels, env, detector.target_pfa, mode, form) - target_chi

    if excess(bounds[1]) < 0:
        raise DomainError(f"target drop {target_chi:.6g} not reached within T_max={bounds[1]:.6g}")
    return float(optimize.brentq(excess, best.t_opt, bounds[1], xtol=1e-10))
