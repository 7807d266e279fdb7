"""
Exponential-mixture (hyperexponential) dwell-time models.

Represents, fits, scores and samples the ON/OFF dwell distributions of a
primary-user channel.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from oppspec.utils.exceptions import FitError, InvalidInputError


logger = structlog.get_logger()

WEIGHT_TOLERANCE = 1e-9
MAX_HISTOGRAM_BINS = 10_000


class DwellState(str, Enum):
    """Channel state a dwell belongs to."""
    ON = "ON"
    OFF = "OFF"


class ExpMixture(BaseModel):
    """
    Mixture of k exponential distributions.

    pdf(θ) = Σ w_i λ_i exp(-λ_i θ), rates in 1/s, sorted ascending.
    """

    model_config = ConfigDict(frozen=True)

    weights: tuple[float, ...] = Field(..., min_length=1)
    rates: tuple[float, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_invariants(self) -> "ExpMixture":
        if len(self.weights) != len(self.rates):
            raise ValueError("weights and rates must have the same length")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights sum to {sum(self.weights)!r}, expected 1")
        if any(not np.isfinite(r) or r <= 0 for r in self.rates):
            raise ValueError("rates must be positive and finite")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("rates must be strictly increasing")
        return self

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    @property
    def mean(self) -> float:
        return float(np.sum(self.w / self.lam))

    def pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.sum(self.w * self.lam * np.exp(-np.multiply.outer(theta, self.lam)), axis=-1)

    def sf(self, theta):
        """Survival function 1 - cdf."""
        theta = np.asarray(theta, dtype=float)
        return np.sum(self.w * np.exp(-np.multiply.outer(theta, self.lam)), axis=-1)

    def cdf(self, theta):
        return 1.0 - self.sf(theta)

    @classmethod
    def exponential(cls, rate: float) -> "ExpMixture":
        return cls(weights=(1.0,), rates=(rate,))


class ChannelModel(BaseModel):
    """Paired ON (occupied) and OFF (idle) dwell mixtures of one channel."""

    model_config = ConfigDict(frozen=True)

    on: ExpMixture
    off: ExpMixture

    @model_validator(mode="after")
    def check_duty_cycle(self) -> "ChannelModel":
        u = self.duty_cycle
        if not 0.0 < u < 1.0:
            raise ValueError(f"duty cycle {u!r} outside (0, 1)")
        return self

    @property
    def duty_cycle(self) -> float:
        on_mean = self.on.mean
        return on_mean / (on_mean + self.off.mean)

    def mixture(self, state: DwellState) -> ExpMixture:
        return self.on if state is DwellState.ON else self.off


@dataclass(frozen=True)
class DwellSamples:
    """Observed dwell durations (seconds) of one channel state."""

    values: np.ndarray
    state: DwellState

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidInputError("dwell samples must be one-dimensional")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise InvalidInputError("dwell samples must be positive and finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


class FitConfig(BaseModel):
    """
    Anchors of the tail-recursion fit.

    c_i = c1 * a^-(i-1); each level probes the residual tail at c_i and b*c_i.
    c1 = None picks the 99th percentile of the samples.
    """

    model_config = ConfigDict(frozen=True)

    k: int = Field(default=8, ge=1)
    c1: Optional[float] = Field(default=None, gt=0)
    b: float = Field(default=2.0, gt=1)
    a: float = Field(default=4.0)

    @model_validator(mode="after")
    def check_decay(self) -> "FitConfig":
        if self.a <= self.b:
            raise ValueError("anchor decay a must exceed tail multiplier b")
        return self


@dataclass(frozen=True)
class MixtureStats:
    pdf: float
    cdf: float
    mean: float


class EmpiricalCdf:
    """Right-continuous empirical CDF of a sample."""

    def __init__(self, values: np.ndarray):
        self.sorted = np.sort(np.asarray(values, dtype=float))
        self.n = len(self.sorted)

    def cdf(self, theta):
        return np.searchsorted(self.sorted, theta, side="right") / self.n

    def sf(self, theta):
        return 1.0 - self.cdf(theta)


def mixture_stats(m: ExpMixture, theta: float) -> MixtureStats:
    """Density, CDF and mean of a mixture at θ ≥ 0."""
    if theta < 0:
        raise InvalidInputError(f"theta must be non-negative, got {theta!r}")
    return MixtureStats(pdf=float(m.pdf(theta)), cdf=float(m.cdf(theta)), mean=m.mean)


def duty_cycle(ch: ChannelModel) -> float:
    """Long-run occupied fraction u from the mixture means."""
    return ch.duty_cycle


def default_anchor(values: np.ndarray, b: float) -> float:
    """99th percentile, pulled below max/b so the b*c1 probe stays inside the sample."""
    c1 = float(np.quantile(values, 0.99))
    ceiling = float(np.max(values)) / b * (1.0 - 1e-9)
    if c1 > ceiling:
        logger.debug("Tail anchor clamped", quantile_anchor=c1, anchor=ceiling)
        c1 = ceiling
    return c1


def _tail_rate(hi: float, lo: float, c: float, b: float) -> float:
    return float(np.log(hi / lo) / ((b - 1.0) * c))


def fit_mixture(samples: DwellSamples, cfg: Optional[FitConfig] = None) -> ExpMixture:
    """
    Fit an exponential mixture by tail recursion.

    Level i reads the residual survival function
    Fc_i(θ) = 1 - F(θ) - Σ_{j<i} w_j exp(-λ_j θ) at c_i and b*c_i:
        λ_i = ln(Fc_i(c_i) / Fc_i(b c_i)) / ((b-1) c_i),  w_i = Fc_i(c_i) exp(λ_i c_i)
    The last level takes the remaining weight w_k = 1 - Σ w_j and
    λ_k = ln(w_k / Fc_k(c_k)) / c_k. Infeasible levels are dropped and the
    result renormalized.

    Args:
        samples: Observed dwells
        cfg: Fit anchors (defaults: k=8, c1=99th percentile, b=2, a=4)

    Returns:
        Mixture with rates sorted ascending
    """
    cfg = cfg or FitConfig()
    if len(samples) == 0:
        raise FitError("cannot fit an empty sample")

    ecdf = EmpiricalCdf(samples.values)
    c1 = cfg.c1 if cfg.c1 is not None else default_anchor(ecdf.sorted, cfg.b)
    if c1 >= ecdf.sorted[-1] or ecdf.sf(cfg.b * c1) <= 0:
        raise FitError(
            f"tail anchor c1={c1:.6g} leaves no samples above b*c1 (max {ecdf.sorted[-1]:.6g})",
            level=1,
        )

    weights: list[float] = []
    rates: list[float] = []
    dropped: list[int] = []

    def residual(theta: float) -> float:
        fitted = sum(w * np.exp(-lam * theta) for w, lam in zip(weights, rates))
        return float(ecdf.sf(theta) - fitted)

    tail_levels = cfg.k if cfg.k == 1 else cfg.k - 1
    for i in range(1, tail_levels + 1):
        c = c1 * cfg.a ** -(i - 1)
        hi, lo = residual(c), residual(cfg.b * c)
        if hi == lo and hi > 0:
            raise FitError(f"degenerate tail at level {i}: F(c_i) equals F(b*c_i)", level=i)
        if hi <= 0 or lo <= 0 or hi < lo:
            dropped.append(i)
            logger.warning("Fit level dropped", level=i, c=c, residual_hi=hi, residual_lo=lo)
            continue
        lam = _tail_rate(hi, lo, c, cfg.b)
        weights.append(hi * float(np.exp(lam * c)))
        rates.append(lam)

    if cfg.k > 1:
        c = c1 * cfg.a ** -(cfg.k - 1)
        w_k = 1.0 - sum(weights)
        hi = residual(c)
        if w_k > 0 and 0 < hi < w_k:
            weights.append(w_k)
            rates.append(float(np.log(w_k / hi) / c))
        else:
            dropped.append(cfg.k)
            logger.warning("Fit level dropped", level=cfg.k, c=c, remaining_weight=w_k, residual_hi=hi)

    if not weights:
        raise FitError("no feasible mixture component", level=1)

    mixture = _normalized(np.asarray(weights), np.asarray(rates))
    logger.info(
        "Mixture fitted",
        state=samples.state.value,
        samples=len(samples),
        k_requested=cfg.k,
        k_effective=mixture.k,
        dropped_levels=dropped,
        c1=c1,
    )
    return mixture


def _normalized(weights: np.ndarray, rates: np.ndarray) -> ExpMixture:
    order = np.argsort(rates, kind="stable")
    weights, rates = weights[order], rates[order]
    merged_w: list[float] = []
    merged_r: list[float] = []
    for w, lam in zip(weights, rates):
        if merged_r and np.isclose(lam, merged_r[-1], rtol=1e-12, atol=0.0):
            merged_w[-1] += float(w)
        else:
            merged_w.append(float(w))
            merged_r.append(float(lam))
    total = sum(merged_w)
    merged_w = [w / total for w in merged_w]
    # absorb rounding so the sum is 1 to machine precision
    merged_w[-1] = 1.0 - sum(merged_w[:-1])
    return ExpMixture(weights=tuple(merged_w), rates=tuple(merged_r))


def normalize_mixture(weights, rates) -> ExpMixture:
    """Build a mixture from unsorted, not-quite-normalized components."""
    weights = np.asarray(weights, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if weights.shape != rates.shape or weights.size == 0:
        raise InvalidInputError("weights and rates must be non-empty and of equal length")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise InvalidInputError("weights must be non-negative with a positive sum")
    return _normalized(weights, rates)


def histogram_edges(values: np.ndarray) -> np.ndarray:
    """Freedman–Diaconis bin edges, at most MAX_HISTOGRAM_BINS bins."""
    values = np.asarray(values, dtype=float)
    iqr, span = stats.iqr(values), np.ptp(values)
    bins = 1
    if iqr > 0 and span > 0:
        bins = int(np.ceil(span / (2.0 * iqr * values.size ** (-1.0 / 3.0))))
    return np.histogram_bin_edges(values, bins=min(max(bins, 1), MAX_HISTOGRAM_BINS))


def log_likelihood_estimate(values: np.ndarray, sf: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    Histogram estimate of Φ = ∫ f log(g/f) dθ.

    f is the Freedman–Diaconis histogram of `values`; g's bin mass is taken
    from the survival function. Empty bins are skipped. Φ ≤ 0, nearer 0 is better.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidInputError("cannot score an empty sample")
    counts, edges = np.histogram(values, bins=histogram_edges(values))
    occupied = counts > 0
    p = counts[occupied] / values.size
    q = (np.asarray(sf(edges[:-1]), dtype=float) - np.asarray(sf(edges[1:]), dtype=float))[occupied]
    if np.any(q <= 0):
        raise InvalidInputError("model assigns no mass to part of the sample's support")
    return float(np.sum(p * np.log(q / p)))


def goodness_of_fit(samples: DwellSamples, m: ExpMixture) -> float:
    """Log-likelihood estimate Φ of a mixture against observed dwells."""
    return log_likelihood_estimate(samples.values, m.sf)


def baseline_scores(samples: DwellSamples) -> dict[str, float]:
    """Φ of maximum-likelihood exponential, log-normal and generalized-Pareto fits."""
    values = samples.values
    fitted = {
        "exponential": stats.expon(*stats.expon.fit(values, floc=0)),
        "lognormal": stats.lognorm(*stats.lognorm.fit(values, floc=0)),
        "genpareto": stats.genpareto(*stats.genpareto.fit(values, floc=0)),
    }
    scores = {}
    for name, dist in fitted.items():
        try:
            scores[name] = log_likelihood_estimate(values, dist.sf)
        except InvalidInputError:
            logger.warning("Baseline cannot cover sample support", baseline=name, state=samples.state.value)
            scores[name] = float("-inf")
    return scores


def sample_dwells(m: ExpMixture, rng: np.random.Generator, n: int) -> np.ndarray:
    """n independent dwell draws: component by weight, then exponential."""
    component = rng.choice(m.k, size=n, p=m.w)
    return rng.exponential(1.0, size=n) / m.lam[component]


def sample_dwell(m: ExpMixture, rng: np.random.Generator) -> float:
    """Single dwell draw."""
    return float(sample_dwells(m, rng, 1)[0])
