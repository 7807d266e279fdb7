"""
Monte Carlo ground truth for the closed forms.

Generates ON/OFF occupancy traces, replays the periodic-sensing access
protocol and the senseless baseline, and measures captured opportunities
and mutual operation by walking a trace (the renewal oracle).
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
import structlog

from oppspec.core.analytics import AccessPolicy, ClosedForm, captured_opportunities, mutual_fraction
from oppspec.core.linkbudget import RadioEnv, sample_link_rates
from oppspec.core.occupancy import ChannelModel, DwellState, sample_dwells
from oppspec.core.sensing import (
    DetectorSpec,
    conditional_detection,
    conditional_false_alarm,
    detection_threshold,
)
from oppspec.utils.exceptions import InvalidInputError, SimulationError


logger = structlog.get_logger()

RngState = Union[int, np.random.SeedSequence, np.random.Generator]

ORACLE_MIN_PERIODS = 1_000
MIN_SIMULATED_PERIODS = 10_000
ORACLE_CHUNK = 1_000_000
ORACLE_TOLERANCE = 0.01

NO_OPPORTUNITY, INTERFERED, CLEAN = 0, 1, 2


class TraceOrigin(str, Enum):
    GENERATED = "generated"
    INGESTED = "ingested"
    BOOTSTRAPPED = "bootstrapped"


class SearchOrder(str, Enum):
    """
    ROUND_ROBIN: one channel probed per sensing instant, next channel after a busy verdict.
    WIDEBAND: every channel sensed in the same window; stay if idle, else the next idle one.
    """
    ROUND_ROBIN = "round_robin"
    WIDEBAND = "wideband"


class Accounting(str, Enum):
    """
    CAPTURED: bits only during the idle stretch before the MBS reappears,
    at rate C for a period with mutual operation and C0 otherwise.
    TIME_ACCURATE: C during mutual-operation spans, C0 during idle spans.
    """
    CAPTURED = "captured"
    TIME_ACCURATE = "time_accurate"


@dataclass(frozen=True)
class OccupancyTrace:
    """Alternating ON/OFF dwells starting at t = 0."""

    states: np.ndarray
    durations: np.ndarray
    origin: TraceOrigin = TraceOrigin.GENERATED
    _ends: np.ndarray = field(init=False, repr=False, compare=False)
    _on_before: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=bool)
        durations = np.asarray(self.durations, dtype=float)
        if states.ndim != 1 or states.shape != durations.shape or states.size == 0:
            raise InvalidInputError("trace needs matching, non-empty state and duration arrays")
        if np.any(~np.isfinite(durations)) or np.any(durations <= 0):
            raise InvalidInputError("dwell durations must be positive")
        if np.any(states[1:] == states[:-1]):
            raise InvalidInputError("trace states must alternate")
        on_time = np.where(states, durations, 0.0)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "_ends", np.cumsum(durations))
        object.__setattr__(self, "_on_before", np.concatenate(([0.0], np.cumsum(on_time)[:-1])))

    @classmethod
    def from_dwells(cls, first_on: bool, durations, origin: TraceOrigin = TraceOrigin.GENERATED) -> "OccupancyTrace":
        durations = np.asarray(durations, dtype=float)
        states = (np.arange(durations.size) % 2 == 0) == first_on
        return cls(states=states, durations=durations, origin=origin)

    @classmethod
    def constant(cls, state: DwellState, horizon: float,
                 origin: TraceOrigin = TraceOrigin.GENERATED) -> "OccupancyTrace":
        return cls(states=np.array([state is DwellState.ON]), durations=np.array([horizon]), origin=origin)

    @property
    def horizon(self) -> float:
        return float(self._ends[-1])

    def __len__(self) -> int:
        return self.durations.size

    def _index(self, times) -> np.ndarray:
        idx = np.searchsorted(self._ends, times, side="right")
        return np.minimum(idx, self.durations.size - 1)

    def state_at(self, times) -> np.ndarray:
        """True where the channel is ON."""
        return self.states[self._index(times)]

    def time_to_change(self, times) -> np.ndarray:
        """Remaining time in the dwell containing each instant (to the horizon for the last dwell)."""
        return self._ends[self._index(times)] - np.asarray(times, dtype=float)

    def occupied_time(self, times) -> np.ndarray:
        """Cumulative ON time over [0, t]."""
        times = np.asarray(times, dtype=float)
        idx = self._index(times)
        start = self._ends[idx] - self.durations[idx]
        return self._on_before[idx] + np.where(self.states[idx], times - start, 0.0)

    @property
    def occupied_fraction(self) -> float:
        return float(self.durations[self.states].sum() / self.horizon)

    def dwells(self, state: DwellState) -> np.ndarray:
        return self.durations[self.states == (state is DwellState.ON)]


@dataclass(frozen=True)
class OracleEstimate:
    zeta_hat: float
    tau_hat: float
    periods: int


@dataclass(frozen=True)
class OracleComparison:
    """Renewal-oracle measurement against both closed-form variants (perfect detection)."""

    period: float
    zeta_hat: float
    tau_hat: float
    zeta_classic: float
    zeta_renewal: float
    tau_classic: float
    tau_renewal: float

    @property
    def zeta_classic_deviation(self) -> float:
        return self.zeta_classic - self.zeta_hat

    @property
    def zeta_renewal_deviation(self) -> float:
        return self.zeta_renewal - self.zeta_hat

    @property
    def tau_classic_deviation(self) -> float:
        return self.tau_classic - self.tau_hat

    @property
    def tau_renewal_deviation(self) -> float:
        return self.tau_renewal - self.tau_hat

    @property
    def classic_within_tolerance(self) -> bool:
        return (abs(self.zeta_classic_deviation) < ORACLE_TOLERANCE
                and abs(self.tau_classic_deviation) < ORACLE_TOLERANCE)


@dataclass(frozen=True)
class SimReport:
    """Aggregated outcome of one access replay."""

    mean_throughput: float
    throughput_cdf: np.ndarray
    captured_fraction: float
    interfered_fraction: float
    no_opportunity_fraction: float
    seed: Optional[int]
    periods: int
    slot: float
    period_throughput: np.ndarray = field(repr=False, compare=False)

    def percentiles(self, qs: Sequence[float]) -> np.ndarray:
        return np.percentile(self.period_throughput, qs)


def _seed_sequence(rng_state: RngState) -> np.random.SeedSequence:
    """Fresh SeedSequence for rng_state; spawning never advances the caller's object."""
    if isinstance(rng_state, np.random.Generator):
        rng_state = rng_state.bit_generator.seed_seq
    if isinstance(rng_state, np.random.SeedSequence):
        return np.random.SeedSequence(rng_state.entropy, spawn_key=rng_state.spawn_key,
                                      pool_size=rng_state.pool_size)
    return np.random.SeedSequence(rng_state)


def _root_seed(seq: np.random.SeedSequence) -> Optional[int]:
    return int(seq.entropy) if isinstance(seq.entropy, (int, np.integer)) else None


def _assemble(first_on: bool, horizon: float, rng: np.random.Generator,
              draw_on: Callable[[int], np.ndarray], draw_off: Callable[[int], np.ndarray],
              mean_cycle: float, origin: TraceOrigin) -> OccupancyTrace:
    pairs = int(horizon / mean_cycle * 1.1) + 16
    chunks, total = [], 0.0
    while total < horizon:
        on, off = draw_on(pairs), draw_off(pairs)
        chunk = np.column_stack((on, off) if first_on else (off, on)).ravel()
        chunks.append(chunk)
        total += float(chunk.sum())
    durations = np.concatenate(chunks)
    ends = np.cumsum(durations)
    last = int(np.searchsorted(ends, horizon, side="left"))
    durations = durations[: last + 1].copy()
    durations[-1] -= ends[last] - horizon
    if durations[-1] <= 0:
        durations = durations[:-1]
    return OccupancyTrace.from_dwells(first_on, durations, origin)


def generate_trace(ch: ChannelModel, horizon: float, rng_state: RngState,
                   origin: TraceOrigin = TraceOrigin.GENERATED) -> OccupancyTrace:
    """
    Alternating dwell realization of a channel model over [0, horizon].

    Starts ON with probability u; the final dwell is clipped at the horizon.
    """
    if horizon <= 0:
        raise InvalidInputError(f"horizon must be positive, got {horizon!r}")
    rng = np.random.default_rng(rng_state)
    first_on = bool(rng.random() < ch.duty_cycle)
    return _assemble(
        first_on, horizon, rng,
        lambda n: sample_dwells(ch.on, rng, n),
        lambda n: sample_dwells(ch.off, rng, n),
        ch.on.mean + ch.off.mean,
        origin,
    )


def oracle_captured(trace: OccupancyTrace, period: float) -> OracleEstimate:
    """
    Walk sensing instants 0, T, 2T, ... with perfect detection.

    zeta_hat: idle time exploited after an instant that found the channel idle,
    up to the MBS reappearance or the next instant, over total time.
    tau_hat: share of exploited periods in which the MBS reappeared.
    """
    if period <= 0 or trace.horizon < ORACLE_MIN_PERIODS * period:
        raise InvalidInputError(
            f"trace horizon {trace.horizon:.6g} s shorter than {ORACLE_MIN_PERIODS} periods of {period:.6g} s"
        )
    periods = int(trace.horizon // period)
    captured, exploited, reappeared = 0.0, 0, 0
    for start in range(0, periods, ORACLE_CHUNK):
        instants = np.arange(start, min(start + ORACLE_CHUNK, periods)) * period
        idle = ~trace.state_at(instants)
        residual = trace.time_to_change(instants[idle])
        captured += float(np.minimum(residual, period).sum())
        exploited += int(idle.sum())
        reappeared += int(np.count_nonzero(residual < period))
    return OracleEstimate(
        zeta_hat=captured / (periods * period),
        tau_hat=reappeared / exploited if exploited else 0.0,
        periods=periods,
    )


def compare_with_oracle(channel: ChannelModel, period: float, trace: OccupancyTrace) -> OracleComparison:
    """Closed-form ζ and τ (p_fa = 0) in both variants against the oracle on `trace`."""
    estimate = oracle_captured(trace, period)
    comparison = OracleComparison(
        period=period,
        zeta_hat=estimate.zeta_hat,
        tau_hat=estimate.tau_hat,
        zeta_classic=captured_opportunities(channel, period, ClosedForm.CLASSIC),
        zeta_renewal=captured_opportunities(channel, period, ClosedForm.RENEWAL),
        tau_classic=mutual_fraction(channel.off, period, 0.0, ClosedForm.CLASSIC),
        tau_renewal=mutual_fraction(channel.off, period, 0.0, ClosedForm.RENEWAL),
    )
    if not comparison.classic_within_tolerance:
        logger.warning(
            "Classic closed form deviates from renewal oracle",
            period=period,
            zeta_deviation=comparison.zeta_classic_deviation,
            tau_deviation=comparison.tau_classic_deviation,
        )
    return comparison


def _cdf_points(samples: np.ndarray, points: int) -> np.ndarray:
    probs = np.linspace(0.0, 1.0, points)
    return np.column_stack((np.quantile(samples, probs), probs))


def _traces_for(channels: Sequence[Union[ChannelModel, OccupancyTrace]], count: int, horizon: float,
                seeds: Sequence[np.random.SeedSequence]) -> list[OccupancyTrace]:
    channels = list(channels)
    if len(channels) == 1 and count > 1 and isinstance(channels[0], ChannelModel):
        channels = channels * count
    if len(channels) != count:
        raise InvalidInputError(f"{len(channels)} channels given for a policy over {count} channels")
    traces = []
    for source, seq in zip(channels, seeds):
        trace = source if isinstance(source, OccupancyTrace) else generate_trace(source, horizon, seq)
        # generated horizons carry cumulative-sum rounding
        if trace.horizon < horizon * (1.0 - 1e-9):
            raise SimulationError(f"trace covers {trace.horizon:.6g} s, replay needs {horizon:.6g} s")
        traces.append(trace)
    return traces


def _choose_channels(idle: np.ndarray, search: SearchOrder) -> np.ndarray:
    num_channels, periods = idle.shape
    verdicts = idle.T.tolist()
    chosen = [-1] * periods
    current = 0
    for j, row in enumerate(verdicts):
        if row[current]:
            chosen[j] = current
            continue
        if search is SearchOrder.ROUND_ROBIN:
            current = (current + 1) % num_channels
            continue
        for step in range(1, num_channels):
            candidate = (current + step) % num_channels
            if row[candidate]:
                current = candidate
                chosen[j] = candidate
                break
    return np.asarray(chosen, dtype=int)


def simulate_access(channels: Sequence[Union[ChannelModel, OccupancyTrace]], policy: AccessPolicy,
                    detector: DetectorSpec, env: RadioEnv, duration: float, rng_state: RngState, *,
                    search: SearchOrder = SearchOrder.ROUND_ROBIN,
                    accounting: Accounting = Accounting.CAPTURED,
                    cdf_points: int = 201) -> SimReport:
    """
    Replay the periodic-sensing access protocol.

    Each period spends t_s sensing, then transmits for T on an idle verdict.
    Verdicts are drawn from the conditional false-alarm rate on idle channels
    and the conditional miss rate (at the period's MBS sensing SNR) on busy
    ones. Shadowing is redrawn every period.

    Args:
        channels: Channel models or traces, one per policy channel
        policy: Sensing period, sensing time and L
        detector: Target false-alarm rate and window
        env: Radio environment for the per-period rate draws
        duration: Simulated time, at least 10⁴ sensing periods
        rng_state: Seed, SeedSequence or Generator

    Returns:
        Mean throughput, per-period throughput CDF and outcome fractions
    """
    period, sensing = policy.period, policy.sensing_time
    if duration < MIN_SIMULATED_PERIODS * period:
        raise InvalidInputError(f"duration {duration:.6g} s shorter than {MIN_SIMULATED_PERIODS} periods")
    cycle = period + sensing
    periods = int(duration // cycle)
    seq = _seed_sequence(rng_state)
    trace_seqs = seq.spawn(policy.num_channels)
    rng = np.random.default_rng(seq.spawn(1)[0])
    traces = _traces_for(channels, policy.num_channels, periods * cycle + cycle, trace_seqs)

    decisions = np.arange(periods) * cycle + sensing
    busy = np.vstack([trace.state_at(decisions) for trace in traces])
    draws = sample_link_rates(env, rng, periods)
    rho = detection_threshold(detector)
    pfa = conditional_false_alarm(detector, rho)
    pd = conditional_detection(detector, rho, draws.sensing_snr)
    uniforms = rng.random(busy.shape)
    idle_verdict = np.where(busy, uniforms >= pd[np.newaxis, :], uniforms >= pfa)

    chosen = _choose_channels(idle_verdict, search)
    active = np.flatnonzero(chosen >= 0)
    residual = np.zeros(periods)
    on_time = np.zeros(periods)
    for c, trace in enumerate(traces):
        rows = active[chosen[active] == c]
        starts = decisions[rows]
        residual[rows] = trace.time_to_change(starts)
        on_time[rows] = trace.occupied_time(starts + period) - trace.occupied_time(starts)
    busy_at_start = np.zeros(periods, dtype=bool)
    busy_at_start[active] = busy[chosen[active], active]

    bits = np.zeros(periods)
    if accounting is Accounting.CAPTURED:
        interfered = busy_at_start | (residual < period)
        stretch = np.where(busy_at_start, 0.0, np.minimum(residual, period))
        bits[active] = (np.where(interfered, draws.c, draws.c0) * stretch)[active]
    else:
        interfered = on_time > 0
        bits[active] = (draws.c * on_time + draws.c0 * (period - on_time))[active]

    outcome = np.full(periods, NO_OPPORTUNITY)
    outcome[active] = np.where(interfered[active], INTERFERED, CLEAN)
    samples = bits / cycle
    report = SimReport(
        mean_throughput=float(bits.sum() / (periods * cycle)),
        throughput_cdf=_cdf_points(samples, cdf_points),
        captured_fraction=float(np.mean(outcome == CLEAN)),
        interfered_fraction=float(np.mean(outcome == INTERFERED)),
        no_opportunity_fraction=float(np.mean(outcome == NO_OPPORTUNITY)),
        seed=_root_seed(seq),
        periods=periods,
        slot=cycle,
        period_throughput=samples,
    )
    logger.info(
        "Access replay finished",
        periods=periods,
        num_channels=policy.num_channels,
        search=search.value,
        accounting=accounting.value,
        mean_throughput=report.mean_throughput,
    )
    return report


def simulate_senseless(channels: Sequence[Union[ChannelModel, OccupancyTrace]], env: RadioEnv, duration: float,
                       rng_state: RngState, *, slot: float = 0.2, cdf_points: int = 201) -> SimReport:
    """
    Continuous transmission on one uniformly chosen channel, no sensing.

    Rate is C while the MBS is ON and C0 while it is OFF; shadowing is redrawn
    every slot.
    """
    if slot <= 0 or duration < MIN_SIMULATED_PERIODS * slot:
        raise InvalidInputError(f"duration {duration:.6g} s shorter than {MIN_SIMULATED_PERIODS} slots")
    channels = list(channels)
    if not channels:
        raise InvalidInputError("at least one channel is required")
    seq = _seed_sequence(rng_state)
    trace_seq, pick_seq = seq.spawn(2)
    rng = np.random.default_rng(pick_seq)
    source = channels[int(rng.integers(len(channels)))]
    slots = int(duration // slot)
    trace = _traces_for([source], 1, slots * slot, [trace_seq])[0]

    starts = np.arange(slots) * slot
    on_time = trace.occupied_time(starts + slot) - trace.occupied_time(starts)
    draws = sample_link_rates(env, rng, slots)
    bits = draws.c * on_time + draws.c0 * (slot - on_time)
    samples = bits / slot
    interfered = on_time > 0
    report = SimReport(
        mean_throughput=float(bits.sum() / (slots * slot)),
        throughput_cdf=_cdf_points(samples, cdf_points),
        captured_fraction=float(np.mean(~interfered)),
        interfered_fraction=float(np.mean(interfered)),
        no_opportunity_fraction=0.0,
        seed=_root_seed(seq),
        periods=slots,
        slot=slot,
        period_throughput=samples,
    )
    logger.info("Senseless replay finished", slots=slots, mean_throughput=report.mean_throughput)
    return report


def bootstrap_channels(base: Sequence[OccupancyTrace], num_channels: int, rng_state: RngState,
                       horizon: Optional[float] = None) -> list[OccupancyTrace]:
    """
    Build independent channels by resampling pooled base dwells per state.

    Args:
        base: Recorded or generated traces
        num_channels: L
        rng_state: Seed, SeedSequence or Generator
        horizon: Length of each output trace; defaults to the longest base trace

    Returns:
        L bootstrapped traces
    """
    base = list(base)
    if not base:
        raise InvalidInputError("bootstrap needs at least one base trace")
    if num_channels < 1:
        raise InvalidInputError(f"channel count must be positive, got {num_channels!r}")
    on = np.concatenate([trace.dwells(DwellState.ON) for trace in base])
    off = np.concatenate([trace.dwells(DwellState.OFF) for trace in base])
    if on.size == 0 or off.size == 0:
        raise InvalidInputError("base traces must contain both ON and OFF dwells")
    horizon = horizon or max(trace.horizon for trace in base)
    occupied = on.sum() / (on.sum() + off.sum())

    outputs = []
    for seq in _seed_sequence(rng_state).spawn(num_channels):
        rng = np.random.default_rng(seq)
        first_on = bool(rng.random() < occupied)
        outputs.append(_assemble(
            first_on, horizon, rng,
            lambda n, rng=rng: rng.choice(on, size=n, replace=True),
            lambda n, rng=rng: rng.choice(off, size=n, replace=True),
            float(on.mean() + off.mean()),
            TraceOrigin.BOOTSTRAPPED,
        ))
    logger.info("Channels bootstrapped", base_traces=len(base), num_channels=num_channels, horizon=horizon)
    return outputs


def merge_reports(reports: Sequence[SimReport], seed: Optional[int], cdf_points: int = 201) -> SimReport:
    """Pool replications in the given order."""
    if not reports:
        raise InvalidInputError("no reports to merge")
    samples = np.concatenate([report.period_throughput for report in reports])
    weights = np.array([report.periods for report in reports], dtype=float)

    def pooled(name: str) -> float:
        return float(np.sum(weights * [getattr(report, name) for report in reports]) / weights.sum())

    return SimReport(
        mean_throughput=pooled("mean_throughput"),
        throughput_cdf=_cdf_points(samples, cdf_points),
        captured_fraction=pooled("captured_fraction"),
        interfered_fraction=pooled("interfered_fraction"),
        no_opportunity_fraction=pooled("no_opportunity_fraction"),
        seed=seed,
        periods=int(weights.sum()),
        slot=reports[0].slot,
        period_throughput=samples,
    )


def run_replications(task: Callable[[np.random.SeedSequence], SimReport], rng_state: RngState,
                     replications: int = 1, workers: int = 1, cdf_points: int = 201) -> SimReport:
    """
    Run independent replications on spawned sub-seeds and pool them.

    `task` must be picklable when workers > 1.
    """
    if replications < 1:
        raise InvalidInputError(f"replication count must be positive, got {replications!r}")
    seq = _seed_sequence(rng_state)
    children = seq.spawn(replications)
    if workers > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(task, children))
    else:
        reports = [task(child) for child in children]
    return merge_reports(reports, _root_seed(seq), cdf_points)
