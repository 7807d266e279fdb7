from functools import partial

import numpy as np
import pytest
from scipy import stats

from oppspec.core.analytics import AccessPolicy, ClosedForm, RateMode, evaluate_policy, optimize_interval
from oppspec.core.linkbudget import sample_link_rates
from oppspec.core.occupancy import ChannelModel, DwellState, ExpMixture
from oppspec.core.sensing import DetectorSpec, conditional_false_alarm, detection_threshold
from oppspec.services.simkernel import (
    Accounting,
    OccupancyTrace,
    SearchOrder,
    TraceOrigin,
    bootstrap_channels,
    compare_with_oracle,
    generate_trace,
    oracle_captured,
    run_replications,
    simulate_access,
    simulate_senseless,
)
from oppspec.utils.exceptions import InvalidInputError, SimulationError


def _channel(u: float, k: int, mean_off: float = 1.0) -> ChannelModel:
    """OFF mean `mean_off`, ON scaled to duty cycle u; k=2 uses a 50/50 two-rate shape."""
    shape = (0.5, 0.5), (2.0 / 3.0, 2.0)
    mean_on = u / (1 - u) * mean_off
    if k == 1:
        return ChannelModel(on=ExpMixture.exponential(1 / mean_on), off=ExpMixture.exponential(1 / mean_off))
    weights, rates = shape
    return ChannelModel(
        on=ExpMixture(weights=weights, rates=tuple(r / mean_on for r in rates)),
        off=ExpMixture(weights=weights, rates=tuple(r / mean_off for r in rates)),
    )


def test_trace_lookups():
    trace = OccupancyTrace.from_dwells(True, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(trace.state_at([0.5, 1.5, 4.0]), [True, False, True])
    assert trace.time_to_change(np.array([0.5]))[0] == pytest.approx(0.5)
    assert trace.occupied_time(np.array([1.5]))[0] == pytest.approx(1.0)
    assert trace.occupied_time(np.array([6.0]))[0] == pytest.approx(4.0)
    assert trace.occupied_fraction == pytest.approx(4.0 / 6.0)
    np.testing.assert_array_equal(trace.dwells(DwellState.ON), [1.0, 3.0])
    assert trace.horizon == pytest.approx(6.0)


def test_trace_rejects_bad_dwells():
    with pytest.raises(InvalidInputError):
        OccupancyTrace(states=np.array([True, True]), durations=np.array([1.0, 1.0]))
    with pytest.raises(InvalidInputError):
        OccupancyTrace.from_dwells(False, [1.0, 0.0])


def test_constant_trace():
    trace = OccupancyTrace.constant(DwellState.ON, 10.0)
    assert trace.occupied_fraction == 1.0
    assert len(trace) == 1


def test_generate_trace_is_reproducible(symmetric_channel):
    a = generate_trace(symmetric_channel, 1000.0, 5)
    b = generate_trace(symmetric_channel, 1000.0, 5)
    np.testing.assert_array_equal(a.durations, b.durations)
    assert a.horizon == pytest.approx(1000.0, rel=1e-12)
    assert a.origin is TraceOrigin.GENERATED


def test_generated_duty_cycle(rng):
    ch = _channel(0.7, 2)
    trace = generate_trace(ch, 200_000.0, rng)
    assert trace.occupied_fraction == pytest.approx(0.7, abs=0.01)


def test_oracle_requires_long_trace(symmetric_channel):
    trace = generate_trace(symmetric_channel, 50.0, 1)
    with pytest.raises(InvalidInputError):
        oracle_captured(trace, 1.0)


def test_oracle_on_hand_made_trace():
    # idle for the first 0.25 s of every second; instants every 0.5 s
    trace = OccupancyTrace.from_dwells(False, [0.25, 0.75] * 1000)
    estimate = oracle_captured(trace, 0.5)
    assert estimate.periods == 2000
    assert estimate.zeta_hat == pytest.approx(0.25)
    assert estimate.tau_hat == pytest.approx(1.0)


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("u", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("t_lambda", [0.1, 1.0, 10.0])
def test_renewal_forms_match_oracle(k, u, t_lambda):
    ch = _channel(u, k)
    horizon = 500_000 * (ch.on.mean + ch.off.mean)
    trace = generate_trace(ch, horizon, np.random.SeedSequence([k, int(u * 10), int(t_lambda * 10)]))
    cmp = compare_with_oracle(ch, t_lambda, trace)
    assert cmp.zeta_renewal == pytest.approx(cmp.zeta_hat, abs=0.01)
    assert cmp.tau_renewal == pytest.approx(cmp.tau_hat, abs=0.01)
    if k == 1:
        assert cmp.tau_classic == pytest.approx(cmp.tau_hat, abs=0.01)
    if k == 1 and u == 0.5:
        assert cmp.classic_within_tolerance


def test_simulation_needs_enough_periods(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, num_channels=1)
    with pytest.raises(InvalidInputError):
        simulate_access([symmetric_channel], policy, detector, ref_env, 100.0, 1)


def test_trace_shorter_than_replay(ref_env, detector):
    policy = AccessPolicy(period=0.1, num_channels=1)
    short = OccupancyTrace.constant(DwellState.OFF, 500.0)
    with pytest.raises(SimulationError):
        simulate_access([short], policy, detector, ref_env, 2000.0, 1)


def test_report_structure(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, num_channels=2)
    report = simulate_access([symmetric_channel], policy, detector, ref_env, 3000.0, 9)
    total = report.captured_fraction + report.interfered_fraction + report.no_opportunity_fraction
    assert total == pytest.approx(1.0)
    assert report.throughput_cdf.shape == (201, 2)
    assert np.all(np.diff(report.throughput_cdf[:, 0]) >= 0)
    assert report.throughput_cdf[0, 1] == 0.0 and report.throughput_cdf[-1, 1] == 1.0
    assert report.mean_throughput == pytest.approx(report.period_throughput.mean())
    assert report.seed == 9
    p = report.percentiles([5, 50, 95])
    assert p[0] <= p[1] <= p[2]


def test_simulation_is_reproducible(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, num_channels=2)
    a = simulate_access([symmetric_channel], policy, detector, ref_env, 3000.0, 4, search=SearchOrder.WIDEBAND)
    b = simulate_access([symmetric_channel], policy, detector, ref_env, 3000.0, 4, search=SearchOrder.WIDEBAND)
    assert a.mean_throughput == b.mean_throughput
    np.testing.assert_array_equal(a.period_throughput, b.period_throughput)


@pytest.mark.parametrize("accounting", list(Accounting))
def test_always_idle_channel(ref_env, detector, accounting):
    period, duration = 0.1, 2000.0
    trace = OccupancyTrace.constant(DwellState.OFF, duration + 1.0)
    policy = AccessPolicy(period=period, sensing_time=detector.sensing_time, num_channels=1)
    report = simulate_access([trace], policy, detector, ref_env, duration, 2, accounting=accounting)
    idle = 1 - conditional_false_alarm(detector, detection_threshold(detector))
    c0 = sample_link_rates(ref_env, np.random.default_rng(0), 200_000).c0.mean()
    assert report.interfered_fraction == 0.0
    assert report.mean_throughput == pytest.approx(idle * c0 * period / (period + detector.sensing_time), rel=0.02)


def test_always_busy_channel(ref_env, detector):
    trace = OccupancyTrace.constant(DwellState.ON, 2001.0)
    policy = AccessPolicy(period=0.1, sensing_time=detector.sensing_time, num_channels=1)
    report = simulate_access([trace], policy, detector, ref_env, 2000.0, 2)
    assert report.no_opportunity_fraction > 0.99
    assert report.mean_throughput < 0.01 * 100e6


def test_same_seed_sequence_reproduces_runs(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, num_channels=2)
    seq = np.random.SeedSequence(5)
    a = simulate_access([symmetric_channel], policy, detector, ref_env, 3000.0, seq)
    b = simulate_access([symmetric_channel], policy, detector, ref_env, 3000.0, seq)
    np.testing.assert_array_equal(a.period_throughput, b.period_throughput)
    from_int = simulate_access([symmetric_channel], policy, detector, ref_env, 3000.0, 5)
    assert a.mean_throughput == from_int.mean_throughput

    base = [generate_trace(symmetric_channel, 5000.0, s) for s in (1, 2)]
    first, second = (bootstrap_channels(base, 2, seq, horizon=5000.0) for _ in range(2))
    for x, y in zip(first, second):
        np.testing.assert_array_equal(x.dwells(DwellState.OFF), y.dwells(DwellState.OFF))


@pytest.mark.parametrize("period", [0.05, 0.2, 1.0])
@pytest.mark.parametrize("num_channels", [1, 3])
def test_throughput_below_interference_free_bound(symmetric_channel, ref_env, detector, period, num_channels):
    policy = AccessPolicy(period=period, sensing_time=detector.sensing_time, num_channels=num_channels)
    figures = evaluate_policy(policy, [symmetric_channel], ref_env, detector.target_pfa)
    duration = 15_000.5 * (period + detector.sensing_time)
    report = simulate_access([symmetric_channel], policy, detector, ref_env, duration, 13,
                             search=SearchOrder.WIDEBAND)
    assert report.mean_throughput <= figures.eta * figures.zeta_s * figures.c0_mean * 1.02


def test_throughput_cdf_splits_into_interfered_and_clean_regions(symmetric_channel, heavy_env, detector):
    policy = AccessPolicy(period=0.2, sensing_time=detector.sensing_time, num_channels=2)
    report = simulate_access([symmetric_channel], policy, detector, heavy_env, 20_000.5 * 0.22, 17,
                             search=SearchOrder.WIDEBAND)
    # interfered periods carry at most E{C}-level rates, clean ones the full C0
    level = 0.5 * 100e6 * policy.period / (policy.period + policy.sensing_time)
    below = report.interfered_fraction + report.no_opportunity_fraction
    assert np.mean(report.period_throughput <= level) == pytest.approx(below, abs=0.02)
    cdf = report.throughput_cdf
    assert np.interp(level, cdf[:, 0], cdf[:, 1]) == pytest.approx(below, abs=0.02)


def test_wideband_search_beats_round_robin(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, sensing_time=detector.sensing_time, num_channels=3)
    runs = {
        search: simulate_access([symmetric_channel], policy, detector, ref_env, 5000.0, 8, search=search)
        for search in SearchOrder
    }
    assert runs[SearchOrder.WIDEBAND].mean_throughput > runs[SearchOrder.ROUND_ROBIN].mean_throughput


def test_senseless_throughput(symmetric_channel, ref_env):
    report = simulate_senseless([symmetric_channel], ref_env, 20_000.0, 3)
    draws = sample_link_rates(ref_env, np.random.default_rng(1), 200_000)
    expected = 0.5 * draws.c.mean() + 0.5 * draws.c0.mean()
    assert report.mean_throughput == pytest.approx(expected, rel=0.03)
    assert report.no_opportunity_fraction == 0.0


def test_senseless_requires_duration(symmetric_channel, ref_env):
    with pytest.raises(InvalidInputError):
        simulate_senseless([symmetric_channel], ref_env, 100.0, 3)


def test_bootstrap_channels(symmetric_channel):
    base = [generate_trace(symmetric_channel, 100_000.0, s) for s in (1, 2)]
    out = bootstrap_channels(base, 3, 7, horizon=200_000.0)
    assert len(out) == 3
    pooled_on = np.concatenate([t.dwells(DwellState.ON) for t in base])
    for trace in out:
        assert trace.origin is TraceOrigin.BOOTSTRAPPED
        assert trace.horizon == pytest.approx(200_000.0, rel=1e-12)
        assert stats.ks_2samp(trace.dwells(DwellState.ON)[:-1], pooled_on).statistic < 0.01


def test_bootstrap_needs_base():
    with pytest.raises(InvalidInputError):
        bootstrap_channels([], 2, 1)
    with pytest.raises(InvalidInputError):
        bootstrap_channels([OccupancyTrace.constant(DwellState.ON, 10.0)], 2, 1)


def test_replications_pool_in_order(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, sensing_time=detector.sensing_time, num_channels=2)
    task = partial(simulate_access, [symmetric_channel], policy, detector, ref_env, 2300.0)
    single = task(np.random.SeedSequence(5).spawn(3)[1])
    pooled = run_replications(task, 5, replications=3)
    assert pooled.periods == 3 * single.periods
    assert pooled.seed == 5
    np.testing.assert_array_equal(pooled.period_throughput[single.periods:2 * single.periods],
                                  single.period_throughput)


@pytest.mark.slow
def test_replications_across_processes(symmetric_channel, ref_env, detector):
    policy = AccessPolicy(period=0.2, sensing_time=detector.sensing_time, num_channels=2)
    task = partial(simulate_access, [symmetric_channel], policy, detector, ref_env, 2300.0)
    serial = run_replications(task, 5, replications=2, workers=1)
    parallel = run_replications(task, 5, replications=2, workers=2)
    np.testing.assert_array_equal(serial.period_throughput, parallel.period_throughput)


def _simulated(channels, period, detector, env, periods, seed, num_channels, search=SearchOrder.WIDEBAND):
    policy = AccessPolicy(period=period, sensing_time=detector.sensing_time, num_channels=num_channels)
    duration = (periods + 0.5) * (period + detector.sensing_time)
    return simulate_access(channels, policy, detector, env, duration, seed, search=search).mean_throughput


@pytest.mark.slow
def test_simulated_optimum_matches_closed_form(symmetric_channel, ref_env, detector):
    best = optimize_interval([symmetric_channel], ref_env, detector, num_channels=2)
    at_opt = _simulated([symmetric_channel], best.t_opt, detector, ref_env, 200_000, 21, 2)
    shorter = _simulated([symmetric_channel], best.t_opt / 4, detector, ref_env, 200_000, 21, 2)
    longer = _simulated([symmetric_channel], best.t_opt * 4, detector, ref_env, 200_000, 21, 2)
    assert at_opt == pytest.approx(best.c_opt, rel=0.03)
    assert at_opt > shorter
    assert at_opt > longer


@pytest.mark.slow
@pytest.mark.parametrize("u", [0.5, 0.6, 0.7, 0.8, 0.9])
@pytest.mark.parametrize("num_channels", [3, 4])
@pytest.mark.parametrize("mean_off", [2.0, 5.0])
def test_optimized_access_beats_senseless(heavy_env, detector, u, num_channels, mean_off):
    ch = _channel(u, 1, mean_off)
    best = optimize_interval([ch], heavy_env, detector, num_channels=num_channels,
                             mode=RateMode.QUADRATURE, form=ClosedForm.RENEWAL)
    seed = int(u * 100) + num_channels
    optimized = _simulated([ch], best.t_opt, detector, heavy_env, 100_000, seed, num_channels)
    senseless = simulate_senseless([ch] * num_channels, heavy_env, 50_000.0, seed).mean_throughput
    assert optimized >= senseless
    if u == 0.7:
        assert optimized >= 1.10 * senseless


@pytest.mark.slow
def test_reference_alpha_favours_senseless_at_high_load(ref_env, detector):
    ch = _channel(0.7, 1, 2.0)
    best = optimize_interval([ch], ref_env, detector, num_channels=3)
    optimized = _simulated([ch], best.t_opt, detector, ref_env, 40_000, 3, 3)
    senseless = simulate_senseless([ch] * 3, ref_env, 2001.0, 3).mean_throughput
    assert senseless > optimized


@pytest.mark.slow
def test_throughput_saturates_with_channel_count(symmetric_channel, ref_env, detector):
    periods = 50_000
    optima = [optimize_interval([symmetric_channel], ref_env, detector, num_channels=n) for n in range(1, 6)]
    horizon = (periods + 1) * (max(b.t_opt for b in optima) + detector.sensing_time)
    base = [generate_trace(symmetric_channel, horizon, s) for s in (31, 32)]
    channels = bootstrap_channels(base, 5, 33, horizon)
    means = [
        _simulated(channels[:n], best.t_opt, detector, ref_env, periods, 34, n)
        for n, best in enumerate(optima, start=1)
    ]
    assert all(b >= a for a, b in zip(means, means[1:]))
    assert means[4] - means[3] < 0.25 * (means[1] - means[0])
