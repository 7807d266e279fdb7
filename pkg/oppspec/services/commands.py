"""
Command orchestration: fit, analyze, optimize, simulate, sweep, validate, synthesize.

Each command reads the resolved RunConfig, runs the core/simkernel
operations and writes its reports into the output directory.
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property, partial
from pathlib import Path
from typing import Optional

import numpy as np
import structlog

from oppspec.config import RunConfig, TraceSource
from oppspec.core.analytics import (
    AccessPolicy,
    IntervalOptimum,
    default_bounds,
    evaluate_policy,
    optimize_interval,
    solve_for_target_drop,
)
from oppspec.core.linkbudget import sample_link_rates
from oppspec.core.occupancy import (
    ChannelModel,
    DwellSamples,
    DwellState,
    baseline_scores,
    fit_mixture,
    goodness_of_fit,
    sample_dwells,
)
from oppspec.services.ingest import (
    ingest_power_trace,
    read_dwell_file,
    read_model_file,
    synthesize_power_trace,
    write_model_file,
)
from oppspec.services.reports import write_record, write_report
from oppspec.services.simkernel import (
    OccupancyTrace,
    SimReport,
    TraceOrigin,
    bootstrap_channels,
    compare_with_oracle,
    generate_trace,
    run_replications,
    simulate_access,
    simulate_senseless,
)
from oppspec.utils.exceptions import ConfigError, DomainError


logger = structlog.get_logger()

POOL_DWELLS_PER_MODEL = 100_000
C0_REFERENCE_DRAWS = 10_000


class Command(str, Enum):
    FIT = "fit"
    ANALYZE = "analyze"
    OPTIMIZE = "optimize"
    SIMULATE = "simulate"
    SWEEP = "sweep"
    VALIDATE = "validate"
    SYNTHESIZE = "synthesize"


@dataclass(frozen=True)
class ResolvedChannel:
    """Channel model plus, for measured sources, the dwells and trace it was fitted from."""

    label: str
    model: ChannelModel
    on: Optional[DwellSamples] = None
    off: Optional[DwellSamples] = None
    trace: Optional[OccupancyTrace] = None

    @property
    def measured(self) -> bool:
        return self.on is not None


def interleaved_trace(on: DwellSamples, off: DwellSamples) -> Optional[OccupancyTrace]:
    """Pair dwell files into an alternating trace starting ON; surplus dwells are left out."""
    n = min(len(on), len(off))
    if n == 0:
        return None
    durations = np.column_stack((on.values[:n], off.values[:n])).ravel()
    return OccupancyTrace.from_dwells(True, durations, TraceOrigin.INGESTED)


class CommandRunner:
    """Runs one command against a loaded run configuration."""

    def __init__(self, cfg: RunConfig, workers: int = 1):
        self.cfg = cfg
        self.workers = workers
        self.env = cfg.scenario.to_env()
        self.detector = cfg.detector.to_spec(self.env)
        self._command: Optional[Command] = None

    def run(self, command: Command) -> list[Path]:
        """
        Execute a command.

        Returns:
            Paths of the files written
        """
        self._command = command
        logger.info("Command started", output_dir=str(self.cfg.output_dir))
        self.cfg.output_dir.mkdir(parents=True, exist_ok=True)
        outputs = getattr(self, f"_run_{command.value}")()
        logger.info("Command finished", outputs=[str(p) for p in outputs])
        return outputs

    # Channels

    @cached_property
    def channels(self) -> list[ResolvedChannel]:
        return [self._resolve(i, source) for i, source in enumerate(self.cfg.channels, start=1)]

    def _resolve(self, index: int, source) -> ResolvedChannel:
        label = f"ch{index}"
        if source.model is not None:
            return ResolvedChannel(label, read_model_file(source.model))
        if source.on is not None:
            return ResolvedChannel(label, ChannelModel(on=source.on, off=source.off))

        if source.power_trace is not None:
            sweep_period = source.sweep_period_ms / 1000.0 if source.sweep_period_ms else None
            ingested = ingest_power_trace(source.power_trace, self.detector, sweep_period)
            on, off, trace = ingested.on, ingested.off, ingested.trace
        else:
            on = read_dwell_file(source.dwells_on, DwellState.ON)
            off = read_dwell_file(source.dwells_off, DwellState.OFF)
            trace = interleaved_trace(on, off)
        model = self._fit_channel(on, off)
        return ResolvedChannel(label, model, on=on, off=off, trace=trace)

    def _fit_channel(self, on: DwellSamples, off: DwellSamples) -> ChannelModel:
        fit_cfg = self.cfg.fit.to_fit_config()
        return ChannelModel(on=fit_mixture(on, fit_cfg), off=fit_mixture(off, fit_cfg))

    def _models_for(self, num_channels: int) -> list[ChannelModel]:
        """First L channel models; fewer configured channels are cycled."""
        models = [ch.model for ch in self.channels]
        return [models[i % len(models)] for i in range(num_channels)]

    def _pooled_model(self, channels: list[ResolvedChannel], seq: np.random.SeedSequence) -> ChannelModel:
        """Model fitted to the pooled dwells the bootstrapped channels are drawn from."""
        measured = [ch for ch in channels if ch.measured]
        if measured:
            on = np.concatenate([ch.on.values for ch in measured])
            off = np.concatenate([ch.off.values for ch in measured])
        else:
            rng = np.random.default_rng(seq)
            on = np.concatenate([sample_dwells(ch.model.on, rng, POOL_DWELLS_PER_MODEL) for ch in channels])
            off = np.concatenate([sample_dwells(ch.model.off, rng, POOL_DWELLS_PER_MODEL) for ch in channels])
        return self._fit_channel(DwellSamples(on, DwellState.ON), DwellSamples(off, DwellState.OFF))

    # Analytics

    def _bounds(self, models: list[ChannelModel]) -> tuple[float, float]:
        analysis = self.cfg.analysis
        t_min, t_max = default_bounds(models, self.detector)
        if analysis.t_min_ms is not None:
            t_min = analysis.t_min_ms / 1000.0
        if analysis.t_max_s is not None:
            t_max = analysis.t_max_s
        if not 0 < t_min < t_max:
            raise ConfigError(f"sensing period range [{t_min:.6g}, {t_max:.6g}] s is empty")
        return t_min, t_max

    def _optimum(self, models: list[ChannelModel]) -> IntervalOptimum:
        analysis = self.cfg.analysis
        return optimize_interval(
            models, self.env, self.detector, self._bounds(models),
            num_channels=len(models),
            mode=analysis.mode,
            form=analysis.closed_form,
            grid_points=analysis.grid_points,
        )

    def _write(self, name: str, columns, rows, extra_header=None) -> Path:
        return write_report(self.cfg.output_dir / name, self._command.value, self.cfg.seed,
                            self.cfg.echo(), columns, rows, extra_header)

    def _write_record(self, name: str, record: dict) -> Path:
        return write_record(self.cfg.output_dir / name, self._command.value, self.cfg.seed,
                            self.cfg.echo(), record)

    # Commands

    def _run_fit(self) -> list[Path]:
        measured = [ch for ch in self.channels if ch.measured]
        if not measured:
            raise ConfigError("fit needs at least one power_trace or dwell-file channel")
        outputs, score_rows, summary_rows = [], [], []
        for ch in measured:
            model_path = self.cfg.output_dir / f"{ch.label}.model"
            write_model_file(model_path, ch.model)
            outputs.append(model_path)
            for samples in (ch.on, ch.off):
                mixture = ch.model.mixture(samples.state)
                score_rows.append((ch.label, samples.state, "exp_mixture", mixture.k, len(samples),
                                   goodness_of_fit(samples, mixture)))
                for name, phi in baseline_scores(samples).items():
                    score_rows.append((ch.label, samples.state, name, "", len(samples), phi))
            summary_rows.append((ch.label, ch.model.duty_cycle, ch.model.on.mean, ch.model.off.mean,
                                 len(ch.on), len(ch.off), model_path.name))
        outputs.append(self._write(
            "fit_scores.csv",
            ("channel", "state", "distribution", "k", "samples", "log_likelihood"),
            score_rows,
        ))
        outputs.append(self._write(
            "fit_summary.csv",
            ("channel", "duty_cycle", "on_mean_s", "off_mean_s", "on_dwells", "off_dwells", "model_file"),
            summary_rows,
        ))
        return outputs

    def _run_analyze(self) -> list[Path]:
        num_channels = self.cfg.policy.num_channels
        models = self._models_for(num_channels)
        t_min, t_max = self._bounds(models)
        rows = []
        for period in np.geomspace(t_min, t_max, self.cfg.analysis.grid_points):
            policy = AccessPolicy(period=float(period), sensing_time=self.detector.sensing_time,
                                  num_channels=num_channels)
            figures = evaluate_policy(policy, models, self.env, self.detector.target_pfa,
                                      self.cfg.analysis.mode, self.cfg.analysis.closed_form)
            rows.append((figures.period, figures.eta, figures.zeta_s, figures.tau, figures.alpha, figures.chi,
                         figures.c_all_mean, figures.c0_mean, *figures.zeta_per_channel))
        columns = ("period_s", "eta", "zeta_s", "tau", "alpha", "chi", "c_all_bps", "c0_bps",
                   *(f"zeta_{i}" for i in range(1, num_channels + 1)))
        return [self._write("analyze.csv", columns, rows)]

    def _run_optimize(self) -> list[Path]:
        num_channels = self.cfg.policy.num_channels
        models = self._models_for(num_channels)
        best = self._optimum(models)
        record = {
            "num_channels": num_channels,
            "t_min_s": best.bounds[0],
            "t_max_s": best.bounds[1],
            "t_opt_s": best.t_opt,
            "chi_min": best.chi_min,
            "c_opt_bps": best.c_opt,
            "c0_bps": best.c0_mean,
            "at_boundary": best.at_boundary,
        }
        target = self.cfg.analysis.target_drop
        if target is not None:
            record["target_drop"] = target
            try:
                record["t_target_s"] = solve_for_target_drop(
                    target, models, self.env, self.detector, best.bounds,
                    num_channels=num_channels, mode=self.cfg.analysis.mode, form=self.cfg.analysis.closed_form,
                )
            except DomainError as e:
                logger.warning("Target drop not reachable", target_drop=target, reason=str(e))
                record["t_target_s"] = None
        return [self._write_record("optimize.csv", record)]

    def _run_simulate(self) -> list[Path]:
        policy_cfg, sim = self.cfg.policy, self.cfg.simulation
        num_channels = policy_cfg.num_channels
        models = self._models_for(num_channels)
        period = policy_cfg.period_ms / 1000.0 if policy_cfg.period_ms else self._optimum(models).t_opt
        policy = AccessPolicy(period=period, sensing_time=self.detector.sensing_time, num_channels=num_channels)
        figures = evaluate_policy(policy, models, self.env, self.detector.target_pfa,
                                  self.cfg.analysis.mode, self.cfg.analysis.closed_form)

        sources = models
        if sim.source is TraceSource.TRACE:
            traces = [ch.trace for ch in self.channels[:num_channels]]
            if len(traces) < num_channels or any(trace is None for trace in traces):
                raise ConfigError(f"trace source needs {num_channels} measured channels with recorded traces")
            sources = traces

        duration = (sim.periods + 0.5) * (period + policy.sensing_time)
        access = run_replications(
            partial(simulate_access, sources, policy, self.detector, self.env, duration,
                    search=policy_cfg.search, accounting=policy_cfg.accounting, cdf_points=sim.cdf_points),
            self.cfg.seed, sim.replications, self.workers, sim.cdf_points,
        )
        slot = sim.senseless_slot_ms / 1000.0
        senseless = run_replications(
            partial(simulate_senseless, sources, self.env, max(duration, 10_001 * slot),
                    slot=slot, cdf_points=sim.cdf_points),
            np.random.SeedSequence([self.cfg.seed, 1]), sim.replications, self.workers, sim.cdf_points,
        )

        record = {
            "period_s": period,
            "sensing_time_s": policy.sensing_time,
            "num_channels": num_channels,
            "search": policy_cfg.search,
            "accounting": policy_cfg.accounting,
            "periods": access.periods,
            "replications": sim.replications,
            "mean_throughput_bps": access.mean_throughput,
            "captured_fraction": access.captured_fraction,
            "interfered_fraction": access.interfered_fraction,
            "no_opportunity_fraction": access.no_opportunity_fraction,
            "analytic_throughput_bps": figures.c_all_mean,
            "senseless_throughput_bps": senseless.mean_throughput,
            "gain_over_senseless": access.mean_throughput / senseless.mean_throughput - 1.0,
        }
        # traffic-absent reference: C0 quantiles at the same probabilities
        c0_rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 2]))
        probs = access.throughput_cdf[:, 1]
        c0 = np.quantile(sample_link_rates(self.env, c0_rng, max(sim.periods, C0_REFERENCE_DRAWS)).c0, probs)
        cdf_rows = zip(probs, access.throughput_cdf[:, 0], senseless.throughput_cdf[:, 0], c0)
        return [
            self._write_record("simulate_summary.csv", record),
            self._write("simulate_cdf.csv", ("probability", "access_bps", "senseless_bps", "interference_free_bps"),
                        list(cdf_rows)),
        ]

    def _run_sweep(self) -> list[Path]:
        sweep, sim = self.cfg.sweep, self.cfg.simulation
        max_channels = sweep.max_channels
        pool_seq, trace_seq, boot_seq = np.random.SeedSequence(self.cfg.seed).spawn(3)
        given = self.channels[:max_channels]
        measured = [ch for ch in given if ch.trace is not None]

        if measured:
            # recorded traces are resampled into every simulated channel
            models = [self._pooled_model(measured, pool_seq)] * max_channels
        else:
            models = [ch.model for ch in given]
            if len(given) < max_channels:
                models += [self._pooled_model(given, pool_seq)] * (max_channels - len(given))

        optima = [self._optimum(models[:n]) for n in range(1, max_channels + 1)]
        sensing = self.detector.sensing_time
        horizon = (sim.periods + 1) * (max(best.t_opt for best in optima) + sensing)

        if measured:
            traces = bootstrap_channels([ch.trace for ch in measured], max_channels, boot_seq, horizon)
        else:
            traces = [generate_trace(ch.model, horizon, seq)
                      for ch, seq in zip(given, trace_seq.spawn(len(given)))]
            if len(traces) < max_channels:
                traces += bootstrap_channels(traces, max_channels - len(traces), boot_seq, horizon)

        rows = []
        for search in sweep.searches:
            for num_channels, best in enumerate(optima, start=1):
                policy = AccessPolicy(period=best.t_opt, sensing_time=sensing, num_channels=num_channels)
                duration = (sim.periods + 0.5) * (best.t_opt + sensing)
                report: SimReport = run_replications(
                    partial(simulate_access, traces[:num_channels], policy, self.detector, self.env, duration,
                            search=search, accounting=self.cfg.policy.accounting, cdf_points=sim.cdf_points),
                    self.cfg.seed, sim.replications, self.workers, sim.cdf_points,
                )
                rows.append((search, num_channels, best.t_opt, best.c_opt, report.mean_throughput,
                             *report.percentiles(sweep.percentiles)))
        columns = ("search", "num_channels", "t_opt_s", "c_opt_bps", "mean_bps",
                   *(f"p{q:g}" for q in sweep.percentiles))
        return [self._write("sweep.csv", columns, rows)]

    def _run_validate(self) -> list[Path]:
        oracle = self.cfg.oracle
        seqs = np.random.SeedSequence(self.cfg.seed).spawn(len(self.channels))
        rows = []
        for ch, seq in zip(self.channels, seqs):
            model = ch.model
            horizon = oracle.dwells / 2 * (model.on.mean + model.off.mean)
            trace = generate_trace(model, horizon, seq)
            for period_ms in oracle.periods_ms:
                period = period_ms / 1000.0
                if trace.horizon < 1000 * period:
                    logger.warning("Oracle horizon too short, period skipped", channel=ch.label, period=period)
                    continue
                cmp = compare_with_oracle(model, period, trace)
                rows.append((ch.label, period, cmp.zeta_hat, cmp.zeta_classic, cmp.zeta_renewal,
                             cmp.tau_hat, cmp.tau_classic, cmp.tau_renewal, cmp.classic_within_tolerance))
        columns = ("channel", "period_s", "zeta_oracle", "zeta_classic", "zeta_renewal",
                   "tau_oracle", "tau_classic", "tau_renewal", "classic_within_tolerance")
        return [self._write("validate.csv", columns, rows)]

    def _run_synthesize(self) -> list[Path]:
        synthesis = self.cfg.synthesis
        seqs = np.random.SeedSequence(self.cfg.seed).spawn(len(self.channels))
        outputs = []
        for ch, seq in zip(self.channels, seqs):
            path = self.cfg.output_dir / f"{ch.label}.trace"
            synthesize_power_trace(
                path, ch.model, self.detector, synthesis.hours * 3600.0, seq,
                sweep_period=synthesis.sweep_period_ms / 1000.0, snr_db=synthesis.snr_db,
            )
            outputs.append(path)
        return outputs


def run_command(command: Command, cfg: RunConfig, workers: int = 1) -> list[Path]:
    """Run one command against a loaded configuration; returns the files written."""
    return CommandRunner(cfg, workers).run(command)
