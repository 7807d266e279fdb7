"""
Reading and writing of measurement and model files.

Power traces: `# sweep_period_ms=30` header, then one dBm reading per line.
Dwell files: optional `# state=ON|OFF` header, then one duration (s) per line.
Model files: `state=`, `k=`, `w=`, `lambda=` lines, one block per state.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import structlog
from pydantic import ValidationError

from oppspec.core.occupancy import ChannelModel, DwellSamples, DwellState, ExpMixture, normalize_mixture
from oppspec.core.sensing import DetectorSpec, classify_energy, threshold_dbm
from oppspec.services.simkernel import OccupancyTrace, RngState, TraceOrigin, generate_trace
from oppspec.utils.exceptions import IngestError, InsufficientDataError, InvalidInputError


logger = structlog.get_logger()

PathLike = Union[str, Path]

DEFAULT_SWEEP_PERIOD = 0.03
MIN_SWEEPS = 100
WEIGHT_SUM_TOLERANCE = 1e-6
NUMBER_FORMAT = "%.9g"


@dataclass(frozen=True)
class PowerTrace:
    readings_dbm: np.ndarray
    sweep_period: Optional[float]


@dataclass(frozen=True)
class IngestedChannel:
    """Dwells recovered from a thresholded power trace."""

    on: DwellSamples
    off: DwellSamples
    trace: OccupancyTrace
    sweeps: int
    sweep_period: float

    @property
    def occupied_fraction(self) -> float:
        return self.trace.occupied_fraction


def format_number(value: float) -> str:
    return NUMBER_FORMAT % value


def _header_pairs(line: str) -> dict[str, str]:
    pairs = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            key, _, value = token.partition("=")
            pairs[key.strip()] = value.strip()
    return pairs


def _parse_float(text: str, path: PathLike, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: malformed {what} {text!r}", path=str(path), line=lineno)
    if not np.isfinite(value):
        raise IngestError(f"{path}:{lineno}: non-finite {what} {text!r}", path=str(path), line=lineno)
    return value


def _read_lines(path: PathLike) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IngestError(f"cannot read {path}: {e}", path=str(path))


def read_power_trace(path: PathLike) -> PowerTrace:
    """One power reading (dBm) per sweep; header may carry sweep_period_ms."""
    readings, sweep_period = [], None
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header = _header_pairs(line)
            if "sweep_period_ms" in header:
                sweep_period = _parse_float(header["sweep_period_ms"], path, lineno, "sweep period") / 1000.0
            continue
        readings.append(_parse_float(line, path, lineno, "power reading"))
    return PowerTrace(readings_dbm=np.asarray(readings, dtype=float), sweep_period=sweep_period)


def run_lengths(busy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge consecutive equal verdicts: (state of each run, run length in sweeps)."""
    busy = np.asarray(busy, dtype=bool)
    starts = np.concatenate(([0], np.flatnonzero(busy[1:] != busy[:-1]) + 1))
    lengths = np.diff(np.concatenate((starts, [busy.size])))
    return busy[starts], lengths


def ingest_power_trace(path: PathLike, detector: DetectorSpec,
                       sweep_period: Optional[float] = None) -> IngestedChannel:
    """
    Threshold each sweep with the energy detector and collect ON/OFF dwells.

    Args:
        path: Power-trace file
        detector: Detector whose threshold, as mean per-sample power, splits the sweeps
        sweep_period: Seconds per sweep; defaults to the file header, then 30 ms

    Returns:
        Per-state dwell samples and the dwell sequence as a trace
    """
    power = read_power_trace(path)
    sweep_period = sweep_period or power.sweep_period or DEFAULT_SWEEP_PERIOD
    if sweep_period <= 0:
        raise InvalidInputError(f"sweep period must be positive, got {sweep_period!r}")
    sweeps = power.readings_dbm.size
    if sweeps < MIN_SWEEPS:
        raise InsufficientDataError(f"{path}: {sweeps} sweeps, at least {MIN_SWEEPS} required", path=str(path))

    threshold = threshold_dbm(detector)
    states, lengths = run_lengths(classify_energy(power.readings_dbm, threshold))
    durations = lengths * sweep_period
    ingested = IngestedChannel(
        on=DwellSamples(durations[states], DwellState.ON),
        off=DwellSamples(durations[~states], DwellState.OFF),
        trace=OccupancyTrace(states=states, durations=durations, origin=TraceOrigin.INGESTED),
        sweeps=sweeps,
        sweep_period=sweep_period,
    )
    logger.info(
        "Power trace ingested",
        path=str(path),
        sweeps=sweeps,
        threshold_dbm=threshold,
        on_dwells=len(ingested.on),
        off_dwells=len(ingested.off),
        occupied_fraction=ingested.occupied_fraction,
    )
    return ingested


def synthesize_power_trace(path: PathLike, channel: ChannelModel, detector: DetectorSpec, duration: float,
                           rng_state: RngState, *, sweep_period: float = DEFAULT_SWEEP_PERIOD,
                           snr_db: float = 16.0) -> OccupancyTrace:
    """
    Write a power trace generated from a channel model.

    Each sweep reports the mean power of M = 2 B t_s noise samples, with the
    primary signal added at `snr_db` while the channel is ON.

    Returns:
        The generating occupancy trace
    """
    rng = np.random.default_rng(rng_state)
    trace = generate_trace(channel, duration, rng)
    sweeps = int(duration // sweep_period)
    busy = trace.state_at(np.arange(sweeps) * sweep_period)
    m = detector.sample_count
    scale = np.where(busy, 1.0 + 10.0 ** (snr_db / 10.0), 1.0) * detector.noise_variance
    power_mw = scale * rng.chisquare(m, size=sweeps) / m
    np.savetxt(
        path,
        10.0 * np.log10(power_mw),
        fmt=NUMBER_FORMAT,
        header=f"sweep_period_ms={format_number(sweep_period * 1000.0)} snr_db={format_number(snr_db)}",
        comments="# ",
    )
    logger.info("Power trace synthesized", path=str(path), sweeps=sweeps, snr_db=snr_db)
    return trace


def read_dwell_file(path: PathLike, state: Optional[DwellState] = None) -> DwellSamples:
    """Dwell durations in seconds; `state` overrides the header."""
    values, header_state = [], None
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header = _header_pairs(line)
            if "state" in header:
                try:
                    header_state = DwellState(header["state"].upper())
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: unknown state {header['state']!r}",
                                      path=str(path), line=lineno)
            continue
        value = _parse_float(line, path, lineno, "dwell duration")
        if value <= 0:
            raise IngestError(f"{path}:{lineno}: dwell duration must be positive", path=str(path), line=lineno)
        values.append(value)
    state = state or header_state
    if state is None:
        raise IngestError(f"{path}: dwell state neither given nor declared in a header", path=str(path))
    return DwellSamples(np.asarray(values, dtype=float), state)


def write_dwell_file(path: PathLike, samples: DwellSamples) -> None:
    np.savetxt(path, samples.values, fmt=NUMBER_FORMAT, header=f"state={samples.state.value}", comments="# ")


def _parse_list(text: str, path: PathLike, lineno: int, what: str) -> list[float]:
    return [_parse_float(item.strip(), path, lineno, what) for item in text.split(",") if item.strip()]


def _build_mixture(block: dict, path: PathLike) -> ExpMixture:
    lineno = block["line"]
    missing = {"k", "w", "lambda"} - block.keys()
    if missing:
        raise IngestError(f"{path}:{lineno}: block misses {', '.join(sorted(missing))}", path=str(path), line=lineno)
    weights, rates = block["w"], block["lambda"]
    if not (block["k"] == len(weights) == len(rates)):
        raise IngestError(f"{path}:{lineno}: k={block['k']} does not match the w/lambda lists",
                          path=str(path), line=lineno)
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise IngestError(f"{path}:{lineno}: weights sum to {sum(weights)!r}", path=str(path), line=lineno)
    try:
        # rounded 9-digit weights are renormalized
        return normalize_mixture(weights, rates)
    except (InvalidInputError, ValidationError) as e:
        raise IngestError(f"{path}:{lineno}: invalid mixture: {e}", path=str(path), line=lineno)


def read_model_file(path: PathLike) -> ChannelModel:
    """Channel model with one ON and one OFF block."""
    blocks: dict[DwellState, dict] = {}
    current = None
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep:
            raise IngestError(f"{path}:{lineno}: expected key=value", path=str(path), line=lineno)
        if key == "state":
            try:
                state = DwellState(value.upper())
            except ValueError:
                raise IngestError(f"{path}:{lineno}: unknown state {value!r}", path=str(path), line=lineno)
            if state in blocks:
                raise IngestError(f"{path}:{lineno}: duplicate {state.value} block", path=str(path), line=lineno)
            current = blocks[state] = {"line": lineno}
        elif current is None:
            raise IngestError(f"{path}:{lineno}: {key} before any state line", path=str(path), line=lineno)
        elif key == "k":
            try:
                current["k"] = int(value)
            except ValueError:
                raise IngestError(f"{path}:{lineno}: malformed k {value!r}", path=str(path), line=lineno)
        elif key in ("w", "lambda"):
            current[key] = _parse_list(value, path, lineno, key)
        else:
            raise IngestError(f"{path}:{lineno}: unknown key {key!r}", path=str(path), line=lineno)

    if set(blocks) != {DwellState.ON, DwellState.OFF}:
        raise IngestError(f"{path}: model needs both ON and OFF blocks", path=str(path))
    on, off = _build_mixture(blocks[DwellState.ON], path), _build_mixture(blocks[DwellState.OFF], path)
    try:
        return ChannelModel(on=on, off=off)
    except ValidationError as e:
        raise IngestError(f"{path}: {e}", path=str(path))


def model_file_text(channel: ChannelModel) -> str:
    lines = []
    for state in (DwellState.ON, DwellState.OFF):
        m = channel.mixture(state)
        lines += [
            f"state={state.value}",
            f"k={m.k}",
            "w=" + ",".join(format_number(w) for w in m.weights),
            "lambda=" + ",".join(format_number(lam) for lam in m.rates),
        ]
    return "\n".join(lines) + "\n"


def write_model_file(path: PathLike, channel: ChannelModel) -> None:
    Path(path).write_text(model_file_text(channel), encoding="utf-8")
    logger.debug("Model file written", path=str(path))
