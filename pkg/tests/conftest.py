import json
from pathlib import Path

import numpy as np
import pytest
import structlog

from oppspec.core.linkbudget import RadioEnv, reference_env
from oppspec.core.occupancy import ChannelModel, ExpMixture
from oppspec.core.sensing import DetectorSpec


@pytest.fixture(autouse=True)
def _reset_structlog():
    """main() reconfigures structlog against the captured streams; start every test clean."""
    yield
    structlog.contextvars.clear_contextvars()
    structlog.reset_defaults()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ref_env() -> RadioEnv:
    """R = 100 m, d = 10 m, calibrated to E{C0} = 100 Mbps."""
    return reference_env()


@pytest.fixture(scope="session")
def dominated_env(ref_env) -> RadioEnv:
    """MBS at 20 m: interference-dominated, alpha around 0.6."""
    return ref_env.model_copy(update={"mbs_distance_m": 20.0})


@pytest.fixture(scope="session")
def heavy_env(ref_env) -> RadioEnv:
    """MBS at 5.5 m: interference leaves roughly a tenth of the clean rate."""
    return ref_env.model_copy(update={"mbs_distance_m": 5.5})


@pytest.fixture
def symmetric_channel() -> ChannelModel:
    return ChannelModel(on=ExpMixture.exponential(1.0), off=ExpMixture.exponential(1.0))


@pytest.fixture
def detector() -> DetectorSpec:
    return DetectorSpec()


MODEL_TEXT = "state=ON\nk=1\nw=1\nlambda=1\nstate=OFF\nk=1\nw=1\nlambda=1\n"


@pytest.fixture
def write_config(tmp_path):
    """Write a run config (plus a symmetric model file) into tmp_path and return its path."""

    def _write(overrides: dict = None, name: str = "run.json") -> Path:
        (tmp_path / "symmetric.model").write_text(MODEL_TEXT, encoding="utf-8")
        cfg = {
            "policy": {"num_channels": 2, "search": "wideband"},
            "analysis": {"grid_points": 60},
            "simulation": {"periods": 10000},
            "sweep": {"max_channels": 3, "searches": ["wideband"]},
            "channels": [{"model": "symmetric.model"}, {"model": "symmetric.model"}],
            "seed": 11,
            "output_dir": "out",
        }
        cfg.update(overrides or {})
        path = tmp_path / name
        path.write_text(json.dumps(cfg), encoding="utf-8")
        return path

    return _write
