"""
Shared fixtures for the test suite.
"""
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from attestation_forecast.models import PanelDataset, SimConfig
from attestation_forecast.simulate import simulate_panel, write_simulated_inputs


def make_panel(y, x, start=date(2020, 4, 2), units=None, onsite=None) -> PanelDataset:
    """Daily panel from N x T nested lists or arrays."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    units = units or [f"H{i + 1}" for i in range(y.shape[0])]
    return PanelDataset(
        units=units,
        calendar=[start + timedelta(days=t) for t in range(y.shape[1])],
        y=y.tolist(),
        x=x.tolist(),
        onsite=None if onsite is None else np.asarray(onsite, dtype=float).tolist(),
    )


def write_csv(path: Path, header: str, rows) -> Path:
    path.write_text("\n".join([header] + [",".join(str(v) for v in row) for row in rows]) + "\n")
    return path


@pytest.fixture
def sim_config():
    return SimConfig(n_units=4, n_days=120, seed=11)


@pytest.fixture
def sim_inputs(tmp_path, sim_config):
    """Simulated CSV triple on disk plus the panel and truth that produced it."""
    panel, truth = simulate_panel(sim_config)
    paths = write_simulated_inputs(panel, truth, sim_config, tmp_path / "data")
    return paths, panel, truth
