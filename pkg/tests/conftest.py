from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from tsae_tool.config import CaeConfig, GanConfig, RunConfig, TransformerConfig  # noqa: E402
from tsae_tool.core.demo_data import write_demo_dataset  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_tae() -> TransformerConfig:
    """v=3, slen=5 (SOS + 4 steps), d=4, two heads, one layer each side, k=6."""
    return TransformerConfig(v=3, slen=5, d=4, m=2, enc_layers=1, dec_layers=1, ff_dim=8, k=6)


@pytest.fixture
def tiny_cae() -> CaeConfig:
    """slen * v = 30, three conv layers, tanh so the gradient check sees no kinks."""
    return CaeConfig(slen=10, v=3, channel_schedule=(2, 4, 8), kernel_sizes=(5, 4, 3), k=6, activation="tanh")


@pytest.fixture
def sine_dir(tmp_path) -> Path:
    """12 train + 12 test series: 3 variables, 8 steps, 3 sinusoid classes."""
    folder = tmp_path / "SINE"
    write_demo_dataset(str(folder), "SINE", n=12, v=3, length=8, classes=3, seed=0)
    return folder


def small_run(data_dir: str = "", model: str = "tae", scheme: str = "none", epochs: int = 2, **gan) -> RunConfig:
    return RunConfig(
        model=model,
        data_dir=data_dir,
        transformer=TransformerConfig(v=3, slen=9, d=8, m=2, enc_layers=1, dec_layers=1, ff_dim=16, k=8),
        cae=CaeConfig(slen=8, v=3, channel_schedule=(2, 4), kernel_sizes=(5, 3), k=8),
        gan=GanConfig(scheme=scheme, epochs=epochs, batch_size=6, **gan),
    )


@pytest.fixture
def make_run():
    return small_run
