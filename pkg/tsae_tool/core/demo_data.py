"""Synthetic multivariate sinusoids with a known class structure."""
from __future__ import annotations

import zipfile
from pathlib import Path

import numpy as np

from tsae_tool.core.datapipe import write_ts
from tsae_tool.models import MultivariateSeries
from tsae_tool.util.paths import safe_mkdir

NOISE_STD = 0.05
DEMO_NAME = "SINE"


def make_sinusoid_series(
    n: int = 60,
    v: int = 4,
    length: int = 20,
    classes: int = 3,
    rng: np.random.Generator | None = None,
) -> list[MultivariateSeries]:
    """Series i belongs to class i % classes; class c oscillates at c + 1 periods per series.

    Variable j is phase-shifted by j * pi / v and carries its own amplitude so
    that min/max normalization differs per feature.
    """
    if n < 1 or v < 1 or length < 2 or classes < 1:
        raise ValueError("n, v, classes must be >= 1 and length >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    t = np.arange(length) / length
    phases = np.arange(v) * np.pi / v
    amplitudes = 1.0 + 0.5 * np.arange(v)

    out: list[MultivariateSeries] = []
    for i in range(n):
        c = i % classes
        clean = amplitudes * np.sin(2.0 * np.pi * (c + 1) * t[:, None] + phases)
        noisy = clean + rng.normal(0.0, NOISE_STD, size=clean.shape)
        out.append(MultivariateSeries(values=noisy, label=str(c + 1)))
    return out


def write_demo_dataset(
    out_dir: str,
    name: str = DEMO_NAME,
    n: int = 60,
    v: int = 4,
    length: int = 20,
    classes: int = 3,
    seed: int = 0,
) -> tuple[str, str]:
    """Writes `<name>_TRAIN.ts` and `<name>_TEST.ts` with n series each."""
    out = safe_mkdir(Path(out_dir))
    rng = np.random.default_rng(seed)
    labels = [str(c + 1) for c in range(classes)]
    train = make_sinusoid_series(n, v, length, classes, rng)
    test = make_sinusoid_series(n, v, length, classes, rng)
    train_path = write_ts(str(out / f"{name}_TRAIN.ts"), train, name, labels)
    test_path = write_ts(str(out / f"{name}_TEST.ts"), test, name, labels)
    return train_path, test_path


def zip_dataset(paths: list[str], archive: str) -> str:
    """Archive with the given files at its top level, the layout `fetch-data` accepts."""
    p = Path(archive)
    safe_mkdir(p.parent)
    with zipfile.ZipFile(p, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for f in paths:
            zf.write(f, arcname=Path(f).name)
    return str(p)
