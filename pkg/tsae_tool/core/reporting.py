from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from tsae_tool import TOOL_NAME, __version__
from tsae_tool.models import Level, MetricRow, MetricsReport
from tsae_tool.util.hashing import sha256_file
from tsae_tool.util.paths import safe_mkdir, utc_now_z


@dataclass(frozen=True)
class ReferenceRow:
    label: str
    avg_dtw: float
    entropy: float
    test_error: float


# Published NATOPS results, keyed by model label; order-of-magnitude comparison only.
REFERENCE_ROWS = {
    row.label: row
    for row in (
        ReferenceRow("TAE", 28.273, 0.544, 0.018),
        ReferenceRow("TAE-GAN", 36.918, 0.427, 0.283),
        ReferenceRow("TAE-WGAN", 19.919, 0.394, 0.019),
        ReferenceRow("CAE", 36.524, 0.284, 0.082),
        ReferenceRow("CAE-GAN", 35.164, 0.589, 0.047),
        ReferenceRow("CAE-WGAN", 37.949, 0.855, 0.024),
    )
}

TEST_ERROR_WARN_FACTOR = 5.0


def envelope(**payload: Any) -> dict[str, Any]:
    return {
        "tool": TOOL_NAME,
        "version": __version__,
        "generated_at": utc_now_z(),
        **payload,
    }


def write_json(path: str, data: dict[str, Any]) -> str:
    p = Path(path)
    safe_mkdir(p.parent)
    p.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return str(p)


def reference_for(label: str) -> ReferenceRow | None:
    return REFERENCE_ROWS.get(label.upper())


def metric_rows(report: MetricsReport) -> list[MetricRow]:
    """Headline metrics as table rows, with the published figure for the same model label alongside."""
    ref = reference_for(report.label)
    rows: list[MetricRow] = []

    level = Level.INFO if np.isfinite(report.avg_min_dtw) and report.avg_min_dtw >= 0 else Level.ERROR
    rows.append(
        MetricRow(
            level=level.value,
            metric="Avg. DTW",
            value=f"{report.avg_min_dtw:.3f}",
            reference=f"{ref.avg_dtw:.3f}" if ref else "",
            note=f"nearest validation match, {report.n_generated} generated",
        )
    )

    level = Level.INFO if 0.0 <= report.entropy <= 1.0 else Level.ERROR
    rows.append(
        MetricRow(
            level=level.value,
            metric="Entropy",
            value=f"{report.entropy:.3f}",
            reference=f"{ref.entropy:.3f}" if ref else "",
            note="normalized to [0, 1]",
        )
    )

    level = Level.INFO
    note = "per-element MSE on validation"
    if not np.isfinite(report.test_error):
        level = Level.ERROR
    elif ref and report.test_error > TEST_ERROR_WARN_FACTOR * ref.test_error:
        level = Level.WARNING
        note += f"; more than {TEST_ERROR_WARN_FACTOR:g}x the reference"
    rows.append(
        MetricRow(
            level=level.value,
            metric="Test Error",
            value=f"{report.test_error:.4f}",
            reference=f"{ref.test_error:.3f}" if ref else "",
            note=note,
        )
    )
    rows.append(
        MetricRow(
            level=Level.INFO.value,
            metric="Test Error (Frobenius)",
            value=f"{report.test_error_frobenius:.4f}",
            note="mean per-sample residual norm",
        )
    )
    return rows


def write_metrics_report(out_dir: str, report: MetricsReport, checkpoint: str = "", dataset: str = "") -> dict[str, str]:
    """report.json plus per-sample DTW and per-dimension entropy CSVs; returns the written paths."""
    out = safe_mkdir(Path(out_dir))
    ref = reference_for(report.label)
    rows = metric_rows(report)
    data = envelope(
        checkpoint=checkpoint,
        dataset=dataset,
        report=report.to_dict(),
        rows=[r.to_dict() for r in rows],
        reference=None if ref is None else asdict(ref),
        counts={lvl.value: sum(1 for r in rows if r.level == lvl.value) for lvl in Level},
    )
    paths = {"report": write_json(str(out / "report.json"), data)}

    dtw_path = out / "per_sample_dtw.csv"
    pd.DataFrame({"sample": np.arange(report.n_generated), "min_dtw": report.per_sample_dtw}).to_csv(dtw_path, index=False)
    paths["per_sample_dtw"] = str(dtw_path)

    names = list(report.feature_names) or [f"dim_{i}" for i in range(report.per_dim_entropy.shape[0])]
    ent_path = out / "per_dim_entropy.csv"
    pd.DataFrame({"dimension": names, "entropy": report.per_dim_entropy}).to_csv(ent_path, index=False)
    paths["per_dim_entropy"] = str(ent_path)
    return paths


def write_generation_manifest(out_dir: str, files: Sequence[str], checkpoint: str, n: int, seed: int) -> str:
    out = Path(out_dir)
    entries = [
        {"path": str(Path(f).relative_to(out)), "sha256": sha256_file(f), "size_bytes": Path(f).stat().st_size}
        for f in files
    ]
    return write_json(str(out / "manifest.json"), envelope(checkpoint=checkpoint, n=n, seed=seed, files=entries))


def format_headline(report: MetricsReport) -> str:
    ref = reference_for(report.label)
    lines = [
        f"{report.label}  (n={report.n_generated}, seed={report.seed})",
        f"  avg_dtw    {report.avg_min_dtw:10.3f}",
        f"  entropy    {report.entropy:10.3f}",
        f"  test_error {report.test_error:10.4f}",
    ]
    if ref:
        lines.append(f"  reference  {ref.avg_dtw:.3f} / {ref.entropy:.3f} / {ref.test_error:.3f} (published {ref.label} row)")
    return "\n".join(lines)
