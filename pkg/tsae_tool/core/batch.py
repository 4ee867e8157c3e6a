from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

from tsae_tool.core.checkpoint import SUFFIX, load_checkpoint
from tsae_tool.core.evaluation import DEFAULT_GENERATED, build_report
from tsae_tool.core.reporting import envelope, reference_for, write_json
from tsae_tool.errors import TsaeError
from tsae_tool.models import Dataset
from tsae_tool.util.paths import safe_mkdir

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ["checkpoint", "label", "avg_dtw", "entropy", "test_error", "ref_avg_dtw", "ref_entropy", "ref_test_error"]


def find_checkpoints(folder: str) -> list[Path]:
    root = Path(folder).resolve()
    if not root.exists() or not root.is_dir():
        raise NotADirectoryError(f"Not a folder: {root}")

    files: list[Path] = []
    for p in root.rglob("*"):
        if p.is_file() and p.suffix.lower() == SUFFIX:
            files.append(p)

    return sorted(files)


def batch_evaluate(
    folder: str,
    dataset: Dataset,
    out_dir: str,
    n_generated: int = DEFAULT_GENERATED,
    seed: int = 0,
    workers: int = 1,
) -> dict:
    """Evaluates every checkpoint under `folder` against one dataset.

    A checkpoint that fails to load or score gets an error entry; the others
    still run. Writes batch_summary.json and comparison.csv to `out_dir`.
    """
    files = find_checkpoints(folder)
    out = safe_mkdir(Path(out_dir))

    entries: list[dict] = []
    rows: list[dict] = []
    for f in files:
        logger.info("Evaluating %s", f.name)
        try:
            ckpt = load_checkpoint(str(f))
            report = build_report(ckpt, dataset, n_generated, seed, workers)
        except (TsaeError, OSError) as e:
            logger.error("Failed to evaluate %s: %s", f.name, e)
            entries.append({"checkpoint": str(f), "status": "ERROR", "error": str(e)})
            continue

        ref = reference_for(report.label)
        entries.append({"checkpoint": str(f), "status": "OK", "epoch": ckpt.epoch, **report.to_dict()})
        rows.append(
            {
                "checkpoint": f.name,
                "label": report.label,
                **report.headline(),
                "ref_avg_dtw": ref.avg_dtw if ref else None,
                "ref_entropy": ref.entropy if ref else None,
                "ref_test_error": ref.test_error if ref else None,
            }
        )

    failed = sum(1 for e in entries if e["status"] == "ERROR")
    summary = envelope(
        folder=str(Path(folder).resolve()),
        dataset=dataset.problem_name,
        n_generated=n_generated,
        seed=seed,
        file_count=len(files),
        totals={"files_ok": len(files) - failed, "files_failed": failed},
        files=entries,
    )
    summary["summary_path"] = write_json(str(out / "batch_summary.json"), summary)
    comparison = out / "comparison.csv"
    pd.DataFrame(rows, columns=COMPARISON_COLUMNS).to_csv(comparison, index=False)
    summary["comparison_path"] = str(comparison)
    return summary
