from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path


def safe_mkdir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def utc_now_z() -> str:
    return datetime.now(timezone.utc).replace(tzinfo=None).isoformat() + "Z"


def choose_unique_name(dest_dir: Path, filename: str) -> str:
    """`filename` if free in `dest_dir`, otherwise stem_001.ext, stem_002.ext, ..."""
    base = Path(filename).stem
    ext = Path(filename).suffix
    if not (dest_dir / filename).exists():
        return filename
    i = 1
    while True:
        name = f"{base}_{i:03d}{ext}"
        if not (dest_dir / name).exists():
            return name
        i += 1


def run_dir(out_root: str, label: str, seed: int) -> Path:
    """Fresh output folder for one run: <out_root>/<label>_seed<seed>[_NNN]."""
    root = safe_mkdir(Path(out_root))
    return safe_mkdir(root / choose_unique_name(root, f"{label.lower()}_seed{seed}"))
