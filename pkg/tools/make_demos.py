from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))  # tools/ -> repo root

from tsae_tool.core.demo_data import DEMO_NAME, write_demo_dataset, zip_dataset  # noqa: E402


def ensure_dir(p: Path) -> None:
    p.mkdir(parents=True, exist_ok=True)


def main() -> None:
    repo_root = Path(__file__).resolve().parents[1]
    samples_dir = repo_root / "samples"
    ensure_dir(samples_dir)

    # 60 series per split, 4 variables, 20 steps, 3 sinusoid classes
    train_path, test_path = write_demo_dataset(str(samples_dir), DEMO_NAME, n=60, v=4, length=20, classes=3, seed=0)
    archive_path = zip_dataset([train_path, test_path], str(samples_dir / f"{DEMO_NAME}.zip"))

    print("Demo files created:")
    print(f"  {train_path}")
    print(f"  {test_path}")
    print(f"  {archive_path}   (accepted offline by fetch-data)")

    print("\nQuick run:")
    print(f"  python main.py fetch-data {archive_path} --out data/{DEMO_NAME}")
    print(f"  python main.py train --preset smoke --data data/{DEMO_NAME}")


if __name__ == "__main__":
    main()
