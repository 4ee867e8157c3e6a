"""Fetches a UEA/UCR-style archive (URL, local zip or local folder) and unpacks its .ts pair."""
from __future__ import annotations

import logging
import shutil
import tempfile
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path

from tsae_tool.core.datapipe import load_ts
from tsae_tool.core.reporting import envelope, write_json
from tsae_tool.errors import DataError
from tsae_tool.util.hashing import sha256_file, verify_sha256
from tsae_tool.util.paths import safe_mkdir

logger = logging.getLogger(__name__)

ARCHIVE_URL = "http://timeseriesclassification.com/Downloads/%s.zip"
DOWNLOAD_TIMEOUT = 60.0
RECORD_NAME = "fetch.json"


@dataclass(frozen=True)
class FetchResult:
    train_path: str
    test_path: str
    n_train: int
    n_test: int
    source_sha256: str
    record_path: str


def is_url(source: str) -> bool:
    return source.startswith(("http://", "https://"))


def resolve_source(source: str) -> str:
    """A bare dataset name (e.g. NATOPS) becomes its archive URL; URLs and paths pass through."""
    if is_url(source) or Path(source).exists():
        return source
    if source.isidentifier():
        return ARCHIVE_URL % source
    raise DataError(f"source not found: {source}")


def download(url: str, dest: Path) -> Path:
    logger.info("Downloading %s", url)
    try:
        with urllib.request.urlopen(url, timeout=DOWNLOAD_TIMEOUT) as resp, dest.open("wb") as fh:
            shutil.copyfileobj(resp, fh)
    except (urllib.error.URLError, OSError) as e:
        raise DataError(f"download failed for {url}: {e}") from e
    return dest


def _pick(names: list[str], suffix: str, where: str) -> str:
    matches = sorted(n for n in names if n.endswith(suffix) and not Path(n).name.startswith("."))
    if not matches:
        raise DataError(f"{where}: no *{suffix} file")
    if len(matches) > 1:
        raise DataError(f"{where}: several *{suffix} files {matches}")
    return matches[0]


def extract_pair(archive: Path, out_dir: Path) -> tuple[Path, Path]:
    """Copies the single *_TRAIN.ts / *_TEST.ts members to the top of `out_dir`."""
    try:
        with zipfile.ZipFile(archive) as zf:
            names = zf.namelist()
            out: list[Path] = []
            for suffix in ("_TRAIN.ts", "_TEST.ts"):
                member = _pick(names, suffix, str(archive))
                dest = out_dir / Path(member).name
                with zf.open(member) as src, dest.open("wb") as fh:
                    shutil.copyfileobj(src, fh)
                out.append(dest)
    except zipfile.BadZipFile as e:
        raise DataError(f"{archive}: not a zip archive ({e})") from e
    logger.info("Extracted %s and %s", out[0].name, out[1].name)
    return out[0], out[1]


def find_pair(folder: Path) -> tuple[Path, Path]:
    names = [str(p.relative_to(folder)) for p in folder.rglob("*.ts")]
    return folder / _pick(names, "_TRAIN.ts", str(folder)), folder / _pick(names, "_TEST.ts", str(folder))


def copy_pair(folder: Path, out_dir: Path) -> tuple[Path, Path]:
    out: list[Path] = []
    for src in find_pair(folder):
        dest = out_dir / src.name
        if src.resolve() != dest.resolve():
            shutil.copyfile(src, dest)
        out.append(dest)
    return out[0], out[1]


def fetch_dataset(source: str, out_dir: str, expected_sha256: str | None = None) -> FetchResult:
    """Places a verified .ts pair in `out_dir` and records checksums in fetch.json.

    `expected_sha256` is checked against the archive (or, for a folder source,
    against the TRAIN file) before anything is extracted.
    """
    source = resolve_source(source)
    out = safe_mkdir(Path(out_dir))

    with tempfile.TemporaryDirectory() as tmp:
        if is_url(source):
            archive = download(source, Path(tmp) / Path(source).name)
        else:
            archive = Path(source)
            if not archive.exists():
                raise FileNotFoundError(f"source not found: {archive}")

        if archive.is_dir():
            train_src, _ = find_pair(archive)
            source_sha = verify_sha256(str(train_src), expected_sha256) if expected_sha256 else sha256_file(str(train_src))
            train_path, test_path = copy_pair(archive, out)
        else:
            source_sha = verify_sha256(str(archive), expected_sha256) if expected_sha256 else sha256_file(str(archive))
            train_path, test_path = extract_pair(archive, out)

    train, test = load_ts(str(train_path)), load_ts(str(test_path))
    if train.v != test.v:
        raise DataError(f"{train_path.name} has v={train.v} but {test_path.name} has v={test.v}")
    logger.info("Verified %d train / %d test series (v=%d)", len(train.train), len(test.train), train.v)

    record = write_json(
        str(out / RECORD_NAME),
        envelope(
            source=source,
            source_sha256=source_sha,
            files=[
                {"path": p.name, "sha256": sha256_file(str(p)), "series": len(d.train)}
                for p, d in ((train_path, train), (test_path, test))
            ],
        ),
    )
    return FetchResult(
        train_path=str(train_path),
        test_path=str(test_path),
        n_train=len(train.train),
        n_test=len(test.train),
        source_sha256=source_sha,
        record_path=record,
    )
