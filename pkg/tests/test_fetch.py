from __future__ import annotations

import json
import zipfile

import pytest

from tsae_tool.core.datapipe import write_ts
from tsae_tool.core.demo_data import make_sinusoid_series, write_demo_dataset, zip_dataset
from tsae_tool.core.fetch import ARCHIVE_URL, RECORD_NAME, fetch_dataset, resolve_source
from tsae_tool.errors import ChecksumError, DataError
from tsae_tool.util.hashing import sha256_file


@pytest.fixture
def archive(tmp_path):
    paths = write_demo_dataset(str(tmp_path / "src"), "SINE", n=6, v=2, length=5, classes=2)
    return zip_dataset(list(paths), str(tmp_path / "SINE.zip"))


def test_fetch_from_zip(archive, tmp_path):
    result = fetch_dataset(archive, str(tmp_path / "data"))
    assert (result.n_train, result.n_test) == (6, 6)
    assert result.source_sha256 == sha256_file(archive)
    record = json.loads(open(result.record_path, encoding="utf-8").read())
    assert record["source_sha256"] == result.source_sha256
    assert [f["path"] for f in record["files"]] == ["SINE_TRAIN.ts", "SINE_TEST.ts"]
    assert result.record_path.endswith(RECORD_NAME)


def test_fetch_checks_sha256(archive, tmp_path):
    fetch_dataset(archive, str(tmp_path / "ok"), sha256_file(archive).upper())
    with pytest.raises(ChecksumError):
        fetch_dataset(archive, str(tmp_path / "bad"), "0" * 64)


def test_fetch_from_folder(tmp_path):
    write_demo_dataset(str(tmp_path / "src" / "nested"), "SINE", n=4, v=2, length=5, classes=2)
    result = fetch_dataset(str(tmp_path / "src"), str(tmp_path / "data"))
    assert result.n_train == 4
    assert (tmp_path / "data" / "SINE_TEST.ts").is_file()


def test_archive_without_pair(tmp_path):
    bad = tmp_path / "bad.zip"
    with zipfile.ZipFile(bad, "w") as zf:
        zf.writestr("README.txt", "nothing here")
    with pytest.raises(DataError, match="_TRAIN.ts"):
        fetch_dataset(str(bad), str(tmp_path / "data"))
    (tmp_path / "fake.zip").write_bytes(b"not a zip")
    with pytest.raises(DataError):
        fetch_dataset(str(tmp_path / "fake.zip"), str(tmp_path / "data"))


def test_mismatched_widths(tmp_path):
    write_ts(str(tmp_path / "src" / "X_TRAIN.ts"), make_sinusoid_series(n=3, v=2, length=4, classes=1), "X", ["1"])
    write_ts(str(tmp_path / "src" / "X_TEST.ts"), make_sinusoid_series(n=3, v=3, length=4, classes=1), "X", ["1"])
    with pytest.raises(DataError, match="v="):
        fetch_dataset(str(tmp_path / "src"), str(tmp_path / "data"))


def test_resolve_source():
    assert resolve_source("NATOPS") == ARCHIVE_URL % "NATOPS"
    assert resolve_source("https://example.org/x.zip") == "https://example.org/x.zip"
    with pytest.raises(DataError):
        resolve_source("./missing/archive.zip")
