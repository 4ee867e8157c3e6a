from __future__ import annotations

import numpy as np
import pytest

from tsae_tool.core import datapipe
from tsae_tool.core.demo_data import make_sinusoid_series
from tsae_tool.errors import DataError, ShapeError, TsParseError
from tsae_tool.models import MultivariateSeries

HEADER = """# comment lines are skipped
@problemName Toy
@timeStamps false
@missing false
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true a b
@data
"""


def _write(tmp_path, text: str, name: str = "Toy_TRAIN.ts") -> str:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


# ---------- .ts parsing ----------
def test_parse_well_formed_file(tmp_path):
    path = _write(tmp_path, HEADER + "1,2,3:4,5,6:a\n7,8,9:1,1,1:b\n")
    ds = datapipe.load_ts(path)
    assert ds.problem_name == "Toy"
    assert ds.class_labels == ("a", "b")
    assert len(ds.train) == 2
    np.testing.assert_array_equal(ds.train[0].values, [[1, 4], [2, 5], [3, 6]])
    assert [s.label for s in ds.train] == ["a", "b"]


def test_trailing_missing_values_shorten_series(tmp_path):
    text = HEADER.replace("@equalLength true", "@equalLength false").replace("@seriesLength 3\n", "")
    ds = datapipe.load_ts(_write(tmp_path, text + "1,2,?:4,5,?:a\n"))
    assert ds.train[0].slen == 2


@pytest.mark.parametrize(
    "body, line, fragment",
    [
        ("1,2,3:4,5:a\n", 11, "ragged"),
        ("1,2,3:a\n", 11, "dimensions"),
        ("1,x,3:4,5,6:a\n", 11, "not a number"),
        ("1,2,3:4,5,6:c\n", 11, "unknown class label"),
        ("1,2,3:4,5,6:a\n1,2:4,5:b\n", 12, "@seriesLength"),
        ("1,?,3:4,?,6:a\n", 11, "missing values inside"),
    ],
)
def test_malformed_records_name_the_line(tmp_path, body, line, fragment):
    with pytest.raises(TsParseError) as info:
        datapipe.load_ts(_write(tmp_path, HEADER + body))
    assert info.value.line == line
    assert fragment in str(info.value)


def test_unknown_directive_is_rejected(tmp_path):
    with pytest.raises(TsParseError) as info:
        datapipe.load_ts(_write(tmp_path, "@frequency 5\n" + HEADER))
    assert info.value.line == 1


def test_truncated_file_is_rejected(tmp_path):
    with pytest.raises(TsParseError, match="no @data"):
        datapipe.load_ts(_write(tmp_path, HEADER.replace("@data\n", "")))


def test_timestamps_are_not_supported(tmp_path):
    with pytest.raises(TsParseError, match="timestamped"):
        datapipe.load_ts(_write(tmp_path, HEADER.replace("@timeStamps false", "@timeStamps true")))


def test_missing_ts_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        datapipe.load_ts(str(tmp_path / "nope.ts"))


def test_write_ts_reads_back_exactly(tmp_path):
    series = make_sinusoid_series(n=4, v=3, length=6, classes=2)
    path = datapipe.write_ts(str(tmp_path / "S_TRAIN.ts"), series, "S", ["1", "2"])
    back = datapipe.load_ts(path)
    assert back.problem_name == "S"
    for a, b in zip(series, back.train):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.label == b.label
    # a second write of the parsed data is byte-identical
    again = datapipe.write_ts(str(tmp_path / "copy" / "S_TRAIN.ts"), back.train, "S", ["1", "2"])
    assert open(again, "rb").read() == open(path, "rb").read()


def test_write_ts_rejects_mixed_widths(tmp_path):
    with pytest.raises(DataError):
        datapipe.write_ts(str(tmp_path / "x.ts"), [MultivariateSeries(np.zeros((2, 1))), MultivariateSeries(np.zeros((2, 2)))])


# ---------- normalization ----------
def test_normalization_maps_train_to_unit_range():
    series = make_sinusoid_series(n=9, v=4, length=10)
    stats = datapipe.compute_stats(series)
    scaled = np.concatenate([datapipe.apply_normalization(s, stats).values for s in series])
    np.testing.assert_allclose(scaled.min(axis=0), -1.0, atol=1e-12)
    np.testing.assert_allclose(scaled.max(axis=0), 1.0, atol=1e-12)


def test_denormalize_inverts_normalization():
    series = make_sinusoid_series(n=5, v=3, length=7)
    stats = datapipe.compute_stats(series)
    for s in series:
        back = datapipe.denormalize(datapipe.apply_normalization(s, stats), stats)
        assert not back.normalized
        np.testing.assert_allclose(back.values, s.values, atol=1e-9)


def test_constant_feature_maps_to_lower_bound():
    s = MultivariateSeries(values=np.column_stack([np.full(4, 2.5), np.arange(4.0)]))
    stats = datapipe.compute_stats([s])
    scaled = datapipe.apply_normalization(s, stats).values
    np.testing.assert_array_equal(scaled[:, 0], -1.0)
    np.testing.assert_array_equal(datapipe.denormalize(datapipe.apply_normalization(s, stats), stats).values[:, 0], 2.5)


def test_validation_uses_train_stats(sine_dir):
    raw = datapipe.load_raw_dataset_dir(str(sine_dir))
    normalized, stats = datapipe.normalize(raw)
    np.testing.assert_array_equal(stats.minimum, datapipe.compute_stats(raw.train).minimum)
    assert normalized.validation[0].normalized
    with pytest.raises(ShapeError):
        datapipe.apply_normalization(MultivariateSeries(np.zeros((3, 2))), stats)


def test_stats_sidecar(tmp_path):
    stats = datapipe.compute_stats(make_sinusoid_series(n=3, v=2, length=5), feature_names=("a", "b"))
    path = datapipe.write_stats(str(tmp_path / "stats.json"), stats)
    back = datapipe.read_stats(path)
    np.testing.assert_array_equal(back.minimum, stats.minimum)
    assert back.names() == ["a", "b"]
    (tmp_path / "bad.json").write_text("{}", encoding="utf-8")
    with pytest.raises(DataError):
        datapipe.read_stats(str(tmp_path / "bad.json"))


# ---------- framing ----------
def test_prepend_sos_adds_one_row_each_call():
    s = MultivariateSeries(values=np.zeros((4, 2)))
    framed = datapipe.prepend_sos(s)
    assert framed.slen == 5
    np.testing.assert_array_equal(framed.values[0], [-3.0, -3.0])
    assert datapipe.prepend_sos(framed).slen == 6


def test_pad_and_mask():
    short = MultivariateSeries(values=np.ones((2, 3)))
    full = MultivariateSeries(values=np.ones((4, 3)))
    padded = datapipe.pad_and_mask([short, full], 4)
    np.testing.assert_array_equal(padded[0].mask, [True, True, False, False])
    np.testing.assert_array_equal(padded[0].values[2:], 0.0)
    assert padded[1].length == 4
    values, mask = datapipe.stack_batch([short, full])
    assert values.shape == (2, 4, 3) and mask.sum() == 6
    with pytest.raises(ShapeError):
        datapipe.pad_and_mask([full], 3)


# ---------- folders ----------
def test_load_dataset_dir_ts_pair(sine_dir):
    ds = datapipe.load_dataset_dir(str(sine_dir))
    assert (len(ds.train), len(ds.validation), ds.v, ds.nominal_length) == (12, 12, 3, 8)
    assert ds.sos_value == -3.0
    assert ds.stats is not None
    assert ds.class_labels == ("1", "2", "3")


def test_load_dataset_dir_with_stored_stats(sine_dir):
    first = datapipe.load_dataset_dir(str(sine_dir))
    stats = datapipe.compute_stats(first.validation)
    second = datapipe.load_dataset_dir(str(sine_dir), stats=stats)
    assert second.stats is stats


def test_sos_inside_range_warns(sine_dir, caplog):
    with caplog.at_level("WARNING", logger="tsae_tool.core.datapipe"):
        datapipe.load_dataset_dir(str(sine_dir), sos_value=0.5)
    assert "inside the normalized range" in caplog.text


def test_csv_folders(tmp_path):
    series = make_sinusoid_series(n=4, v=2, length=5)
    for split, chunk in (("train", series[:2]), ("validation", series[2:])):
        for i, s in enumerate(chunk):
            datapipe.write_csv_series(str(tmp_path / split / f"s{i}.csv"), s, ["x", "y"])
    ds = datapipe.load_dataset_dir(str(tmp_path))
    assert ds.feature_names == ("x", "y")
    assert ds.stats.names() == ["x", "y"]
    assert len(ds.train) == 2 and len(ds.validation) == 2


def test_csv_with_text_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,x\n", encoding="utf-8")
    with pytest.raises(DataError):
        datapipe.read_csv_series(str(path))


def test_unrecognized_folder(tmp_path):
    with pytest.raises(DataError):
        datapipe.load_dataset_dir(str(tmp_path))
    with pytest.raises(FileNotFoundError):
        datapipe.load_dataset_dir(str(tmp_path / "absent"))
