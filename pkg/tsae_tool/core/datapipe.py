"""Dataset ingestion (.ts sequence files, CSV), min-max normalization, SOS framing and padding."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from tsae_tool.core.reporting import envelope
from tsae_tool.errors import DataError, ShapeError, TsParseError
from tsae_tool.models import Dataset, MultivariateSeries, NormalizationStats

logger = logging.getLogger(__name__)

PAD_VALUE = 0.0
DEFAULT_SOS = -3.0

_BOOL_TAGS = ("@timestamps", "@missing", "@univariate", "@equallength")


# ---------- .ts reader ----------
def _parse_bool(token: str, tag: str, path: str, line_no: int) -> bool:
    token = token.lower()
    if token == "true":
        return True
    if token == "false":
        return False
    raise TsParseError(f"{tag} expects true/false, got {token!r}", path, line_no)


def _parse_dimension(text: str, path: str, line_no: int, dim: int) -> np.ndarray:
    text = text.strip()
    if not text:
        raise TsParseError(f"dimension {dim} is empty", path, line_no)
    values = []
    for token in text.split(","):
        token = token.strip()
        if token == "?":
            values.append(np.nan)
            continue
        try:
            values.append(float(token))
        except ValueError as e:
            raise TsParseError(f"dimension {dim}: not a number {token!r}", path, line_no) from e
    return np.asarray(values, dtype=np.float64)


def _strip_missing_tail(values: np.ndarray, path: str, line_no: int) -> np.ndarray:
    """Trailing all-missing rows shorten the series; missing values anywhere else are an error."""
    missing = np.isnan(values).all(axis=1)
    end = values.shape[0]
    while end > 0 and missing[end - 1]:
        end -= 1
    values = values[:end]
    if end == 0:
        raise TsParseError("series has no observed values", path, line_no)
    if np.isnan(values).any():
        raise TsParseError("missing values inside a series are not supported", path, line_no)
    return values


def load_ts(path: str) -> Dataset:
    """Parses one .ts file. The records land in `train`; split assignment is the caller's."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f".ts file not found: {p}")
    where = str(p)

    problem_name = ""
    dimensions: int | None = None
    equal_length: bool | None = None
    series_length: int | None = None
    has_labels: bool | None = None
    labels: tuple[str, ...] = ()
    in_data = False
    series: list[MultivariateSeries] = []

    with p.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue

            if line.startswith("@"):
                if in_data:
                    raise TsParseError("header directive after @data", where, line_no)
                tokens = line.split()
                tag = tokens[0].lower()
                if tag == "@data":
                    if len(tokens) != 1:
                        raise TsParseError("@data takes no value", where, line_no)
                    in_data = True
                elif tag == "@problemname":
                    if len(tokens) < 2:
                        raise TsParseError("@problemName needs a value", where, line_no)
                    problem_name = " ".join(tokens[1:])
                elif tag in _BOOL_TAGS:
                    if len(tokens) != 2:
                        raise TsParseError(f"{tokens[0]} needs exactly one value", where, line_no)
                    flag = _parse_bool(tokens[1], tokens[0], where, line_no)
                    if tag == "@timestamps" and flag:
                        raise TsParseError("timestamped series are not supported", where, line_no)
                    if tag == "@equallength":
                        equal_length = flag
                elif tag in ("@dimensions", "@serieslength"):
                    try:
                        value = int(tokens[1])
                    except (IndexError, ValueError) as e:
                        raise TsParseError(f"{tokens[0]} needs an integer", where, line_no) from e
                    if value < 1:
                        raise TsParseError(f"{tokens[0]} must be >= 1", where, line_no)
                    if tag == "@dimensions":
                        dimensions = value
                    else:
                        series_length = value
                elif tag == "@classlabel":
                    if len(tokens) < 2:
                        raise TsParseError("@classLabel needs true/false", where, line_no)
                    has_labels = _parse_bool(tokens[1], tokens[0], where, line_no)
                    labels = tuple(tokens[2:])
                    if has_labels and not labels:
                        raise TsParseError("@classLabel true must list the class values", where, line_no)
                else:
                    raise TsParseError(f"unknown header directive {tokens[0]}", where, line_no)
                continue

            if not in_data:
                raise TsParseError("data before the @data directive", where, line_no)
            if has_labels is None:
                raise TsParseError("@classLabel directive missing from the header", where, line_no)

            parts = line.split(":")
            label = None
            if has_labels:
                label = parts.pop().strip()
                if label not in labels:
                    raise TsParseError(f"unknown class label {label!r}", where, line_no)
            if dimensions is None:
                dimensions = len(parts)
            if len(parts) != dimensions:
                raise TsParseError(f"expected {dimensions} dimensions, found {len(parts)}", where, line_no)

            dims = [_parse_dimension(text, where, line_no, i) for i, text in enumerate(parts)]
            lengths = {d.shape[0] for d in dims}
            if len(lengths) != 1:
                raise TsParseError(f"ragged dimension lengths {sorted(lengths)}", where, line_no)
            values = _strip_missing_tail(np.stack(dims, axis=1), where, line_no)
            if series_length is not None and equal_length and values.shape[0] != series_length:
                raise TsParseError(
                    f"series length {values.shape[0]} does not match @seriesLength {series_length}", where, line_no
                )
            series.append(MultivariateSeries(values=values, label=label))

    if not in_data:
        raise TsParseError("no @data section (truncated file?)", where)
    if not series:
        raise TsParseError("@data section holds no records", where)
    if equal_length and len({s.slen for s in series}) != 1:
        raise TsParseError("@equalLength true but series lengths differ", where)

    logger.debug("Parsed %d series (v=%d) from %s", len(series), series[0].v, where)
    return Dataset(train=series, problem_name=problem_name, class_labels=labels)


# ---------- .ts writer ----------
def _format_value(x: float) -> str:
    return repr(float(x))


def write_ts(path: str, series: Sequence[MultivariateSeries], problem_name: str = "", class_labels: Sequence[str] = ()) -> str:
    """Canonical .ts form: fixed directive order, shortest round-trip float text."""
    if not series:
        raise DataError("nothing to write")
    v = series[0].v
    if any(s.v != v for s in series):
        raise DataError("all series must share the same number of variables")
    lengths = {s.length for s in series}
    equal = len(lengths) == 1
    labelled = bool(class_labels)

    lines = [
        f"@problemName {problem_name or Path(path).stem.split('_')[0]}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if v == 1 else 'false'}",
        f"@dimensions {v}",
        f"@equalLength {'true' if equal else 'false'}",
    ]
    if equal:
        lines.append(f"@seriesLength {lengths.pop()}")
    lines.append("@classLabel true " + " ".join(class_labels) if labelled else "@classLabel false")
    lines.append("@data")
    for s in series:
        values = s.real_values()
        record = ":".join(",".join(_format_value(x) for x in values[:, i]) for i in range(v))
        if labelled:
            if s.label is None:
                raise DataError("labelled file but a series has no label")
            record += f":{s.label}"
        lines.append(record)

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(p)


# ---------- CSV ----------
def read_csv_series(path: str) -> tuple[MultivariateSeries, list[str]]:
    """One series per file: rows are time steps, columns are variables, first row holds names."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"CSV file not found: {p}")
    try:
        frame = pd.read_csv(p)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{p}: cannot parse CSV ({e})") from e
    if frame.empty:
        raise DataError(f"{p}: no rows")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{p}: non-numeric column ({e})") from e
    if np.isnan(values).any():
        raise DataError(f"{p}: missing values")
    return MultivariateSeries(values=values, label=p.stem), [str(c) for c in frame.columns]


def write_csv_series(path: str, series: MultivariateSeries, feature_names: Sequence[str] | None = None) -> str:
    names = list(feature_names) if feature_names else [f"dim_{i}" for i in range(series.v)]
    if len(names) != series.v:
        raise DataError(f"{len(names)} feature names for {series.v} variables")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(series.real_values(), columns=names).to_csv(p, index=False)
    return str(p)


# ---------- normalization ----------
def compute_stats(series: Iterable[MultivariateSeries], ul: float = 1.0, ll: float = -1.0, feature_names=()) -> NormalizationStats:
    stacked = np.concatenate([s.real_values() for s in series], axis=0)
    return NormalizationStats(
        minimum=stacked.min(axis=0), maximum=stacked.max(axis=0), ul=ul, ll=ll, feature_names=tuple(feature_names)
    )


def apply_normalization(series: MultivariateSeries, stats: NormalizationStats) -> MultivariateSeries:
    """X_scaled = (X - min) / (max - min) * (ul - ll) + ll; zero-range features map to ll."""
    if series.v != stats.v:
        raise ShapeError(f"series has {series.v} variables, stats cover {stats.v}")
    span = stats.maximum - stats.minimum
    constant = span == 0
    safe = np.where(constant, 1.0, span)
    std = (series.values - stats.minimum) / safe
    std[:, constant] = 0.0
    scaled = std * (stats.ul - stats.ll) + stats.ll
    if series.mask is not None:
        scaled[~series.mask] = PAD_VALUE
    return series.with_values(scaled, normalized=True)


def denormalize(series: MultivariateSeries, stats: NormalizationStats) -> MultivariateSeries:
    """Inverse of apply_normalization; zero-range features come back as their constant minimum."""
    if series.v != stats.v:
        raise ShapeError(f"series has {series.v} variables, stats cover {stats.v}")
    span = stats.maximum - stats.minimum
    std = (series.values - stats.ll) / (stats.ul - stats.ll)
    values = std * span + stats.minimum
    if series.mask is not None:
        values[~series.mask] = PAD_VALUE
    return series.with_values(values, normalized=False)


def normalize(dataset: Dataset, ul: float = 1.0, ll: float = -1.0) -> tuple[Dataset, NormalizationStats]:
    """Stats come from the train split only; validation is mapped with them and may leave [ll, ul]."""
    if not dataset.train:
        raise DataError("cannot normalize: train split is empty")
    stats = compute_stats(dataset.train, ul=ul, ll=ll, feature_names=dataset.feature_names)
    return normalize_with(dataset, stats), stats


def normalize_with(dataset: Dataset, stats: NormalizationStats) -> Dataset:
    """Maps both splits with previously computed stats, e.g. the ones stored in a checkpoint."""
    return dataset.with_changes(
        train=[apply_normalization(s, stats) for s in dataset.train],
        validation=[apply_normalization(s, stats) for s in dataset.validation],
        stats=stats,
    )


def write_stats(path: str, stats: NormalizationStats) -> str:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(envelope(stats=stats.to_dict()), indent=2), encoding="utf-8")
    return str(p)


def read_stats(path: str) -> NormalizationStats:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"stats sidecar not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
        return NormalizationStats.from_dict(data["stats"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"{p}: malformed stats sidecar ({e})") from e


# ---------- framing ----------
def prepend_sos(series: MultivariateSeries, sos_value: float = DEFAULT_SOS) -> MultivariateSeries:
    """Adds a constant SOS row in front. Not idempotent: every call adds one row."""
    row = np.full((1, series.v), float(sos_value))
    mask = None if series.mask is None else np.concatenate([[True], series.mask])
    return series.with_values(np.concatenate([row, series.values], axis=0), mask=mask)


def pad_and_mask(series_list: Sequence[MultivariateSeries], max_len: int) -> list[MultivariateSeries]:
    out = []
    for i, s in enumerate(series_list):
        real = s.real_values()
        n = real.shape[0]
        if n > max_len:
            raise ShapeError(f"series {i} has length {n}, longer than max_len={max_len}")
        values = np.full((max_len, s.v), PAD_VALUE)
        values[:n] = real
        mask = np.zeros(max_len, dtype=bool)
        mask[:n] = True
        out.append(s.with_values(values, mask=mask))
    return out


def stack_batch(series_list: Sequence[MultivariateSeries], max_len: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """-> values (b, max_len, v), mask (b, max_len) with True at real steps."""
    if not series_list:
        raise DataError("empty batch")
    if max_len is None:
        max_len = max(s.length for s in series_list)
    padded = pad_and_mask(series_list, max_len)
    return np.stack([s.values for s in padded]), np.stack([s.mask for s in padded])


# ---------- dataset folders ----------
def _single(matches: list[Path], what: str, folder: Path) -> Path:
    if len(matches) > 1:
        raise DataError(f"{folder}: several {what} files {[m.name for m in matches]}")
    return matches[0]


def _load_csv_folder(folder: Path) -> tuple[list[MultivariateSeries], list[str]]:
    files = sorted(folder.glob("*.csv"))
    if not files:
        raise DataError(f"{folder}: no CSV series")
    series, names = [], []
    for f in files:
        s, cols = read_csv_series(str(f))
        if names and cols != names:
            raise DataError(f"{f}: columns {cols} differ from {names}")
        names = cols
        series.append(s)
    return series, names


def load_raw_dataset_dir(path: str) -> Dataset:
    folder = Path(path)
    if not folder.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {folder}")

    train_files = sorted(folder.glob("*_TRAIN.ts"))
    test_files = sorted(folder.glob("*_TEST.ts"))
    if train_files and test_files:
        train = load_ts(str(_single(train_files, "*_TRAIN.ts", folder)))
        test = load_ts(str(_single(test_files, "*_TEST.ts", folder)))
        dataset = train.with_changes(
            validation=test.train,
            class_labels=tuple(dict.fromkeys([*train.class_labels, *test.class_labels])),
        )
    elif (folder / "train").is_dir() and (folder / "validation").is_dir():
        train_series, feature_names = _load_csv_folder(folder / "train")
        val_series, val_names = _load_csv_folder(folder / "validation")
        if val_names != feature_names:
            raise DataError(f"{folder}: train and validation CSV columns differ")
        dataset = Dataset(
            train=train_series, validation=val_series, problem_name=folder.name, feature_names=tuple(feature_names)
        )
    else:
        raise DataError(f"{folder}: expected a *_TRAIN.ts/*_TEST.ts pair or train/ and validation/ CSV folders")

    v = dataset.v
    if any(s.v != v for s in [*dataset.train, *dataset.validation]):
        raise DataError(f"{folder}: series disagree on the number of variables")
    return dataset


def load_dataset_dir(path: str, sos_value: float = DEFAULT_SOS, stats: NormalizationStats | None = None) -> Dataset:
    """Loads both splits and normalizes them with train-split stats, or with `stats` when given."""
    raw = load_raw_dataset_dir(path)
    if stats is None:
        dataset, stats = normalize(raw)
    else:
        dataset = normalize_with(raw, stats)
    if stats.ll <= sos_value <= stats.ul:
        logger.warning("SOS value %s lies inside the normalized range [%s, %s]", sos_value, stats.ll, stats.ul)
    logger.info(
        "Loaded %s: %d train / %d validation series, v=%d, length %d",
        dataset.problem_name or path,
        len(dataset.train),
        len(dataset.validation),
        dataset.v,
        dataset.nominal_length,
    )
    return dataset.with_changes(sos_value=float(sos_value))
