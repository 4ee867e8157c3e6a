from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict

import numpy as np

from tsae_tool.errors import ContractError


class Level(str, Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"
    INFO = "INFO"


LEVEL_ORDER = {Level.ERROR: 0, Level.WARNING: 1, Level.INFO: 2}


@dataclass(frozen=True)
class MetricRow:
    """One line of an evaluation summary, as shown in the viewer and the batch summary."""

    level: str
    metric: str
    value: str
    reference: str = ""
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "level": self.level,
            "metric": self.metric,
            "value": self.value,
            "reference": self.reference,
            "note": self.note,
        }


@dataclass(frozen=True, eq=False)
class MultivariateSeries:
    """One sequence of shape (slen, v).

    `mask` marks real time steps (True) against padding; `normalized` records
    whether `values` live in the [-1, 1] training space.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    label: str | None = None
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ContractError(f"series values must be 2-D (slen, v), got shape {values.shape}")
        object.__setattr__(self, "values", values)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (values.shape[0],):
                raise ContractError(f"mask length {mask.shape} does not match slen {values.shape[0]}")
            object.__setattr__(self, "mask", mask)
            if np.isnan(values[mask]).any():
                raise ContractError("NaN in unmasked positions")
        elif np.isnan(values).any():
            raise ContractError("NaN in series values")

    @property
    def slen(self) -> int:
        return int(self.values.shape[0])

    @property
    def v(self) -> int:
        return int(self.values.shape[1])

    @property
    def length(self) -> int:
        """Number of real (unpadded) time steps."""
        if self.mask is None:
            return self.slen
        return int(self.mask.sum())

    def real_values(self) -> np.ndarray:
        if self.mask is None:
            return self.values
        return self.values[self.mask]

    def with_values(self, values: np.ndarray, **changes) -> "MultivariateSeries":
        return replace(self, values=values, **changes)


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray
    ul: float = 1.0
    ll: float = -1.0
    feature_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractError(f"min/max must be matching vectors, got {lo.shape} and {hi.shape}")
        if (hi < lo).any():
            raise ContractError("per-feature max must be >= min")
        if not self.ul > self.ll:
            raise ContractError(f"ul={self.ul} must exceed ll={self.ll}")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def v(self) -> int:
        return int(self.minimum.shape[0])

    def names(self) -> list[str]:
        if self.feature_names:
            return list(self.feature_names)
        return [f"dim_{i}" for i in range(self.v)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "minimum": self.minimum.tolist(),
            "maximum": self.maximum.tolist(),
            "ul": self.ul,
            "ll": self.ll,
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationStats":
        return cls(
            minimum=np.asarray(data["minimum"], dtype=np.float64),
            maximum=np.asarray(data["maximum"], dtype=np.float64),
            ul=float(data.get("ul", 1.0)),
            ll=float(data.get("ll", -1.0)),
            feature_names=tuple(data.get("feature_names", ())),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Train and validation splits sharing v; `stats` is None until normalized."""

    train: list[MultivariateSeries]
    validation: list[MultivariateSeries] = field(default_factory=list)
    stats: NormalizationStats | None = None
    sos_value: float = -3.0
    problem_name: str = ""
    class_labels: tuple[str, ...] = field(default_factory=tuple)
    feature_names: tuple[str, ...] = field(default_factory=tuple)

    @property
    def v(self) -> int:
        first = self.train or self.validation
        if not first:
            raise ContractError("empty dataset has no feature count")
        return first[0].v

    @property
    def nominal_length(self) -> int:
        """Longest real length over both splits (without SOS)."""
        return max(s.length for s in [*self.train, *self.validation])

    def with_changes(self, **changes) -> "Dataset":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Scores for one set of generated series against the validation split."""

    label: str
    avg_min_dtw: float
    entropy: float
    test_error: float
    test_error_frobenius: float
    per_sample_dtw: np.ndarray
    per_dim_entropy: np.ndarray
    n_generated: int
    seed: int
    feature_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "per_sample_dtw", np.asarray(self.per_sample_dtw, dtype=np.float64))
        object.__setattr__(self, "per_dim_entropy", np.asarray(self.per_dim_entropy, dtype=np.float64))
        if self.per_sample_dtw.shape != (self.n_generated,):
            raise ContractError(f"{self.per_sample_dtw.shape[0]} DTW values for {self.n_generated} generated series")

    def headline(self) -> Dict[str, float]:
        return {"avg_dtw": self.avg_min_dtw, "entropy": self.entropy, "test_error": self.test_error}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            **self.headline(),
            "test_error_frobenius": self.test_error_frobenius,
            "n_generated": self.n_generated,
            "seed": self.seed,
            "per_sample_dtw": self.per_sample_dtw.tolist(),
            "per_dim_entropy": self.per_dim_entropy.tolist(),
        }
