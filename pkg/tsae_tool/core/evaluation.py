"""Scores for generated series: dependent multivariate DTW, normalized entropy, reconstruction error."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from tsae_tool.core import diffcore as dc
from tsae_tool.core.adversarial import generate_batch, masked_mse, model_from_checkpoint, reconstruction_loss
from tsae_tool.core.checkpoint import Checkpoint
from tsae_tool.core.datapipe import stack_batch
from tsae_tool.errors import ContractError, ShapeError
from tsae_tool.models import Dataset, MetricsReport, MultivariateSeries

logger = logging.getLogger(__name__)

DEFAULT_GENERATED = 50
EVAL_CHUNK = 32


# ---------- DTW ----------
def _as_matrix(x) -> np.ndarray:
    if isinstance(x, MultivariateSeries):
        return x.real_values()
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def dtw_distance(a, b) -> float:
    """Accumulated squared-Euclidean cost of the best monotone alignment; all variables warp together."""
    A, B = _as_matrix(a), _as_matrix(b)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"cannot align series with {A.shape[1]} and {B.shape[1]} variables")
    cost = cdist(A, B, "sqeuclidean")
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    # cells on one anti-diagonal (i + j = k) depend only on the two before it
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return float(acc[n, m])


def _min_dtw(candidate: np.ndarray, references: list[np.ndarray]) -> float:
    return min(dtw_distance(candidate, ref) for ref in references)


def avg_min_dtw(generated: Sequence, validation: Sequence, workers: int = 1) -> tuple[float, np.ndarray]:
    """Mean over generated series of the DTW to the nearest validation series, plus the per-sample minima.

    With workers > 1 the per-sample searches run in a process pool; results keep input order.
    """
    if not generated or not validation:
        raise ContractError("avg_min_dtw needs non-empty generated and validation lists")
    candidates = [_as_matrix(g) for g in generated]
    references = [_as_matrix(v) for v in validation]
    search = partial(_min_dtw, references=references)
    if workers > 1 and len(candidates) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_sample = list(pool.map(search, candidates))
    else:
        per_sample = [search(c) for c in candidates]
    per_sample_arr = np.asarray(per_sample, dtype=np.float64)
    return float(per_sample_arr.mean()), per_sample_arr


# ---------- entropy ----------
@dataclass(frozen=True)
class ValueRange:
    """Half-open category [low, high)."""

    low: float
    high: float
    name: str = ""


SIGN_CATEGORIES = (
    ValueRange(1.0, math.inf, "p1"),
    ValueRange(0.0, 1.0, "p2"),
    ValueRange(-1.0, 0.0, "p3"),
    ValueRange(-math.inf, -1.0, "p4"),
)


def _sorted_partition(categories: Sequence[ValueRange]) -> list[ValueRange]:
    if len(categories) < 2:
        raise ContractError("entropy needs at least two categories")
    ordered = sorted(categories, key=lambda c: c.low)
    if ordered[0].low != -math.inf or ordered[-1].high != math.inf:
        raise ContractError("categories must cover the whole real line")
    for left, right in zip(ordered, ordered[1:]):
        if left.high != right.low:
            raise ContractError(f"categories {left} and {right} leave a gap or overlap")
    return ordered


def max_entropy(categories: Sequence[ValueRange] = SIGN_CATEGORIES) -> float:
    return math.log(len(categories))


def _pool_values(generated) -> np.ndarray:
    if isinstance(generated, np.ndarray):
        arr = np.asarray(generated, dtype=np.float64)
        return arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr[:, None]
    if not generated:
        raise ContractError("entropy needs at least one observation")
    return np.concatenate([_as_matrix(s) for s in generated], axis=0)


def entropy(generated, categories: Sequence[ValueRange] = SIGN_CATEGORIES) -> tuple[float, np.ndarray]:
    """Per variable, all time steps of all series are pooled and binned; H_E = -sum p log p / log|S|.

    Returns the mean over variables and the per-variable values.
    """
    ordered = _sorted_partition(categories)
    pooled = _pool_values(generated)
    if pooled.shape[0] == 0:
        raise ContractError("entropy needs at least one observation")
    if np.isnan(pooled).any():
        raise ContractError("entropy input contains NaN")
    lows = np.array([c.low for c in ordered])
    index = np.searchsorted(lows, pooled, side="right") - 1
    h_max = math.log(len(ordered))
    per_dim = np.empty(pooled.shape[1])
    for i in range(pooled.shape[1]):
        p = np.bincount(index[:, i], minlength=len(ordered)) / pooled.shape[0]
        p = p[p > 0]
        per_dim[i] = float(-(p * np.log(p)).sum() / h_max)
    return float(per_dim.mean()), per_dim


# ---------- reconstruction error ----------
def test_error(ckpt: Checkpoint, validation: Sequence[MultivariateSeries]) -> tuple[float, float]:
    """(per-element MSE, mean per-sample Frobenius residual) of teacher-forced reconstruction."""
    if not validation:
        raise ContractError("test_error needs a non-empty validation split")
    model = model_from_checkpoint(ckpt)
    values, mask = stack_batch(validation, model.series_length)
    sq_sum, count, frob = 0.0, 0, []
    with dc.no_grad():
        for start in range(0, values.shape[0], EVAL_CHUNK):
            x, m = values[start : start + EVAL_CHUNK], mask[start : start + EVAL_CHUNK]
            pred = model.reconstruction(x, m)
            n_real = int(m.sum()) * x.shape[2]
            sq_sum += masked_mse(pred.values, x, m) * n_real
            count += n_real
            frob.append(reconstruction_loss(pred, x, m).item() * x.shape[0])
    return sq_sum / count, float(sum(frob) / values.shape[0])


# ---------- report ----------
def build_report(
    ckpt: Checkpoint,
    dataset: Dataset,
    n_generated: int = DEFAULT_GENERATED,
    seed: int = 0,
    workers: int = 1,
) -> MetricsReport:
    if n_generated < 1:
        raise ContractError("build_report needs at least one generated series")
    if not dataset.validation:
        raise ContractError("dataset has no validation split")
    if ckpt.stats is not None and dataset.stats is not None:
        if not (np.array_equal(ckpt.stats.minimum, dataset.stats.minimum) and np.array_equal(ckpt.stats.maximum, dataset.stats.maximum)):
            logger.warning("Dataset normalization differs from the one stored in the checkpoint")

    generated = generate_batch(ckpt, n_generated, seed)
    avg, per_sample = avg_min_dtw(generated, dataset.validation, workers)
    h, per_dim = entropy(generated)
    mse, frob = test_error(ckpt, dataset.validation)
    logger.info("%s: avg DTW %.3f, entropy %.3f, test error %.4f", ckpt.label, avg, h, mse)
    names = dataset.stats.feature_names if dataset.stats is not None else ()
    return MetricsReport(
        label=ckpt.label,
        avg_min_dtw=avg,
        entropy=h,
        test_error=mse,
        test_error_frobenius=frob,
        per_sample_dtw=per_sample,
        per_dim_entropy=per_dim,
        n_generated=n_generated,
        seed=seed,
        feature_names=tuple(names),
    )


test_error.__test__ = False  # not a pytest test
