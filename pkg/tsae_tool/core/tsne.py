"""Exact t-SNE (no Barnes-Hut) for small sets of flattened series."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from tsae_tool.config import TsneConfig
from tsae_tool.errors import ContractError, ShapeError
from tsae_tool.models import MultivariateSeries

logger = logging.getLogger(__name__)

PERPLEXITY_TOLERANCE = 1e-5
BINARY_SEARCH_STEPS = 50
AFFINITY_FLOOR = 1e-12
MIN_GAIN = 0.01
KL_EVERY = 50
INIT_STDDEV = 1e-4


@dataclass(frozen=True, eq=False)
class TsneResult:
    coords: np.ndarray  # (n, 2)
    kl_history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def final_kl(self) -> float:
        return self.kl_history[-1][1] if self.kl_history else float("nan")


def flatten_series(series_list: Sequence[MultivariateSeries]) -> np.ndarray:
    """Each series -> one row of length slen*v, row-major over (time, variable)."""
    if not series_list:
        raise ContractError("no series to flatten")
    shapes = {s.real_values().shape for s in series_list}
    if len(shapes) != 1:
        raise ShapeError(f"series must share one shape to be embedded together, got {sorted(shapes)}")
    return np.stack([s.real_values().reshape(-1) for s in series_list])


def check_perplexity(n: int, perplexity: float) -> None:
    if n < 5:
        raise ContractError(f"t-SNE needs at least 5 points, got {n}")
    if not perplexity < (n - 1) / 3:
        raise ContractError(f"perplexity {perplexity} is infeasible for {n} points (must be < {(n - 1) / 3:.3f})")


def _row_affinities(dist_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Conditional p_j|i for one row (self excluded) and its entropy in nats."""
    shifted = dist_row - dist_row.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    entropy = np.log(total) + beta * float((shifted * p).sum()) / total
    return p / total, entropy


def conditional_probabilities(sq_dists: np.ndarray, perplexity: float) -> np.ndarray:
    """Binary-searches each row's precision beta = 1/(2 sigma^2) until its entropy matches log(perplexity)."""
    n = sq_dists.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        row = np.delete(sq_dists[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(BINARY_SEARCH_STEPS):
            p, entropy = _row_affinities(row, beta)
            diff = entropy - target
            if abs(diff) <= PERPLEXITY_TOLERANCE:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        betas[i] = beta
        P[i, np.arange(n) != i] = p
    logger.debug("t-SNE mean sigma: %.6f", float(np.mean(np.sqrt(1.0 / (2.0 * betas)))))
    return P


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    sq_dists = squareform(pdist(x, "sqeuclidean"))
    P = conditional_probabilities(sq_dists, perplexity)
    P = (P + P.T) / (2.0 * x.shape[0])
    P = np.maximum(P, AFFINITY_FLOOR)
    np.fill_diagonal(P, 0.0)
    return P


def kl_divergence(Y: np.ndarray, P: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) with Student-t Q, and its gradient with respect to Y."""
    num = 1.0 / (1.0 + squareform(pdist(Y, "sqeuclidean")))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), AFFINITY_FLOOR)
    off = ~np.eye(P.shape[0], dtype=bool)
    kl = float(np.sum(P[off] * np.log(P[off] / Q[off])))
    PQ = (P - Q) * num
    np.fill_diagonal(PQ, 0.0)
    grad = 4.0 * (PQ.sum(axis=1)[:, None] * Y - PQ @ Y)
    return kl, grad


def tsne_embed(data, config: TsneConfig | None = None) -> TsneResult:
    """Embeds rows of `data` (an (n, D) array or a list of series) into 2-D."""
    config = (config or TsneConfig()).validate()
    x = flatten_series(data) if not isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (n, D) matrix, got shape {x.shape}")
    n = x.shape[0]
    check_perplexity(n, config.perplexity)

    P = joint_probabilities(x, config.perplexity)
    rng = np.random.default_rng(config.seed)
    Y = rng.normal(0.0, INIT_STDDEV, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history: list[tuple[int, float]] = []

    for it in range(config.iterations):
        exaggeration = config.early_exaggeration if it < config.exaggeration_iters else 1.0
        momentum = config.initial_momentum if it < config.momentum_switch_iter else config.final_momentum
        _, grad = kl_divergence(Y, P * exaggeration)
        if config.adaptive_gains:
            same_sign = (grad > 0) == (update > 0)
            gains = np.where(same_sign, gains * 0.8, gains + 0.2)
            np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if (it + 1) % KL_EVERY == 0 or it + 1 == config.iterations:
            kl_now, _ = kl_divergence(Y, P)
            history.append((it + 1, kl_now))
            logger.debug("t-SNE iteration %d: KL %.6f", it + 1, kl_now)

    return TsneResult(coords=Y, kl_history=history)
