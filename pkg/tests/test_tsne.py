from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from tsae_tool.config import TsneConfig
from tsae_tool.core.tsne import check_perplexity, conditional_probabilities, flatten_series, joint_probabilities, tsne_embed
from tsae_tool.errors import ConfigError, ContractError, ShapeError
from tsae_tool.models import MultivariateSeries


def _blobs(rng, per_blob: int = 10, dim: int = 5):
    centers = np.array([[0.0] * dim, [10.0] * dim, [-10.0] + [10.0] * (dim - 1)])
    x = np.concatenate([c + rng.normal(size=(per_blob, dim)) for c in centers])
    labels = np.repeat(np.arange(len(centers)), per_blob)
    return x, labels


def test_blobs_stay_separated(rng):
    x, labels = _blobs(rng)
    result = tsne_embed(x, TsneConfig(perplexity=5.0, iterations=500))
    assert result.coords.shape == (30, 2)
    d = cdist(result.coords, result.coords)
    np.fill_diagonal(d, np.inf)
    nearest = d.argmin(axis=1)
    assert np.all(labels[nearest] == labels)


def test_kl_falls_after_exaggeration(rng):
    x, _ = _blobs(rng)
    config = TsneConfig(perplexity=5.0, iterations=600)
    result = tsne_embed(x, config)
    after = [kl for it, kl in result.kl_history if it > config.exaggeration_iters]
    assert result.kl_history[-1][0] == 600
    assert after[-1] <= after[0]
    assert all(b <= a + 1e-3 for a, b in zip(after, after[1:]))
    assert result.final_kl == after[-1]


def test_embedding_is_seeded(rng):
    x, _ = _blobs(rng)
    a = tsne_embed(x, TsneConfig(perplexity=5.0, iterations=250, seed=4)).coords
    b = tsne_embed(x, TsneConfig(perplexity=5.0, iterations=250, seed=4)).coords
    np.testing.assert_array_equal(a, b)


def test_row_perplexity_is_matched(rng):
    x, _ = _blobs(rng)
    sq = cdist(x, x, "sqeuclidean")
    P = conditional_probabilities(sq, 5.0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(P) == 0.0)
    row = P[0][P[0] > 0]
    assert np.exp(-(row * np.log(row)).sum()) == pytest.approx(5.0, rel=1e-3)


def test_joint_probabilities_are_symmetric(rng):
    x, _ = _blobs(rng)
    P = joint_probabilities(x, 5.0)
    np.testing.assert_allclose(P, P.T)
    assert P.sum() == pytest.approx(1.0, abs=1e-6)


def test_perplexity_bounds():
    with pytest.raises(ContractError):
        check_perplexity(4, 1.0)
    with pytest.raises(ContractError):
        check_perplexity(10, 3.0)
    check_perplexity(10, 2.9)


def test_config_limits():
    with pytest.raises(ConfigError):
        TsneConfig(iterations=100).validate()
    with pytest.raises(ConfigError):
        TsneConfig(perplexity=0.0).validate()


def test_flatten_series_layout():
    s = MultivariateSeries(values=np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(flatten_series([s, s]), [[1, 2, 3, 4], [1, 2, 3, 4]])
    with pytest.raises(ShapeError):
        flatten_series([s, MultivariateSeries(values=np.zeros((3, 2)))])


@pytest.mark.slow
def test_blob_centroids_clear_their_spread():
    separated = 0
    for seed in range(10):
        x, labels = _blobs(np.random.default_rng(seed))
        coords = tsne_embed(x, TsneConfig(perplexity=5.0, iterations=1000, seed=seed)).coords
        centroids = np.array([coords[labels == c].mean(axis=0) for c in range(3)])
        spread = np.mean([np.linalg.norm(coords[labels == c] - centroids[c], axis=1).mean() for c in range(3)])
        gaps = cdist(centroids, centroids)[np.triu_indices(3, 1)]
        separated += int(gaps.min() >= 3.0 * spread)
    assert separated >= 9
