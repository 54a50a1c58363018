import numpy as np
import pytest

from groundkit.errors import ParameterError, ShapeMismatchError
from groundkit.features import SpatialFeatureMap
from groundkit.scoremap import compute_score_map, normalize_embedding
from groundkit.tensor_ops import l2_normalize


def _unit_features(rng, h=6, w=5, d=8):
    emb = l2_normalize(rng.standard_normal((h, w, d)).astype(np.float32), axis=-1)
    return SpatialFeatureMap(emb, (h, w), True)


def test_matches_exponential_oracle(rng):
    feats = _unit_features(rng)
    text = l2_normalize(rng.standard_normal(8).astype(np.float32))
    sigma = 0.3
    phi = compute_score_map(feats, text, sigma)
    expect = np.exp(feats.embeddings.astype(np.float64) @ text.astype(np.float64) / sigma)
    assert phi.values.dtype == np.float64
    assert np.allclose(phi.values, expect, rtol=1e-12)


def test_values_strictly_positive_and_bounded(rng):
    feats = _unit_features(rng)
    text = l2_normalize(rng.standard_normal(8).astype(np.float32))
    phi = compute_score_map(feats, text, 0.5)
    assert np.all(phi.values > 0)
    assert np.all(phi.values <= np.exp(1 / 0.5) * (1 + 1e-9))


def test_identical_feature_gives_constant_map(rng):
    v = l2_normalize(rng.standard_normal(8).astype(np.float32))
    emb = np.broadcast_to(v, (4, 4, 8)).copy()
    phi = compute_score_map(SpatialFeatureMap(emb, (4, 4), True), v, 0.25)
    assert np.allclose(phi.values, phi.values[0, 0])
    assert abs(phi.values[0, 0] - np.exp(1 / 0.25)) < 1e-6


def test_realistic_temperature_stays_finite(rng):
    # sigma ~ 0.01 pushes exp past float32 range; float64 map must survive
    feats = _unit_features(rng)
    phi = compute_score_map(feats, feats.embeddings[0, 0], 0.01)
    assert np.all(np.isfinite(phi.values))
    assert phi.values.max() > np.finfo(np.float32).max


def test_sigma_validation(rng):
    feats = _unit_features(rng)
    with pytest.raises(ParameterError):
        compute_score_map(feats, np.ones(8, dtype=np.float32), 0.0)


def test_dim_mismatch(rng):
    feats = _unit_features(rng)
    with pytest.raises(ShapeMismatchError):
        compute_score_map(feats, np.ones(5, dtype=np.float32), 0.5)


def test_normalize_embedding_alias(rng):
    v = rng.standard_normal(6).astype(np.float32)
    assert abs(np.linalg.norm(normalize_embedding(v)) - 1.0) < 1e-6
