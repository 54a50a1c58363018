"""Turn a spatial feature map and text embedding into a positive score map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeMismatchError
from .features import SpatialFeatureMap
from .tensor_ops import l2_normalize

normalize_embedding = l2_normalize


@dataclass
class ScoreMap:
    values: np.ndarray  # [H, W] float64, strictly positive
    sigma: float


def compute_score_map(features: SpatialFeatureMap, text: np.ndarray, sigma: float) -> ScoreMap:
    """Elementwise exp(cosine similarity / sigma).

    Both inputs are expected unit-norm, so the inner product is the cosine
    similarity and every output value lies in (0, exp(1/sigma)]. Values are
    kept in float64: realistic model temperatures (sigma ~ 0.01) push
    exp(1/sigma) past the float32 range.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    emb = features.embeddings
    if emb.shape[-1] != text.shape[-1]:
        raise ShapeMismatchError(
            f"feature dim {emb.shape[-1]} != text embedding dim {text.shape[-1]}"
        )
    sim = np.einsum("hwd,d->hw", emb.astype(np.float64), text.astype(np.float64))
    return ScoreMap(np.exp(sim / sigma), float(sigma))
