"""End-to-end grounding: image + phrase -> score map -> bounding box."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .boxsearch import (
    BoundingBox,
    SearchResult,
    brute_force_search,
    default_lambda,
    ess_search,
    hierarchical_search,
    map_box_to_image_coords,
)
from .bundle import WeightsBundle
from .errors import ParameterError
from .features import PipelineConfig, compute_spatial_features, preprocess_image
from .scoremap import ScoreMap, compute_score_map
from .text_encoder import encode_phrase


@dataclass
class GroundingOutput:
    box: BoundingBox  # in original image pixels
    map_box: BoundingBox  # in score-map pixels
    score: float
    method: str
    score_map: ScoreMap
    timings: dict[str, float]


def run_search(
    phi: ScoreMap, lam: float, method: str, hier_factor: int = 4, levels: int = 2
) -> SearchResult:
    if method == "brute":
        return brute_force_search(phi, lam)
    if method == "ess":
        return ess_search(phi, lam)
    if method == "hier":
        return hierarchical_search(phi, lam, factor=hier_factor, levels=levels)
    raise ParameterError(f"unknown search method {method!r}")


def resolve_lambda(
    phi: ScoreMap, lambda_rel: float | None, lambda_abs: float | None
) -> float:
    if lambda_rel is not None and lambda_abs is not None:
        raise ParameterError("lambda_rel and lambda_abs are mutually exclusive")
    if lambda_abs is not None:
        return float(lambda_abs)
    return default_lambda(phi, 1.0 if lambda_rel is None else lambda_rel)


def ground_phrase(
    image: np.ndarray,
    phrase: str,
    bundle: WeightsBundle,
    cfg: PipelineConfig | None = None,
    sigma: float | None = None,
    lambda_rel: float | None = None,
    lambda_abs: float | None = None,
    search: str = "hier",
    hier_factor: int = 4,
    levels: int = 2,
    use_template: bool = False,
) -> GroundingOutput:
    """Ground a phrase in a [3, H, W] image in [0, 1]; box in original pixels."""
    cfg = cfg or PipelineConfig()
    orig_h, orig_w = image.shape[1], image.shape[2]
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    pre = preprocess_image(image, bundle)
    feats = compute_spatial_features(pre, bundle, cfg)
    timings["features_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    text = encode_phrase(phrase, bundle, use_template=use_template)
    timings["text_s"] = time.perf_counter() - t0

    phi = compute_score_map(feats, text, sigma if sigma is not None else bundle.sigma_default)
    lam = resolve_lambda(phi, lambda_rel, lambda_abs)

    t0 = time.perf_counter()
    result = run_search(phi, lam, search, hier_factor=hier_factor, levels=levels)
    timings["search_s"] = time.perf_counter() - t0

    h, w = phi.values.shape
    box = map_box_to_image_coords(
        result.box, orig_h / h, orig_w / w, out_h=orig_h, out_w=orig_w
    )
    return GroundingOutput(
        box=box,
        map_box=result.box,
        score=result.score,
        method=result.method,
        score_map=phi,
        timings=timings,
    )
