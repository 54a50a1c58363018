import numpy as np
import pytest

from groundkit.boxsearch import (
    BRUTE_FORCE_GUARD,
    BoundingBox,
    IntegralImage,
    _candidate_key,
    _sum_pool,
    box_score,
    brute_force_search,
    default_lambda,
    ess_search,
    hierarchical_search,
    integral_image,
    map_box_to_image_coords,
)
from groundkit.errors import CoordinateError, ParameterError, SearchSizeError


def _random_map(rng, h, w):
    return np.exp(rng.normal(0, 1, (h, w)))


# --- integral image -----------------------------------------------------


def test_full_box_sum_example():
    ii = integral_image(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert ii.box_sum(0, 0, 1, 1) == 10.0
    assert ii.box_sum(1, 1, 1, 1) == 4.0


def test_box_sums_match_naive(rng):
    phi = _random_map(rng, 32, 32)
    ii = integral_image(phi)
    for _ in range(100):
        y1, y3 = sorted(rng.integers(0, 32, 2))
        y2, y4 = sorted(rng.integers(0, 32, 2))
        naive = float(phi[y1 : y3 + 1, y2 : y4 + 1].sum())
        assert abs(ii.box_sum(y1, y2, y3, y4) - naive) < 1e-6


def test_box_score_formula(rng):
    phi = _random_map(rng, 8, 8)
    ii = integral_image(phi)
    box = BoundingBox(1, 2, 4, 6)
    lam = 0.7
    expect = phi[1:5, 2:7].sum() - lam * box.area
    assert abs(box_score(ii, box, lam) - expect) < 1e-9


def test_box_score_bounds_checked(rng):
    ii = integral_image(_random_map(rng, 4, 4))
    with pytest.raises(CoordinateError):
        box_score(ii, BoundingBox(0, 0, 5, 2), 0.0)


def test_bounding_box_validation():
    with pytest.raises(CoordinateError):
        BoundingBox(3, 0, 1, 0)
    with pytest.raises(CoordinateError):
        BoundingBox(-1, 0, 1, 1)
    assert BoundingBox(0, 1, 2, 4).area == 12


# --- brute force --------------------------------------------------------


def _naive_best(phi, lam):
    """O(n^6) reference including the shared tie-break rule."""
    h, w = phi.shape
    best_key, best = None, None
    for y1 in range(h):
        for y3 in range(y1, h):
            for y2 in range(w):
                for y4 in range(y2, w):
                    s = phi[y1 : y3 + 1, y2 : y4 + 1].sum() - lam * (y3 - y1 + 1) * (y4 - y2 + 1)
                    box = BoundingBox(y1, y2, y3, y4)
                    key = _candidate_key(s, box)
                    if best_key is None or key < best_key:
                        best_key, best = key, (box, s)
    return best


@pytest.mark.parametrize("lam_rel", [0.0, 1.0, 3.0])
def test_brute_matches_naive_reference(rng, lam_rel):
    phi = _random_map(rng, 7, 6)
    lam = lam_rel * phi.mean()
    got = brute_force_search(phi, lam)
    box, score = _naive_best(phi, lam)
    assert got.box == box
    assert abs(got.score - score) < 1e-9


def test_brute_tie_break_on_flat_map():
    # all-equal map, lam=0: every sum-maximal box is the full box; with a
    # positive map, any smaller box has a strictly smaller sum
    got = brute_force_search(np.full((5, 5), 2.0), 0.0)
    assert got.box == BoundingBox(0, 0, 4, 4)


def test_brute_guard():
    with pytest.raises(SearchSizeError):
        brute_force_search(np.ones((BRUTE_FORCE_GUARD + 1, 4)), 0.0)


# --- branch and bound ---------------------------------------------------


def test_ess_equals_brute(rng):
    for h, w in [(16, 16), (9, 23), (1, 14), (40, 40)]:
        phi = _random_map(rng, h, w)
        for lam_rel in (0.0, 0.5, 2.0):
            lam = lam_rel * phi.mean()
            b = brute_force_search(phi, lam)
            e = ess_search(phi, lam)
            assert e.box == b.box, (h, w, lam_rel)
            assert e.score == b.score  # identical float arithmetic groupings


def test_ess_degenerate_single_cell():
    got = ess_search(np.array([[3.0]]), 0.0)
    assert got.box == BoundingBox(0, 0, 0, 0)
    assert got.score == 3.0


def test_ess_flat_map_tie_break():
    got = ess_search(np.full((6, 6), 1.5), 0.0)
    assert got.box == BoundingBox(0, 0, 5, 5)


def test_ess_bound_admissible(rng):
    # bound(interval state) >= best box score inside it, enumerated exhaustively
    phi = _random_map(rng, 10, 10)
    ii = IntegralImage(phi)
    t = ii.table
    lam = phi.mean()
    for _ in range(200):
        y1lo, y1hi = sorted(rng.integers(0, 10, 2))
        y3lo, y3hi = sorted(rng.integers(y1lo, 10, 2))
        y2lo, y2hi = sorted(rng.integers(0, 10, 2))
        y4lo, y4hi = sorted(rng.integers(y2lo, 10, 2))
        y1hi = min(y1hi, y3hi)
        y2hi = min(y2hi, y4hi)
        usum = (t[y3hi + 1, y4hi + 1] - t[y1lo, y4hi + 1]) - (t[y3hi + 1, y2lo] - t[y1lo, y2lo])
        bound = usum - lam * max(1, y3lo - y1hi + 1) * max(1, y4lo - y2hi + 1)
        best = -np.inf
        for y1 in range(y1lo, y1hi + 1):
            for y3 in range(max(y1, y3lo), y3hi + 1):
                for y2 in range(y2lo, y2hi + 1):
                    for y4 in range(max(y2, y4lo), y4hi + 1):
                        best = max(best, box_score(ii, BoundingBox(y1, y2, y3, y4), lam))
        assert bound >= best - 1e-9


def test_score_self_consistency(rng):
    phi = _random_map(rng, 20, 20)
    lam = phi.mean()
    ii = integral_image(phi)
    for result in (
        brute_force_search(phi, lam),
        ess_search(phi, lam),
        hierarchical_search(phi, lam),
    ):
        assert abs(result.score - box_score(ii, result.box, lam)) < 1e-6


# --- lambda behaviour ---------------------------------------------------


def test_lambda_zero_gives_full_image(rng):
    for _ in range(5):
        phi = _random_map(rng, 12, 15)
        got = brute_force_search(phi, 0.0)
        assert got.box == BoundingBox(0, 0, 11, 14)


def test_lambda_monotone_area(rng):
    phi = _random_map(rng, 16, 16)
    lambdas = [f * phi.mean() for f in (0.0, 0.5, 1.0, 2.0, 4.0)]
    areas = [brute_force_search(phi, lam).box.area for lam in lambdas]
    assert all(a >= b for a, b in zip(areas, areas[1:]))


def test_default_lambda_is_scaled_mean(rng):
    phi = _random_map(rng, 6, 6)
    assert abs(default_lambda(phi) - phi.mean()) < 1e-12
    assert abs(default_lambda(phi, 2.5) - 2.5 * phi.mean()) < 1e-12


# --- hierarchical -------------------------------------------------------


def test_sum_pool_preserves_box_sums(rng):
    phi = _random_map(rng, 8, 8)
    pooled = _sum_pool(phi, 4)
    assert pooled.shape == (2, 2)
    assert abs(pooled[0, 0] - phi[:4, :4].sum()) < 1e-9
    assert abs(pooled.sum() - phi.sum()) < 1e-9


def test_sum_pool_pads_with_zeros(rng):
    phi = _random_map(rng, 5, 7)
    pooled = _sum_pool(phi, 4)
    assert pooled.shape == (2, 2)
    assert abs(pooled.sum() - phi.sum()) < 1e-9


def test_hierarchical_factor_one_equals_brute(rng):
    for _ in range(5):
        phi = _random_map(rng, 13, 18)
        lam = phi.mean()
        b = brute_force_search(phi, lam)
        for levels in (1, 2):
            h = hierarchical_search(phi, lam, factor=1, levels=levels)
            assert h.box == b.box and h.score == b.score


def test_hierarchical_close_to_exact_on_blob(rng):
    yy, xx = np.mgrid[0:64, 0:64]
    g = np.exp(-(((yy - 40) / 8.0) ** 2 + ((xx - 20) / 10.0) ** 2) / 2)
    phi = np.exp(2 * g)
    lam = default_lambda(phi)
    e = ess_search(phi, lam)
    h = hierarchical_search(phi, lam)
    assert h.score >= 0.99 * e.score


def test_hierarchical_validation(rng):
    with pytest.raises(ParameterError):
        hierarchical_search(_random_map(rng, 8, 8), 0.0, factor=0)
    with pytest.raises(ParameterError):
        hierarchical_search(_random_map(rng, 8, 8), 0.0, levels=0)


# --- coordinate mapping -------------------------------------------------


def test_map_box_identity():
    box = BoundingBox(1, 2, 5, 9)
    assert map_box_to_image_coords(box, 1.0, 1.0) == box


def test_map_box_inclusive_corner_scaling():
    assert map_box_to_image_coords(BoundingBox(0, 0, 6, 6), 2.0, 2.0) == BoundingBox(0, 0, 13, 13)


def test_map_box_round_trip_within_one_pixel(rng):
    for _ in range(50):
        h_img, w_img = rng.integers(20, 200, 2)
        h_map, w_map = rng.integers(4, 19, 2)
        y1, y3 = sorted(rng.integers(0, h_map, 2))
        y2, y4 = sorted(rng.integers(0, w_map, 2))
        box = BoundingBox(int(y1), int(y2), int(y3), int(y4))
        up = map_box_to_image_coords(box, h_img / h_map, w_img / w_map, out_h=int(h_img), out_w=int(w_img))
        back = map_box_to_image_coords(up, h_map / h_img, w_map / w_img, out_h=int(h_map), out_w=int(w_map))
        for a, b in zip(box.as_tuple(), back.as_tuple()):
            assert abs(a - b) <= 1


def test_map_box_scale_validation():
    with pytest.raises(ParameterError):
        map_box_to_image_coords(BoundingBox(0, 0, 1, 1), 0.0, 1.0)
