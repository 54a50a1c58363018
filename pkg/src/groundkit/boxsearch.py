"""Box-score maximization over a positive score map.

Three routes: exact brute force over all O(H^2 W^2) boxes via integral
images, exact best-first branch-and-bound over corner intervals, and a
greedy coarse-to-fine search on sum-pooled downsamples. All exact routes
share one tie-breaking rule (highest score, then smallest area, then
lexicographic corners) so their results are comparable box-for-box.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import CoordinateError, ParameterError, SearchSizeError
from .scoremap import ScoreMap

BRUTE_FORCE_GUARD = 128


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive corners: (y1, y2) top-left, (y3, y4) bottom-right."""

    y1: int
    y2: int
    y3: int
    y4: int

    def __post_init__(self):
        if not (0 <= self.y1 <= self.y3 and 0 <= self.y2 <= self.y4):
            raise CoordinateError(f"invalid box corners {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.y1, self.y2, self.y3, self.y4)

    @property
    def area(self) -> int:
        return (self.y3 - self.y1 + 1) * (self.y4 - self.y2 + 1)


@dataclass
class SearchResult:
    box: BoundingBox
    score: float
    method: str
    cells_evaluated: int


class IntegralImage:
    """(H+1) x (W+1) cumulative sums, float64 accumulation."""

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=np.float64)
        self.h, self.w = v.shape
        self.table = np.zeros((self.h + 1, self.w + 1), dtype=np.float64)
        np.cumsum(np.cumsum(v, axis=0), axis=1, out=self.table[1:, 1:])

    def box_sum(self, y1: int, y2: int, y3: int, y4: int) -> float:
        t = self.table
        return (t[y3 + 1, y4 + 1] - t[y1, y4 + 1]) - (t[y3 + 1, y2] - t[y1, y2])


def integral_image(phi: ScoreMap | np.ndarray) -> IntegralImage:
    values = phi.values if isinstance(phi, ScoreMap) else phi
    return IntegralImage(values)


def box_score(ii: IntegralImage, box: BoundingBox, lam: float) -> float:
    """Eq: sum of map values inside the box minus lam * box area."""
    if box.y3 >= ii.h or box.y4 >= ii.w:
        raise CoordinateError(f"box {box.as_tuple()} exceeds map {ii.h}x{ii.w}")
    # grouping (lam*h)*w matches the exhaustive and branch-and-bound searches
    # bit-for-bit so scores are comparable across methods
    return ii.box_sum(*box.as_tuple()) - lam * (box.y3 - box.y1 + 1) * (box.y4 - box.y2 + 1)


def _candidate_key(score: float, box: BoundingBox):
    # sort order: score desc, area asc, corners lexicographically asc
    return (-score, box.area, box.as_tuple())


def _exact_search(values: np.ndarray, lam: float) -> tuple[BoundingBox, float, int]:
    """Exhaustive argmax, vectorized over (y3, y2, y4) per top row y1."""
    h, w = values.shape
    ii = IntegralImage(values)
    t = ii.table
    y2_grid, y4_grid = np.meshgrid(np.arange(w), np.arange(w), indexing="ij")
    valid = y4_grid >= y2_grid
    width_grid = (y4_grid - y2_grid + 1).astype(np.float64)

    best_key = None
    best: tuple[BoundingBox, float] | None = None
    cells = 0
    for y1 in range(h):
        bands = t[y1 + 1 :] - t[y1]  # column prefix sums of rows y1..y3
        n = bands.shape[0]
        sums = bands[:, None, 1:] - bands[:, : w, None]  # [y3, y2, y4]
        heights = lam * np.arange(1, n + 1, dtype=np.float64)
        scores = sums - heights[:, None, None] * width_grid
        scores = np.where(valid, scores, -np.inf)
        cells += int(valid.sum()) * n
        top = scores.max()
        # tie-break among maxima: smallest area, then y2, then y3, then y4 asc
        area = (np.arange(1, n + 1, dtype=np.float64)[:, None, None] * width_grid)
        tie_key = ((area * w + y2_grid) * h + np.arange(n, dtype=np.float64)[:, None, None]) * w + y4_grid
        flat = int(np.argmin(np.where(scores == top, tie_key, np.inf)))
        y3i, y2, y4 = flat // (w * w), (flat // w) % w, flat % w
        box = BoundingBox(y1, y2, y1 + y3i, y4)
        key = _candidate_key(float(top), box)
        if best_key is None or key < best_key:
            best_key, best = key, (box, float(top))
    assert best is not None
    return best[0], best[1], cells


def brute_force_search(phi: ScoreMap | np.ndarray, lam: float) -> SearchResult:
    """Exact search, guarded to small maps; use ESS or hierarchical beyond."""
    values = phi.values if isinstance(phi, ScoreMap) else np.asarray(phi)
    h, w = values.shape
    if h > BRUTE_FORCE_GUARD or w > BRUTE_FORCE_GUARD:
        raise SearchSizeError(
            f"map {h}x{w} exceeds brute-force guard ({BRUTE_FORCE_GUARD}); "
            "use ess_search or hierarchical_search"
        )
    box, score, cells = _exact_search(values, lam)
    return SearchResult(box, score, "brute", cells)


def ess_search(phi: ScoreMap | np.ndarray, lam: float) -> SearchResult:
    """Exact best-first branch-and-bound over corner intervals.

    A state holds intervals for all four corners. Its bound is the sum over
    the largest contained box minus lam times the smallest contained area,
    admissible because the map is strictly positive. States at the current
    best score are still expanded so ties resolve by the shared rule.
    """
    values = phi.values if isinstance(phi, ScoreMap) else np.asarray(phi)
    h, w = values.shape
    t = IntegralImage(values).table.tolist()  # python floats: hot loop is scalar math
    push = heapq.heappush
    pop = heapq.heappop

    root_bound = t[h][w] - lam  # union = whole map, smallest box is one cell
    heap = [(-root_bound, 0, 0, h - 1, 0, h - 1, 0, w - 1, 0, w - 1)]
    push_count = 1
    pops = 0
    best_key = None
    best: tuple[BoundingBox, float] | None = None
    best_score = -np.inf

    while heap:
        s = pop(heap)
        b = -s[0]
        pops += 1
        if b < best_score:
            break
        y1lo, y1hi, y3lo, y3hi, y2lo, y2hi, y4lo, y4hi = s[2:]
        d1 = y1hi - y1lo
        d3 = y3hi - y3lo
        d2 = y2hi - y2lo
        d4 = y4hi - y4lo
        widest = max(d1, d3, d2, d4)
        if widest == 0:
            box = BoundingBox(y1lo, y2lo, y3lo, y4lo)
            key = _candidate_key(b, box)
            if best_key is None or key < best_key:
                best_key, best, best_score = key, (box, b), b
            continue
        if d1 == widest:
            mid = (y1lo + y1hi) // 2
            children = ((y1lo, mid, y3lo, y3hi, y2lo, y2hi, y4lo, y4hi),
                        (mid + 1, y1hi, y3lo, y3hi, y2lo, y2hi, y4lo, y4hi))
        elif d3 == widest:
            mid = (y3lo + y3hi) // 2
            children = ((y1lo, y1hi, y3lo, mid, y2lo, y2hi, y4lo, y4hi),
                        (y1lo, y1hi, mid + 1, y3hi, y2lo, y2hi, y4lo, y4hi))
        elif d2 == widest:
            mid = (y2lo + y2hi) // 2
            children = ((y1lo, y1hi, y3lo, y3hi, y2lo, mid, y4lo, y4hi),
                        (y1lo, y1hi, y3lo, y3hi, mid + 1, y2hi, y4lo, y4hi))
        else:
            mid = (y4lo + y4hi) // 2
            children = ((y1lo, y1hi, y3lo, y3hi, y2lo, y2hi, y4lo, mid),
                        (y1lo, y1hi, y3lo, y3hi, y2lo, y2hi, mid + 1, y4hi))
        for c1lo, c1hi, c3lo, c3hi, c2lo, c2hi, c4lo, c4hi in children:
            # tighten: top-left corner cannot pass bottom-right and vice versa
            if c1hi > c3hi:
                c1hi = c3hi
            if c3lo < c1lo:
                c3lo = c1lo
            if c2hi > c4hi:
                c2hi = c4hi
            if c4lo < c2lo:
                c4lo = c2lo
            if c1lo > c1hi or c3lo > c3hi or c2lo > c2hi or c4lo > c4hi:
                continue
            top = t[c3hi + 1]
            bot = t[c1lo]
            usum = (top[c4hi + 1] - bot[c4hi + 1]) - (top[c2lo] - bot[c2lo])
            min_h = c3lo - c1hi + 1
            if min_h < 1:
                min_h = 1
            min_w = c4lo - c2hi + 1
            if min_w < 1:
                min_w = 1
            cb = usum - lam * min_h * min_w
            if cb < best_score:
                continue
            push(heap, (-cb, push_count, c1lo, c1hi, c3lo, c3hi, c2lo, c2hi, c4lo, c4hi))
            push_count += 1

    assert best is not None
    return SearchResult(best[0], best[1], "ess", pops)


def _sum_pool(values: np.ndarray, factor: int) -> np.ndarray:
    """Sum-pool with zero padding to a multiple of the factor."""
    h, w = values.shape
    ph = (-h) % factor
    pw = (-w) % factor
    v = np.pad(np.asarray(values, dtype=np.float64), ((0, ph), (0, pw)))
    hh, ww = v.shape
    return v.reshape(hh // factor, factor, ww // factor, factor).sum(axis=(1, 3))


def _corner_refine(
    values: np.ndarray, lam: float, est: tuple[int, int, int, int], rad: int
) -> tuple[BoundingBox, float, int]:
    """Exact search over boxes whose corners each lie within `rad` cells of
    the estimate's corners; ties broken by the shared candidate key."""
    h, w = values.shape
    t = IntegralImage(values).table
    e1, e2, e3, e4 = est

    def cands(c: int, hi: int) -> np.ndarray:
        return np.arange(max(0, c - rad), min(hi, c + rad) + 1)

    y1c, y2c, y3c, y4c = cands(e1, h - 1), cands(e2, w - 1), cands(e3, h - 1), cands(e4, w - 1)
    a = t[np.ix_(y3c + 1, y4c + 1)]  # [n3, n4]
    b = t[np.ix_(y1c, y4c + 1)]      # [n1, n4]
    c = t[np.ix_(y3c + 1, y2c)]      # [n3, n2]
    d = t[np.ix_(y1c, y2c)]          # [n1, n2]
    sums = (a[None, :, None, :] - b[:, None, None, :]) - (
        c[None, :, :, None] - d[:, None, :, None]
    )  # [n1, n3, n2, n4]
    heights = (y3c[None, :] - y1c[:, None] + 1).astype(np.float64)
    widths = (y4c[None, :] - y2c[:, None] + 1).astype(np.float64)
    scores = sums - (lam * heights)[:, :, None, None] * widths[None, None, :, :]
    valid = (heights > 0)[:, :, None, None] & (widths > 0)[None, None, :, :]
    scores = np.where(valid, scores, -np.inf)
    top = scores.max()
    # among maxima: smallest area, then corners (y1, y2, y3, y4) ascending
    area = heights[:, :, None, None] * widths[None, None, :, :]
    key = (((area * h + y1c[:, None, None, None]) * w + y2c[None, None, :, None]) * h
           + y3c[None, :, None, None]) * w + y4c[None, None, None, :]
    flat = int(np.argmin(np.where(scores == top, key, np.inf)))
    i1, i3, i2, i4 = np.unravel_index(flat, scores.shape)
    box = BoundingBox(int(y1c[i1]), int(y2c[i2]), int(y3c[i3]), int(y4c[i4]))
    return box, float(top), int(valid.sum())


def hierarchical_search(
    phi: ScoreMap | np.ndarray, lam: float, factor: int = 4, levels: int = 2
) -> SearchResult:
    """Greedy coarse-to-fine search.

    The coarsest level searches exactly on a sum-pooled downsample (box sums
    are preserved across scales; lam is scaled by scale^2 so the per-pixel
    area penalty is preserved). Each finer level zooms in: box corners are
    refined within one coarse cell of the previous estimate, so the box stays
    inside the coarse box expanded by a coarse cell per side. Not guaranteed
    optimal.
    """
    if factor < 1 or levels < 1:
        raise ParameterError("factor and levels must be >= 1")
    values = phi.values if isinstance(phi, ScoreMap) else np.asarray(phi)
    h, w = values.shape
    scale = factor ** (levels - 1)
    if scale == 1:
        box, _, cells = _exact_search(values, lam)
    else:
        coarse = _sum_pool(values, scale)
        box, _, cells = _exact_search(coarse, lam * scale * scale)
    for level in range(1, levels):
        s = factor ** (levels - 1 - level)
        pooled = values if s == 1 else _sum_pool(values, s)
        ph, pw = pooled.shape
        est = (
            box.y1 * factor,
            box.y2 * factor,
            min(ph - 1, (box.y3 + 1) * factor - 1),
            min(pw - 1, (box.y4 + 1) * factor - 1),
        )
        box, _, n = _corner_refine(pooled, lam * s * s, est, factor)
        cells += n
    # the coarsest level may sit on a padded grid; clamp back to the map
    box = BoundingBox(box.y1, box.y2, min(box.y3, h - 1), min(box.y4, w - 1))
    score = box_score(IntegralImage(values), box, lam)
    return SearchResult(box, score, "hierarchical", cells)


def map_box_to_image_coords(
    box: BoundingBox,
    scale_h: float,
    scale_w: float,
    out_h: int | None = None,
    out_w: int | None = None,
) -> BoundingBox:
    """Scale an inclusive-corner box into original image pixels.

    Top-left corners scale directly; bottom-right corners scale through the
    exclusive edge so that a full box stays full. Rounding is half-up.
    """
    if scale_h <= 0 or scale_w <= 0:
        raise ParameterError("scales must be positive")

    def rnd(v: float) -> int:
        return int(np.floor(v + 0.5))

    y1 = max(0, rnd(box.y1 * scale_h))
    y2 = max(0, rnd(box.y2 * scale_w))
    y3 = max(0, rnd((box.y3 + 1) * scale_h) - 1)
    y4 = max(0, rnd((box.y4 + 1) * scale_w) - 1)
    if out_h is not None:
        y1 = min(y1, out_h - 1)
        y3 = min(y3, out_h - 1)
    if out_w is not None:
        y2 = min(y2, out_w - 1)
        y4 = min(y4, out_w - 1)
    return BoundingBox(y1, y2, max(y3, y1), max(y4, y2))


def default_lambda(phi: ScoreMap | np.ndarray, lambda_rel: float = 1.0) -> float:
    """Scale-free penalty: lambda = lambda_rel * mean map value."""
    values = phi.values if isinstance(phi, ScoreMap) else np.asarray(phi)
    return float(lambda_rel * np.mean(np.asarray(values, dtype=np.float64)))
