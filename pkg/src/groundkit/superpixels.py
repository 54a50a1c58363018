"""SLIC superpixel segmentation and region-to-patch membership mapping.

Clustering runs in joint CIELAB + (x, y) space: grid-initialized centers,
seeded jitter snapped to the lowest-gradient 3x3 neighbor, local k-means
assignment within a 2S window, then a connectivity pass that merges orphan
fragments into the largest adjacent region and relabels densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # [H, W] int32, values dense in [0, region_count)
    region_count: int


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """sRGB [3, H, W] in [0, 1] -> CIELAB [H, W, 3] (D65 white)."""
    rgb = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0).transpose(1, 2, 0)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    m = np.array(
        [
            [0.4124564, 0.3575761, 0.1804375],
            [0.2126729, 0.7151522, 0.0721750],
            [0.0193339, 0.1191920, 0.9503041],
        ]
    )
    xyz = lin @ m.T
    xyz /= np.array([0.95047, 1.0, 1.08883])
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    return lab


def slic_segment(
    image: np.ndarray,
    n_segments: int,
    compactness: float = 10.0,
    iters: int = 10,
    seed: int = 0,
) -> SuperpixelMap:
    """Segment a [3, H, W] image in [0, 1] into ~n_segments superpixels."""
    _, h, w = image.shape
    if n_segments < 1 or iters < 1:
        raise ParameterError("n_segments and iters must be >= 1")
    if n_segments > h * w:
        raise ParameterError(f"n_segments ({n_segments}) exceeds pixel count ({h * w})")
    if n_segments == 1:
        return SuperpixelMap(np.zeros((h, w), dtype=np.int32), 1)

    lab = rgb_to_lab(image)
    step = np.sqrt(h * w / n_segments)
    ys = np.arange(step / 2, h, step)
    xs = np.arange(step / 2, w, step)
    centers_yx = np.array([(y, x) for y in ys for x in xs])

    # seeded jitter, then snap each center to the lowest-gradient 3x3 neighbor
    rng = np.random.default_rng(seed)
    jitter = rng.integers(-1, 2, size=centers_yx.shape)
    centers_yx = np.clip(np.rint(centers_yx) + jitter, [1, 1], [h - 2, w - 2]).astype(int)
    gy = np.sum((np.roll(lab, -1, axis=0) - np.roll(lab, 1, axis=0)) ** 2, axis=-1)
    gx = np.sum((np.roll(lab, -1, axis=1) - np.roll(lab, 1, axis=1)) ** 2, axis=-1)
    grad = gx + gy
    snapped = []
    for cy, cx in centers_yx:
        win = grad[cy - 1 : cy + 2, cx - 1 : cx + 2]
        dy, dx = np.unravel_index(np.argmin(win), win.shape)
        snapped.append((cy - 1 + dy, cx - 1 + dx))
    centers_yx = np.asarray(snapped, dtype=np.float64)
    centers_lab = lab[centers_yx[:, 0].astype(int), centers_yx[:, 1].astype(int)]

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.full((h, w), -1, dtype=np.int32)
    dists = np.full((h, w), np.inf)
    spatial_weight = (compactness / step) ** 2
    half = int(2 * step) + 1

    for _ in range(iters):
        dists.fill(np.inf)
        labels.fill(-1)
        for k in range(len(centers_yx)):
            cy, cx = centers_yx[k]
            y0, y1 = max(0, int(cy) - half), min(h, int(cy) + half + 1)
            x0, x1 = max(0, int(cx) - half), min(w, int(cx) + half + 1)
            d_lab = np.sum((lab[y0:y1, x0:x1] - centers_lab[k]) ** 2, axis=-1)
            d_xy = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = d_lab + spatial_weight * d_xy
            win = dists[y0:y1, x0:x1]
            better = d < win
            win[better] = d[better]
            labels[y0:y1, x0:x1][better] = k
        # stray pixels outside every window: nearest center spatially
        stray = labels < 0
        if np.any(stray):
            sy, sx = np.nonzero(stray)
            d = (sy[:, None] - centers_yx[None, :, 0]) ** 2 + (
                sx[:, None] - centers_yx[None, :, 1]
            ) ** 2
            labels[sy, sx] = np.argmin(d, axis=1)
        for k in range(len(centers_yx)):
            m = labels == k
            if np.any(m):
                centers_yx[k] = (yy[m].mean(), xx[m].mean())
                centers_lab[k] = lab[m].mean(axis=0)

    return enforce_connectivity(labels)


def enforce_connectivity(labels: np.ndarray) -> SuperpixelMap:
    """Make every region one 4-connected component.

    Orphan fragments (all but the largest component of each label) are merged
    into the largest adjacent region; labels are then renumbered densely in
    scan order. Iterates until stable since a merge can strand a fragment
    whose chosen neighbor was itself an orphan.
    """
    labels = np.asarray(labels, dtype=np.int32).copy()
    for _ in range(32):
        fragments = _orphan_fragments(labels)
        if not fragments:
            break
        areas = np.bincount(labels.ravel())
        for frag_mask in fragments:
            neighbor = _adjacent_labels(labels, frag_mask)
            if neighbor.size == 0:
                continue  # fragment fills the whole image; nothing to merge into
            target = neighbor[np.argmax(areas[neighbor])]
            labels[frag_mask] = target
    return _relabel_dense(labels)


def _orphan_fragments(labels: np.ndarray) -> list[np.ndarray]:
    out = []
    for val in np.unique(labels):
        comp, n = ndimage.label(labels == val, structure=_FOUR_CONN)
        if n <= 1:
            continue
        sizes = ndimage.sum_labels(np.ones_like(comp), comp, index=np.arange(1, n + 1))
        keep = int(np.argmax(sizes)) + 1
        for c in range(1, n + 1):
            if c != keep:
                out.append(comp == c)
    return out


def _adjacent_labels(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    border = ndimage.binary_dilation(mask, structure=_FOUR_CONN) & ~mask
    return np.unique(labels[border])


def _relabel_dense(labels: np.ndarray) -> SuperpixelMap:
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    order = flat[np.sort(first)]  # original labels in scan-order of appearance
    remap = np.full(int(flat.max()) + 1, -1, dtype=np.int32)
    remap[order] = np.arange(len(order), dtype=np.int32)
    return SuperpixelMap(remap[labels], int(len(order)))


def regions_to_patch_sets(
    spmap: SuperpixelMap, grid_h: int, grid_w: int
) -> list[np.ndarray]:
    """Majority-vote assignment of patches to regions.

    Patch p belongs to region m iff most of p's pixels carry label m; a
    region winning no patch receives its single best-overlap patch so every
    membership set is non-empty.
    """
    h, w = spmap.labels.shape
    rows = (np.arange(h) * grid_h) // h
    cols = (np.arange(w) * grid_w) // w
    patch_idx = rows[:, None] * grid_w + cols[None, :]
    n_patches = grid_h * grid_w
    counts = np.zeros((spmap.region_count, n_patches), dtype=np.int64)
    np.add.at(counts, (spmap.labels.ravel(), patch_idx.ravel()), 1)

    winner = np.argmax(counts, axis=0)  # per patch, region with most pixels
    memberships = [np.nonzero(winner == m)[0] for m in range(spmap.region_count)]
    for m in range(spmap.region_count):
        if memberships[m].size == 0:
            memberships[m] = np.array([int(np.argmax(counts[m]))])
    return memberships
