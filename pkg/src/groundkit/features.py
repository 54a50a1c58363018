"""Per-pixel spatial embedding extraction.

ViT path: stride-reduced patchify with interpolated positional embeddings,
region tokens carried through every layer under attention masks built from
superpixel memberships, multi-scale pixel-wise averaging. ResNet-style path:
optionally dilated conv backbone, closed-form per-patch value pooling, and
bilinear upsampling. Both paths end with per-pixel L2 normalization so the
embeddings live on the same sphere as text embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionWeights,
    RegionTokenSet,
    TokenGrid,
    block_weights_from_bundle,
    class_token_update,
    region_token_update,
)
from .bundle import WeightsBundle
from .errors import BundleCorruptionError, ConfigError, ParameterError, UnsupportedArchError
from .superpixels import SuperpixelMap, regions_to_patch_sets, slic_segment
from .tensor_ops import avg_pool2d, bilinear_resize, conv2d, l2_normalize, layer_norm, relu


@dataclass
class SpatialFeatureMap:
    embeddings: np.ndarray  # [H, W, D]
    source_resolution: tuple[int, int]
    normalized: bool


@dataclass
class PipelineConfig:
    stride_divisor: int = 1
    slic_counts: list[int] = field(default_factory=lambda: list(range(100, 601, 50)))
    dilation_enabled: bool = True
    compactness: float = 10.0
    slic_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.stride_divisor not in (1, 2, 4):
            raise ParameterError(f"stride_divisor must be 1, 2 or 4, got {self.stride_divisor}")
        if not self.slic_counts or list(self.slic_counts) != sorted(self.slic_counts):
            raise ParameterError("slic_counts must be a non-empty ascending list")


def preprocess_image(image: np.ndarray, bundle: WeightsBundle) -> np.ndarray:
    """[3, H, W] float in [0, 1] -> resized, channel-normalized [3, R, R].

    The full image is resized (aspect-distorting) to the model resolution;
    predicted boxes are mapped back through the inverse scaling later.
    """
    res = bundle.dims["input_resolution"]
    hwc = np.asarray(image, dtype=np.float32).transpose(1, 2, 0)
    hwc = bilinear_resize(hwc, res, res)
    mean = np.asarray(bundle.preprocess["mean"], dtype=np.float32)
    std = np.asarray(bundle.preprocess["std"], dtype=np.float32)
    return ((hwc - mean) / std).transpose(2, 0, 1).astype(np.float32)


# ---------------------------------------------------------------------------
# ViT path
# ---------------------------------------------------------------------------

def interpolate_positional_embeddings(bundle: WeightsBundle, new_grid: tuple[int, int]) -> np.ndarray:
    """Resize the grid part of the positional embedding; class slot untouched."""
    pos = bundle.tensor("visual.positional_embedding")
    n = pos.shape[0] - 1
    g = int(round(np.sqrt(n)))
    if g * g != n:
        raise BundleCorruptionError(f"positional embedding grid of {n} tokens is not square")
    gh, gw = new_grid
    grid = bilinear_resize(pos[1:].reshape(g, g, -1), gh, gw).reshape(gh * gw, -1)
    return np.concatenate([pos[:1], grid], axis=0)


def vit_patchify(image: np.ndarray, bundle: WeightsBundle, stride_divisor: int = 1) -> TokenGrid:
    """Patch-embed at a reduced stride (sliding-window patch extraction).

    Computed as stride_divisor^2 interleaved full-stride convolutions over
    shifted inputs so the tokens at the original offsets are bitwise equal
    to the unreduced model's tokens.
    """
    patch = bundle.dims["patch_size"]
    d = stride_divisor
    if patch % d != 0:
        raise ConfigError(f"stride_divisor {d} does not divide patch size {patch}")
    stride = patch // d
    kernel = bundle.tensor("visual.conv1.weight")
    _, h, w = image.shape
    gh = (h - patch) // stride + 1
    gw = (w - patch) // stride + 1
    feats = np.empty((kernel.shape[0], gh, gw), dtype=np.float32)
    for dy in range(d):
        for dx in range(d):
            oy, ox = dy * stride, dx * stride
            if oy + patch > h or ox + patch > w:
                continue
            sub = conv2d(image[:, oy:, ox:], kernel, stride=patch)
            feats[:, dy :: d, dx :: d][:, : sub.shape[1], : sub.shape[2]] = sub
    patches = feats.reshape(feats.shape[0], -1).T  # [N, C]
    cls = bundle.tensor("visual.class_embedding")[None, :]
    tokens = np.concatenate([cls, patches], axis=0)
    tokens = tokens + interpolate_positional_embeddings(bundle, (gh, gw))
    return TokenGrid(tokens.astype(np.float32), gh, gw)


def _vit_project(tokens: np.ndarray, bundle: WeightsBundle) -> np.ndarray:
    """ln_post + final projection into the joint embedding space."""
    x = layer_norm(tokens, bundle.tensor("visual.ln_post.weight"), bundle.tensor("visual.ln_post.bias"))
    return (x @ bundle.tensor("visual.proj")).astype(np.float32)


def vit_image_embedding(image: np.ndarray, bundle: WeightsBundle, stride_divisor: int = 1) -> np.ndarray:
    """Standard whole-image embedding (class-token route), L2-normalized."""
    grid = vit_patchify(image, bundle, stride_divisor)
    tokens = layer_norm(grid.tokens, bundle.tensor("visual.ln_pre.weight"), bundle.tensor("visual.ln_pre.bias"))
    grid = TokenGrid(tokens, grid.grid_h, grid.grid_w)
    heads = bundle.dims["heads"]
    for layer in range(bundle.dims["layers"]):
        grid = class_token_update(grid, block_weights_from_bundle(bundle, "visual", layer, heads))
    return l2_normalize(_vit_project(grid.tokens[:1], bundle)[0])


def _run_region_tokens(
    grid: TokenGrid, memberships: list[np.ndarray], bundle: WeightsBundle
) -> np.ndarray:
    """Carry region tokens (initialized from the class token) through all layers."""
    tokens = layer_norm(
        grid.tokens, bundle.tensor("visual.ln_pre.weight"), bundle.tensor("visual.ln_pre.bias")
    )
    grid = TokenGrid(tokens, grid.grid_h, grid.grid_w)
    regions = RegionTokenSet(
        tokens=np.repeat(grid.tokens[:1], len(memberships), axis=0),
        memberships=memberships,
    )
    heads = bundle.dims["heads"]
    for layer in range(bundle.dims["layers"]):
        bw = block_weights_from_bundle(bundle, "visual", layer, heads)
        regions = region_token_update(regions, grid, bw)
        grid = class_token_update(grid, bw)
    return _vit_project(regions.tokens, bundle)  # [M, D]


def vit_spatial_features(
    image: np.ndarray,
    bundle: WeightsBundle,
    spmap: SuperpixelMap,
    cfg: PipelineConfig,
    normalize: bool = True,
) -> SpatialFeatureMap:
    """Region-token feature map for one superpixel segmentation."""
    grid = vit_patchify(image, bundle, cfg.stride_divisor)
    memberships = regions_to_patch_sets(spmap, grid.grid_h, grid.grid_w)
    embeddings = _run_region_tokens(grid, memberships, bundle)
    if normalize:
        embeddings = l2_normalize(embeddings, axis=-1)
    pixel_map = embeddings[spmap.labels]  # paint each pixel with its region vector
    return SpatialFeatureMap(pixel_map, (grid.grid_h, grid.grid_w), normalize)


def multiscale_feature_map(
    image: np.ndarray, bundle: WeightsBundle, cfg: PipelineConfig
) -> SpatialFeatureMap:
    """Average region-token maps over all SLIC counts, then normalize once.

    Region tokens from every SLIC resolution are batched into a single
    masked-attention pass per layer.
    """
    rgb01 = _denormalize(image, bundle)
    maps = [
        slic_segment(rgb01, k, compactness=cfg.compactness, iters=cfg.slic_iters, seed=cfg.seed)
        for k in cfg.slic_counts
    ]
    grid = vit_patchify(image, bundle, cfg.stride_divisor)
    all_memberships: list[np.ndarray] = []
    offsets = [0]
    for spmap in maps:
        all_memberships.extend(regions_to_patch_sets(spmap, grid.grid_h, grid.grid_w))
        offsets.append(len(all_memberships))
    embeddings = _run_region_tokens(grid, all_memberships, bundle)

    h, w = maps[0].labels.shape
    acc = np.zeros((h, w, embeddings.shape[1]), dtype=np.float64)
    for i, spmap in enumerate(maps):
        acc += embeddings[offsets[i] : offsets[i + 1]][spmap.labels]
    avg = (acc / len(maps)).astype(np.float32)
    return SpatialFeatureMap(l2_normalize(avg, axis=-1), (grid.grid_h, grid.grid_w), True)


def _denormalize(image: np.ndarray, bundle: WeightsBundle) -> np.ndarray:
    """Invert channel normalization back to [0, 1] RGB for segmentation."""
    mean = np.asarray(bundle.preprocess["mean"], dtype=np.float32)[:, None, None]
    std = np.asarray(bundle.preprocess["std"], dtype=np.float32)[:, None, None]
    return np.clip(image * std + mean, 0.0, 1.0)


# ---------------------------------------------------------------------------
# ResNet-style path
# ---------------------------------------------------------------------------

def dilate_network(bundle: WeightsBundle) -> list[dict]:
    """Turn the backbone plan into its stride-1 dilated equivalent.

    Every stride-2 layer becomes stride-1; each layer's dilation and padding
    are scaled by the cumulative rate of the stride-2 layers before it, so
    the dense output subsampled at that rate reproduces the strided output.
    Weights are untouched.
    """
    if bundle.arch != "resnet":
        raise UnsupportedArchError(f"dilate_network requires a resnet bundle, got {bundle.arch}")
    plan = []
    rate = 1
    for desc in bundle.backbone:
        new = dict(desc)
        new["dilation"] = desc.get("dilation", 1) * rate
        new["padding"] = desc.get("padding", 0) * rate
        if desc.get("stride", 1) == 2:
            new["stride"] = 1
            rate *= 2
        plan.append(new)
    return plan


def resnet_backbone(image: np.ndarray, bundle: WeightsBundle, dilated: bool) -> np.ndarray:
    """Run the conv/pool descriptor plan; returns [C, gh, gw] patch features."""
    if bundle.arch != "resnet":
        raise UnsupportedArchError(f"resnet_backbone requires a resnet bundle, got {bundle.arch}")
    plan = dilate_network(bundle) if dilated else bundle.backbone
    x = np.asarray(image, dtype=np.float32)
    for i, desc in enumerate(plan):
        if desc["kind"] == "conv":
            x = conv2d(
                x,
                bundle.tensor(f"visual.layers.{i}.weight"),
                stride=desc.get("stride", 1),
                dilation=desc.get("dilation", 1),
                padding=desc.get("padding", 0),
                bias=bundle.tensors.get(f"visual.layers.{i}.bias"),
            )
            if desc.get("relu", True):
                x = relu(x)
        elif desc["kind"] == "avgpool":
            x = avg_pool2d(
                x, desc["k"], stride=desc.get("stride", 1), dilation=desc.get("dilation", 1)
            )
        else:
            raise ConfigError(f"unknown backbone layer kind {desc['kind']!r}")
    return x


def resnet_attnpool_weights(bundle: WeightsBundle) -> AttentionWeights:
    return AttentionWeights(
        w_q=bundle.tensor("visual.attnpool.q_proj.weight"),
        w_k=bundle.tensor("visual.attnpool.k_proj.weight"),
        w_v=bundle.tensor("visual.attnpool.v_proj.weight"),
        b_q=bundle.tensor("visual.attnpool.q_proj.bias"),
        b_k=bundle.tensor("visual.attnpool.k_proj.bias"),
        b_v=bundle.tensor("visual.attnpool.v_proj.bias"),
        w_out=bundle.tensor("visual.attnpool.c_proj.weight"),
        b_out=bundle.tensor("visual.attnpool.c_proj.bias"),
        heads=bundle.dims["heads"],
    )


def resnet_spatial_features(
    image: np.ndarray, bundle: WeightsBundle, cfg: PipelineConfig, normalize: bool = True
) -> SpatialFeatureMap:
    """Dense per-patch pooled embeddings, upsampled to pixel resolution."""
    from .attention import resnet_per_patch_pool

    feats = resnet_backbone(image, bundle, dilated=cfg.dilation_enabled)
    c, gh, gw = feats.shape
    pooled = resnet_per_patch_pool(feats.reshape(c, gh * gw).T, resnet_attnpool_weights(bundle))
    grid = pooled.reshape(gh, gw, -1)
    res = image.shape[1]
    pixel_map = bilinear_resize(grid, res, image.shape[2])
    if normalize:
        pixel_map = l2_normalize(pixel_map, axis=-1)
    return SpatialFeatureMap(pixel_map, (gh, gw), normalize)


def compute_spatial_features(
    image: np.ndarray, bundle: WeightsBundle, cfg: PipelineConfig
) -> SpatialFeatureMap:
    """Architecture dispatch for a preprocessed [3, R, R] image."""
    if bundle.arch == "vit":
        return multiscale_feature_map(image, bundle, cfg)
    if bundle.arch == "resnet":
        return resnet_spatial_features(image, bundle, cfg)
    raise UnsupportedArchError(f"unknown arch {bundle.arch!r}")
