"""Attention pooling, region-token updates, and per-patch value pooling.

A class token pools over every patch token; a region token is a copy of the
class token restricted, via attention masking, to pool only over its member
patches and itself. For the single-attention-layer (ResNet-style) tower the
masked pool over a patch duplicated with itself collapses in closed form to
the value projection of that patch, with no softmax evaluated at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import WeightsBundle
from .errors import RegionError, ShapeMismatchError
from .tensor_ops import layer_norm, linear, quick_gelu, softmax


@dataclass
class AttentionWeights:
    """QKV/out-projection weights of one attention sublayer."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    heads: int

    def __post_init__(self):
        c = self.w_q.shape[0]
        if c % self.heads != 0:
            raise ShapeMismatchError(f"heads ({self.heads}) must divide width ({c})")

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[0] // self.heads


@dataclass
class BlockWeights:
    """One pre-norm transformer block: ln1 -> attention -> ln2 -> MLP."""

    attn: AttentionWeights
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray


@dataclass
class TokenGrid:
    """Class token (index 0) plus grid_h*grid_w patch tokens, [1+N, C]."""

    tokens: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.tokens.shape[0] != 1 + self.grid_h * self.grid_w:
            raise ShapeMismatchError(
                f"token count {self.tokens.shape[0]} != 1 + {self.grid_h}x{self.grid_w}"
            )

    @property
    def patches(self) -> np.ndarray:
        return self.tokens[1:]


@dataclass
class RegionTokenSet:
    """M region tokens and their patch memberships (0-based patch indices)."""

    tokens: np.ndarray
    memberships: list[np.ndarray]

    def __post_init__(self):
        for m, mem in enumerate(self.memberships):
            if len(mem) == 0:
                raise RegionError(f"region {m} has an empty membership set")


def attention_weights_from_bundle(bundle: WeightsBundle, prefix: str, heads: int) -> AttentionWeights:
    w = bundle.tensor(f"{prefix}.attn.in_proj_weight")
    b = bundle.tensor(f"{prefix}.attn.in_proj_bias")
    c = w.shape[1]
    return AttentionWeights(
        w_q=w[:c], w_k=w[c : 2 * c], w_v=w[2 * c :],
        b_q=b[:c], b_k=b[c : 2 * c], b_v=b[2 * c :],
        w_out=bundle.tensor(f"{prefix}.attn.out_proj.weight"),
        b_out=bundle.tensor(f"{prefix}.attn.out_proj.bias"),
        heads=heads,
    )


def block_weights_from_bundle(bundle: WeightsBundle, tower: str, layer: int, heads: int) -> BlockWeights:
    prefix = f"{tower}.blocks.{layer}"
    return BlockWeights(
        attn=attention_weights_from_bundle(bundle, prefix, heads),
        ln1_g=bundle.tensor(f"{prefix}.ln_1.weight"),
        ln1_b=bundle.tensor(f"{prefix}.ln_1.bias"),
        ln2_g=bundle.tensor(f"{prefix}.ln_2.weight"),
        ln2_b=bundle.tensor(f"{prefix}.ln_2.bias"),
        fc_w=bundle.tensor(f"{prefix}.mlp.c_fc.weight"),
        fc_b=bundle.tensor(f"{prefix}.mlp.c_fc.bias"),
        proj_w=bundle.tensor(f"{prefix}.mlp.c_proj.weight"),
        proj_b=bundle.tensor(f"{prefix}.mlp.c_proj.bias"),
    )


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)  # [h, n, dh]


def multi_head_attention(
    queries: np.ndarray, keys_values: np.ndarray, w: AttentionWeights,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Full multi-head attention of `queries` over `keys_values`, [nq, C] out.

    `mask`, if given, is a [nq, nk] boolean array; False entries get zero
    attention. The softmax temperature is sqrt(head_dim), the source model's
    convention.
    """
    q = _split_heads(linear(queries, w.w_q, w.b_q), w.heads)
    k = _split_heads(linear(keys_values, w.w_k, w.b_k), w.heads)
    v = _split_heads(linear(keys_values, w.w_v, w.b_v), w.heads)
    scores = np.einsum("hqd,hkd->hqk", q, k, dtype=np.float64)
    if mask is not None:
        scores = np.where(mask[None, :, :], scores, -np.inf)
    alpha = softmax(scores, tau=float(np.sqrt(w.head_dim)), axis=-1)
    ctx = np.einsum("hqk,hkd->hqd", alpha.astype(np.float64), v.astype(np.float64))
    ctx = ctx.transpose(1, 0, 2).reshape(queries.shape[0], -1).astype(np.float32)
    return linear(ctx, w.w_out, w.b_out)


def attention_pool(query_token: np.ndarray, pool_tokens: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """One query pooling over a token set (single attention application)."""
    if pool_tokens.shape[0] == 0:
        raise RegionError("attention_pool requires a non-empty pool set")
    return multi_head_attention(query_token[None, :], pool_tokens, w)[0]


def transformer_block(
    tokens: np.ndarray, bw: BlockWeights, mask: np.ndarray | None = None
) -> np.ndarray:
    """Pre-norm block with (optionally masked) self-attention over all tokens."""
    normed = layer_norm(tokens, bw.ln1_g, bw.ln1_b)
    tokens = tokens + multi_head_attention(normed, normed, bw.attn, mask=mask)
    normed = layer_norm(tokens, bw.ln2_g, bw.ln2_b)
    hidden = quick_gelu(linear(normed, bw.fc_w, bw.fc_b))
    return tokens + linear(hidden, bw.proj_w, bw.proj_b)


def class_token_update(grid: TokenGrid, bw: BlockWeights) -> TokenGrid:
    """Standard layer update of the class+patch grid (regions never feed in)."""
    return TokenGrid(transformer_block(grid.tokens, bw), grid.grid_h, grid.grid_w)


def region_token_update(
    regions: RegionTokenSet, grid: TokenGrid, bw: BlockWeights
) -> RegionTokenSet:
    """Masked update of all region tokens against the *layer-input* grid.

    Each region token attends only to its member patches and itself, then
    passes through the block's MLP exactly as the class token does. The grid
    is read-only here; call class_token_update separately to advance it.
    """
    n_patches = grid.grid_h * grid.grid_w
    for m, mem in enumerate(regions.memberships):
        if np.any(mem < 0) or np.any(mem >= n_patches):
            raise RegionError(f"region {m} references out-of-range patch indices")
    w = bw.attn
    r = regions.tokens
    n_regions = r.shape[0]

    r_norm = layer_norm(r, bw.ln1_g, bw.ln1_b)
    t_norm = layer_norm(grid.patches, bw.ln1_g, bw.ln1_b)

    q = _split_heads(linear(r_norm, w.w_q, w.b_q), w.heads)          # [h, M, dh]
    k_patch = _split_heads(linear(t_norm, w.w_k, w.b_k), w.heads)    # [h, N, dh]
    v_patch = _split_heads(linear(t_norm, w.w_v, w.b_v), w.heads)
    k_self = _split_heads(linear(r_norm, w.w_k, w.b_k), w.heads)     # [h, M, dh]
    v_self = _split_heads(linear(r_norm, w.w_v, w.b_v), w.heads)

    mask = np.zeros((n_regions, n_patches), dtype=bool)
    for m, mem in enumerate(regions.memberships):
        mask[m, mem] = True

    scores = np.einsum("hmd,hnd->hmn", q, k_patch, dtype=np.float64)
    scores = np.where(mask[None, :, :], scores, -np.inf)
    self_scores = np.einsum("hmd,hmd->hm", q, k_self, dtype=np.float64)
    full = np.concatenate([scores, self_scores[:, :, None]], axis=2)  # [h, M, N+1]
    alpha = softmax(full, tau=float(np.sqrt(w.head_dim)), axis=-1).astype(np.float64)

    ctx = np.einsum("hmn,hnd->hmd", alpha[:, :, :n_patches], v_patch.astype(np.float64))
    ctx += alpha[:, :, n_patches, None] * v_self.astype(np.float64)
    ctx = ctx.transpose(1, 0, 2).reshape(n_regions, -1).astype(np.float32)
    r = r + linear(ctx, w.w_out, w.b_out)

    normed = layer_norm(r, bw.ln2_g, bw.ln2_b)
    hidden = quick_gelu(linear(normed, bw.fc_w, bw.fc_b))
    r = r + linear(hidden, bw.proj_w, bw.proj_b)
    return RegionTokenSet(tokens=r, memberships=regions.memberships)


def resnet_class_token(patch_tokens: np.ndarray) -> np.ndarray:
    """Mean of all patch tokens (the single-attention-tower class token)."""
    if patch_tokens.shape[0] < 1:
        raise RegionError("need at least one patch token")
    return np.mean(np.asarray(patch_tokens, dtype=np.float64), axis=0).astype(np.float32)


def resnet_per_patch_pool(patch_tokens: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Closed-form masked pool: row m = out_proj(W^V f_m). No softmax needed;
    over the duplicated set {f_m, f_m} every attention weight is exactly 0.5
    in every head, so the weighted value sum is just the value projection."""
    values = linear(patch_tokens, w.w_v, w.b_v)
    return linear(values, w.w_out, w.b_out)
