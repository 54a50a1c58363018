"""Torch reference forward passes and an independent BPE tokenizer.

These implementations stand on their own (torch ops only, no engine code) so
parity fixtures genuinely cross-check the numpy engine rather than echo it.
"""

from __future__ import annotations

import functools
import re

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ExportError


def _t(sd: dict[str, np.ndarray], name: str) -> torch.Tensor:
    try:
        return torch.from_numpy(np.ascontiguousarray(sd[name]))
    except KeyError:
        raise ExportError(f"reference model is missing tensor '{name}'") from None


def _block(x: torch.Tensor, sd: dict, prefix: str, heads: int, mask: torch.Tensor | None):
    """Pre-norm block on [seq, width]; QuickGELU MLP; optional additive mask."""
    h = F.layer_norm(x, x.shape[-1:], _t(sd, f"{prefix}.ln_1.weight"), _t(sd, f"{prefix}.ln_1.bias"))
    attn, _ = F.multi_head_attention_forward(
        h.unsqueeze(1), h.unsqueeze(1), h.unsqueeze(1),
        x.shape[-1], heads,
        _t(sd, f"{prefix}.attn.in_proj_weight"), _t(sd, f"{prefix}.attn.in_proj_bias"),
        None, None, False, 0.0,
        _t(sd, f"{prefix}.attn.out_proj.weight"), _t(sd, f"{prefix}.attn.out_proj.bias"),
        need_weights=False, attn_mask=mask,
    )
    x = x + attn.squeeze(1)
    h = F.layer_norm(x, x.shape[-1:], _t(sd, f"{prefix}.ln_2.weight"), _t(sd, f"{prefix}.ln_2.bias"))
    h = F.linear(h, _t(sd, f"{prefix}.mlp.c_fc.weight"), _t(sd, f"{prefix}.mlp.c_fc.bias"))
    h = h * torch.sigmoid(1.702 * h)
    return x + F.linear(h, _t(sd, f"{prefix}.mlp.c_proj.weight"), _t(sd, f"{prefix}.mlp.c_proj.bias"))


@torch.no_grad()
def reference_vit_image(
    image: np.ndarray, sd: dict[str, np.ndarray], heads: int, layers: int
) -> tuple[np.ndarray, np.ndarray]:
    """Whole-image embedding and per-layer class-token activations.

    `image` is a channel-normalized [3, R, R] array. Returns the unit-norm
    embedding and a [layers+1, width] stack (post-ln_pre token, then the
    class token after each block).
    """
    x = torch.from_numpy(np.ascontiguousarray(image)).unsqueeze(0)
    patch = sd["visual.conv1.weight"].shape[-1]
    feats = F.conv2d(x, _t(sd, "visual.conv1.weight"), stride=patch)
    tokens = feats.flatten(2).squeeze(0).T  # [N, width]
    cls = _t(sd, "visual.class_embedding").unsqueeze(0)
    tokens = torch.cat([cls, tokens], dim=0) + _t(sd, "visual.positional_embedding")
    tokens = F.layer_norm(
        tokens, tokens.shape[-1:], _t(sd, "visual.ln_pre.weight"), _t(sd, "visual.ln_pre.bias")
    )
    activations = [tokens[0].clone()]
    for layer in range(layers):
        tokens = _block(tokens, sd, f"visual.transformer.resblocks.{layer}", heads, None)
        activations.append(tokens[0].clone())
    out = F.layer_norm(
        tokens[:1], tokens.shape[-1:], _t(sd, "visual.ln_post.weight"), _t(sd, "visual.ln_post.bias")
    )
    emb = (out @ _t(sd, "visual.proj"))[0]
    emb = emb / emb.norm()
    return emb.numpy(), torch.stack(activations).numpy()


@torch.no_grad()
def reference_resnet_image(
    image: np.ndarray, sd: dict[str, np.ndarray], backbone: list[dict], heads: int
) -> np.ndarray:
    """Mean-query attention-pooled embedding of a flat conv-stem tower."""
    x = torch.from_numpy(np.ascontiguousarray(image)).unsqueeze(0)
    for i, desc in enumerate(backbone):
        if desc["kind"] == "conv":
            w = _t(sd, f"visual.stem.{i}.conv.weight")
            b = sd.get(f"visual.stem.{i}.conv.bias")
            x = F.conv2d(
                x, w, torch.from_numpy(b) if b is not None else None,
                stride=desc.get("stride", 1), padding=desc.get("padding", 0),
            )
            if f"visual.stem.{i}.bn.weight" in sd:
                x = F.batch_norm(
                    x, _t(sd, f"visual.stem.{i}.bn.running_mean"),
                    _t(sd, f"visual.stem.{i}.bn.running_var"),
                    _t(sd, f"visual.stem.{i}.bn.weight"), _t(sd, f"visual.stem.{i}.bn.bias"),
                    training=False,
                )
            if desc.get("relu", True):
                x = F.relu(x)
        elif desc["kind"] == "avgpool":
            x = F.avg_pool2d(x, desc["k"], stride=desc.get("stride", 1))
        else:
            raise ExportError(f"unknown backbone layer kind {desc['kind']!r}")
    tokens = x.flatten(2).squeeze(0).T  # [N, width]
    query = tokens.mean(dim=0, keepdim=True)

    def proj(name, v):
        return F.linear(v, _t(sd, f"visual.attnpool.{name}.weight"), _t(sd, f"visual.attnpool.{name}.bias"))

    width = tokens.shape[1]
    dh = width // heads
    q = proj("q_proj", query).reshape(1, heads, dh).transpose(0, 1)       # [h, 1, dh]
    k = proj("k_proj", tokens).reshape(-1, heads, dh).transpose(0, 1)     # [h, N, dh]
    v = proj("v_proj", tokens).reshape(-1, heads, dh).transpose(0, 1)
    alpha = torch.softmax(q @ k.transpose(1, 2) / dh**0.5, dim=-1)
    ctx = (alpha @ v).transpose(0, 1).reshape(1, width)
    emb = proj("c_proj", ctx)[0]
    emb = emb / emb.norm()
    return emb.numpy()


@torch.no_grad()
def reference_text(
    ids: list[int], eot_index: int, sd: dict[str, np.ndarray], heads: int, layers: int
) -> np.ndarray:
    x = _t(sd, "token_embedding.weight")[torch.tensor(ids, dtype=torch.long)]
    x = x + _t(sd, "positional_embedding")[: len(ids)]
    n = len(ids)
    mask = torch.full((n, n), float("-inf")).triu(1)
    for layer in range(layers):
        x = _block(x, sd, f"transformer.resblocks.{layer}", heads, mask)
    x = F.layer_norm(x, x.shape[-1:], _t(sd, "ln_final.weight"), _t(sd, "ln_final.bias"))
    emb = x[eot_index] @ _t(sd, "text_projection")
    emb = emb / emb.norm()
    return emb.numpy()


# ---------------------------------------------------------------------------
# Reference tokenizer (list-scan BPE, written independently of the engine's)
# ---------------------------------------------------------------------------

_WORD_PATTERN = re.compile(
    r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d"""
    r"""|[^\W\d_]+|\d|(?:[^\s\w]|_)+"""
)


@functools.lru_cache(maxsize=1)
def _byte_table() -> dict[int, str]:
    visible = (
        list(range(33, 127)) + list(range(161, 173)) + list(range(174, 256))
    )
    mapping = {b: chr(b) for b in visible}
    bump = 0
    for b in range(256):
        if b not in mapping:
            mapping[b] = chr(256 + bump)
            bump += 1
    return mapping


def _merge_word(parts: list[str], ranks: dict[tuple[str, str], int]) -> list[str]:
    while len(parts) > 1:
        best_rank, best = None, None
        for pair in zip(parts[:-1], parts[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best = r, pair
        if best is None:
            return parts
        # collapse every occurrence of the chosen pair, left to right
        merged: list[str] = []
        i = 0
        while i < len(parts):
            if i + 1 < len(parts) and (parts[i], parts[i + 1]) == best:
                merged.append(parts[i] + parts[i + 1])
                i += 2
            else:
                merged.append(parts[i])
                i += 1
        parts = merged
    return parts


def reference_tokenize(text: str, tokenizer: dict) -> tuple[list[int], int]:
    """Padded ids and end-of-text index for a phrase, computed from scratch."""
    vocab = tokenizer["vocab"]
    ranks = {tuple(m): i for i, m in enumerate(tokenizer["merges"])}
    context = int(tokenizer["context_length"])
    table = _byte_table()
    text = " ".join(text.lower().split())
    body: list[int] = []
    for word in _WORD_PATTERN.findall(text):
        encoded = "".join(table[b] for b in word.encode("utf-8"))
        parts = list(encoded[:-1]) + [encoded[-1] + "</w>"]
        for symbol in _merge_word(parts, ranks):
            body.append(vocab[symbol])
    body = body[: context - 2]
    ids = [vocab["<|startoftext|>"]] + body + [vocab["<|endoftext|>"]]
    eot_index = len(ids) - 1
    return ids + [0] * (context - len(ids)), eot_index
