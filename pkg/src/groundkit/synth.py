"""Synthetic random-weight bundles for tests, demos, and benchmarks."""

from __future__ import annotations

import numpy as np

from .bundle import TokenizerData, WeightsBundle
from .tokenizer import EOT_TOKEN, SOT_TOKEN, bytes_to_unicode

_TOY_MERGES = [
    ("t", "h"), ("th", "e</w>"), ("a", "n"), ("an", "d</w>"), ("i", "n</w>"),
    ("c", "a"), ("ca", "t</w>"), ("d", "o"), ("do", "g</w>"), ("o", "f</w>"),
    ("r", "e"), ("re", "d</w>"), ("m", "a"), ("ma", "n</w>"), ("o", "n</w>"),
]


def make_toy_tokenizer(context_length: int = 16) -> TokenizerData:
    """Byte-level vocab plus a handful of merges; ids are stable."""
    chars = list(bytes_to_unicode().values())
    symbols = chars + [c + "</w>" for c in chars]
    symbols += ["".join(m) for m in _TOY_MERGES]
    symbols += [SOT_TOKEN, EOT_TOKEN]
    vocab = {s: i for i, s in enumerate(symbols)}
    return TokenizerData(vocab=vocab, merges=list(_TOY_MERGES), context_length=context_length)


def _rand(rng: np.random.Generator, *shape: int, scale: float = 0.04) -> np.ndarray:
    return (rng.standard_normal(shape) * scale).astype(np.float32)


def _block_tensors(rng: np.random.Generator, prefix: str, width: int) -> dict[str, np.ndarray]:
    hidden = 4 * width
    return {
        f"{prefix}.ln_1.weight": np.ones(width, dtype=np.float32),
        f"{prefix}.ln_1.bias": np.zeros(width, dtype=np.float32),
        f"{prefix}.attn.in_proj_weight": _rand(rng, 3 * width, width),
        f"{prefix}.attn.in_proj_bias": _rand(rng, 3 * width),
        f"{prefix}.attn.out_proj.weight": _rand(rng, width, width),
        f"{prefix}.attn.out_proj.bias": _rand(rng, width),
        f"{prefix}.ln_2.weight": np.ones(width, dtype=np.float32),
        f"{prefix}.ln_2.bias": np.zeros(width, dtype=np.float32),
        f"{prefix}.mlp.c_fc.weight": _rand(rng, hidden, width),
        f"{prefix}.mlp.c_fc.bias": _rand(rng, hidden),
        f"{prefix}.mlp.c_proj.weight": _rand(rng, width, hidden),
        f"{prefix}.mlp.c_proj.bias": _rand(rng, width),
    }


def _text_tensors(rng: np.random.Generator, dims: dict, vocab_size: int) -> dict[str, np.ndarray]:
    tw = dims["text_width"]
    tensors = {
        "text.token_embedding": _rand(rng, vocab_size, tw, scale=0.02),
        "text.positional_embedding": _rand(rng, dims["context_length"], tw, scale=0.01),
        "text.ln_final.weight": np.ones(tw, dtype=np.float32),
        "text.ln_final.bias": np.zeros(tw, dtype=np.float32),
        "text.projection": _rand(rng, tw, dims["embed_dim"]),
    }
    for layer in range(dims["text_layers"]):
        tensors.update(_block_tensors(rng, f"text.blocks.{layer}", tw))
    return tensors


def make_toy_vit_bundle(
    seed: int = 0,
    width: int = 32,
    heads: int = 4,
    layers: int = 2,
    embed_dim: int = 16,
    patch_size: int = 8,
    input_resolution: int = 32,
    text_layers: int = 2,
    context_length: int = 16,
    sigma: float = 0.25,
) -> WeightsBundle:
    rng = np.random.default_rng(seed)
    tokenizer = make_toy_tokenizer(context_length)
    grid = input_resolution // patch_size
    dims = {
        "embed_dim": embed_dim,
        "width": width,
        "layers": layers,
        "heads": heads,
        "patch_size": patch_size,
        "input_resolution": input_resolution,
        "text_width": width,
        "text_layers": text_layers,
        "text_heads": heads,
        "context_length": context_length,
        "vocab_size": len(tokenizer.vocab),
    }
    tensors = {
        "visual.class_embedding": _rand(rng, width, scale=0.5),
        "visual.positional_embedding": _rand(rng, grid * grid + 1, width, scale=0.02),
        "visual.conv1.weight": _rand(rng, width, 3, patch_size, patch_size),
        "visual.ln_pre.weight": np.ones(width, dtype=np.float32),
        "visual.ln_pre.bias": np.zeros(width, dtype=np.float32),
        "visual.ln_post.weight": np.ones(width, dtype=np.float32),
        "visual.ln_post.bias": np.zeros(width, dtype=np.float32),
        "visual.proj": _rand(rng, width, embed_dim),
    }
    for layer in range(layers):
        tensors.update(_block_tensors(rng, f"visual.blocks.{layer}", width))
    tensors.update(_text_tensors(rng, dims, len(tokenizer.vocab)))
    return WeightsBundle(
        arch="vit",
        dims=dims,
        tensors=tensors,
        sigma_default=sigma,
        preprocess={"mean": [0.481, 0.458, 0.408], "std": [0.269, 0.261, 0.276]},
        tokenizer=tokenizer,
    )


def make_toy_resnet_bundle(
    seed: int = 0,
    width: int = 16,
    heads: int = 4,
    embed_dim: int = 16,
    input_resolution: int = 32,
    text_layers: int = 2,
    context_length: int = 16,
    sigma: float = 0.25,
) -> WeightsBundle:
    """Three conv blocks with two stride-2 stages plus an attention pool."""
    rng = np.random.default_rng(seed)
    tokenizer = make_toy_tokenizer(context_length)
    backbone = [
        {"kind": "conv", "stride": 2, "padding": 1, "k": 3, "relu": True},
        {"kind": "conv", "stride": 1, "padding": 1, "k": 3, "relu": True},
        {"kind": "conv", "stride": 2, "padding": 1, "k": 3, "relu": True},
    ]
    channels = [3, 8, 12, width]
    dims = {
        "embed_dim": embed_dim,
        "width": width,
        "layers": len(backbone),
        "heads": heads,
        "patch_size": 4,  # total downsample of the backbone
        "input_resolution": input_resolution,
        "text_width": 32,
        "text_layers": text_layers,
        "text_heads": heads,
        "context_length": context_length,
        "vocab_size": len(tokenizer.vocab),
    }
    tensors: dict[str, np.ndarray] = {}
    for i, desc in enumerate(backbone):
        tensors[f"visual.layers.{i}.weight"] = _rand(
            rng, channels[i + 1], channels[i], desc["k"], desc["k"], scale=0.2
        )
        tensors[f"visual.layers.{i}.bias"] = _rand(rng, channels[i + 1], scale=0.1)
    for name in ("q_proj", "k_proj", "v_proj"):
        tensors[f"visual.attnpool.{name}.weight"] = _rand(rng, width, width)
        tensors[f"visual.attnpool.{name}.bias"] = _rand(rng, width)
    tensors["visual.attnpool.c_proj.weight"] = _rand(rng, embed_dim, width)
    tensors["visual.attnpool.c_proj.bias"] = _rand(rng, embed_dim)
    tensors.update(_text_tensors(rng, dims, len(tokenizer.vocab)))
    return WeightsBundle(
        arch="resnet",
        dims=dims,
        tensors=tensors,
        sigma_default=sigma,
        preprocess={"mean": [0.481, 0.458, 0.408], "std": [0.269, 0.261, 0.276]},
        tokenizer=tokenizer,
        backbone=backbone,
    )
