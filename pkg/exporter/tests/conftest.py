"""Synthetic checkpoints in the real state-dict naming convention."""

import math

import pytest
import torch

from cgbexport.reference import _byte_table

MERGES = [
    ["t", "h"], ["th", "e</w>"], ["a", "n"], ["an", "d</w>"], ["i", "n</w>"],
    ["c", "a"], ["ca", "t</w>"], ["d", "o"], ["do", "g</w>"], ["o", "f</w>"],
    ["r", "e"], ["re", "d</w>"], ["m", "a"], ["ma", "n</w>"], ["o", "n</w>"],
]


def toy_tokenizer(context_length: int = 16) -> dict:
    chars = list(_byte_table().values())
    symbols = chars + [c + "</w>" for c in chars]
    symbols += ["".join(m) for m in MERGES]
    symbols += ["<|startoftext|>", "<|endoftext|>"]
    return {
        "vocab": {s: i for i, s in enumerate(symbols)},
        "merges": MERGES,
        "context_length": context_length,
    }


def _block(g: torch.Generator, prefix: str, width: int) -> dict:
    hidden = 4 * width

    def r(*shape):
        return torch.randn(*shape, generator=g) * 0.04

    return {
        f"{prefix}.ln_1.weight": torch.ones(width),
        f"{prefix}.ln_1.bias": torch.zeros(width),
        f"{prefix}.attn.in_proj_weight": r(3 * width, width),
        f"{prefix}.attn.in_proj_bias": r(3 * width),
        f"{prefix}.attn.out_proj.weight": r(width, width),
        f"{prefix}.attn.out_proj.bias": r(width),
        f"{prefix}.ln_2.weight": torch.ones(width),
        f"{prefix}.ln_2.bias": torch.zeros(width),
        f"{prefix}.mlp.c_fc.weight": r(hidden, width),
        f"{prefix}.mlp.c_fc.bias": r(hidden),
        f"{prefix}.mlp.c_proj.weight": r(width, hidden),
        f"{prefix}.mlp.c_proj.bias": r(width),
    }


def _text_tower(g: torch.Generator, width: int, layers: int, vocab: int,
                context: int, embed_dim: int) -> dict:
    def r(*shape, s=0.04):
        return torch.randn(*shape, generator=g) * s

    sd = {
        "token_embedding.weight": r(vocab, width, s=0.02),
        "positional_embedding": r(context, width, s=0.01),
        "ln_final.weight": torch.ones(width),
        "ln_final.bias": torch.zeros(width),
        "text_projection": r(width, embed_dim),
    }
    for layer in range(layers):
        sd.update(_block(g, f"transformer.resblocks.{layer}", width))
    return sd


def make_vit_checkpoint(seed: int = 0) -> dict:
    g = torch.Generator().manual_seed(seed)
    width, heads, layers, patch, grid, embed_dim = 32, 4, 2, 8, 4, 16
    tok = toy_tokenizer()

    def r(*shape, s=0.04):
        return torch.randn(*shape, generator=g) * s

    sd = {
        "visual.class_embedding": r(width, s=0.5),
        "visual.positional_embedding": r(grid * grid + 1, width, s=0.02),
        "visual.conv1.weight": r(width, 3, patch, patch),
        "visual.ln_pre.weight": torch.ones(width),
        "visual.ln_pre.bias": torch.zeros(width),
        "visual.ln_post.weight": torch.ones(width),
        "visual.ln_post.bias": torch.zeros(width),
        "visual.proj": r(width, embed_dim),
        "logit_scale": torch.tensor(math.log(4.0)),
    }
    for layer in range(layers):
        sd.update(_block(g, f"visual.transformer.resblocks.{layer}", width))
    sd.update(_text_tower(g, width, 2, len(tok["vocab"]), tok["context_length"], embed_dim))
    meta = {"model_id": "toy-vit", "heads": heads, "text_heads": heads, "tokenizer": tok}
    return {"state_dict": sd, "meta": meta}


def make_resnet_checkpoint(seed: int = 1) -> dict:
    g = torch.Generator().manual_seed(seed)
    width, heads, embed_dim = 16, 4, 16
    tok = toy_tokenizer()
    backbone = [
        {"kind": "conv", "stride": 2, "padding": 1, "k": 3, "relu": True},
        {"kind": "conv", "stride": 1, "padding": 1, "k": 3, "relu": True},
        {"kind": "conv", "stride": 2, "padding": 1, "k": 3, "relu": True},
    ]
    channels = [3, 8, 12, width]

    def r(*shape, s=0.2):
        return torch.randn(*shape, generator=g) * s

    # first layer carries batch norm, the rest plain biased convs
    sd = {
        "visual.stem.0.conv.weight": r(channels[1], channels[0], 3, 3),
        "visual.stem.0.bn.weight": 1.0 + 0.1 * torch.randn(channels[1], generator=g),
        "visual.stem.0.bn.bias": 0.1 * torch.randn(channels[1], generator=g),
        "visual.stem.0.bn.running_mean": 0.1 * torch.randn(channels[1], generator=g),
        "visual.stem.0.bn.running_var": torch.rand(channels[1], generator=g) + 0.5,
        "logit_scale": torch.tensor(math.log(4.0)),
    }
    for i in (1, 2):
        sd[f"visual.stem.{i}.conv.weight"] = r(channels[i + 1], channels[i], 3, 3)
        sd[f"visual.stem.{i}.conv.bias"] = r(channels[i + 1], s=0.1)
    for proj in ("q_proj", "k_proj", "v_proj"):
        sd[f"visual.attnpool.{proj}.weight"] = r(width, width, s=0.04)
        sd[f"visual.attnpool.{proj}.bias"] = r(width, s=0.04)
    sd["visual.attnpool.c_proj.weight"] = r(embed_dim, width, s=0.04)
    sd["visual.attnpool.c_proj.bias"] = r(embed_dim, s=0.04)
    sd.update(_text_tower(g, 32, 2, len(tok["vocab"]), tok["context_length"], embed_dim))
    meta = {
        "model_id": "toy-resnet",
        "heads": heads,
        "text_heads": 4,
        "input_resolution": 32,
        "backbone": backbone,
        "tokenizer": tok,
    }
    return {"state_dict": sd, "meta": meta}


@pytest.fixture(scope="session")
def vit_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy_vit.pt"
    torch.save(make_vit_checkpoint(), path)
    return path


@pytest.fixture(scope="session")
def resnet_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy_resnet.pt"
    torch.save(make_resnet_checkpoint(), path)
    return path
