"""Checkpoint -> CGB1 bundle conversion.

Input is a torch-saved file holding either a bare state dict (real-checkpoint
naming: ``visual.transformer.resblocks.N.*``, ``transformer.resblocks.N.*``,
``token_embedding.weight``, ...) or ``{"state_dict": ..., "meta": ...}``.
Tensor names are remapped to the bundle scheme, batch norms in flat conv
stems are folded into the preceding conv, and the score-map temperature is
derived from the checkpoint's logit scale (sigma = 1 / exp(logit_scale)).
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np
import torch
from groundkit.bundle import TokenizerData, WeightsBundle, save_bundle, validate_bundle

from .errors import ExportError, UnsupportedVariantError
from .manifest import build_manifest, write_manifest

# Channel statistics of the reference preprocessing pipeline.
DEFAULT_PREPROCESS = {
    "mean": [0.48145466, 0.4578275, 0.40821073],
    "std": [0.26862954, 0.26130258, 0.27577711],
}

_VIS_BLOCK = re.compile(r"^visual\.transformer\.resblocks\.(\d+)\.(.+)$")
_TXT_BLOCK = re.compile(r"^transformer\.resblocks\.(\d+)\.(.+)$")
_STEM_CONV = re.compile(r"^visual\.stem\.(\d+)\.conv\.(weight|bias)$")
_STEM_BN = re.compile(r"^visual\.stem\.(\d+)\.bn\.(weight|bias|running_mean|running_var)$")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a torch checkpoint into float32 numpy tensors plus its meta dict."""
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ExportError(f"{path}: cannot read checkpoint: {e}") from e
    if isinstance(obj, dict) and "state_dict" in obj:
        sd, meta = obj["state_dict"], dict(obj.get("meta", {}))
    elif isinstance(obj, dict):
        sd, meta = obj, {}
    else:
        raise ExportError(f"{path}: checkpoint is not a state dict")
    tensors = {}
    for name, t in sd.items():
        if not isinstance(t, torch.Tensor):
            raise ExportError(f"{path}: entry {name!r} is not a tensor")
        tensors[name] = t.detach().to(torch.float32).cpu().numpy()
    return tensors, meta


def _tokenizer_from_meta(meta: dict, tokenizer_path: str | Path | None) -> TokenizerData:
    if tokenizer_path is not None:
        data = json.loads(Path(tokenizer_path).read_text())
    elif "tokenizer" in meta:
        data = meta["tokenizer"]
    else:
        raise ExportError(
            "no tokenizer data: supply a tokenizer JSON or embed it in the checkpoint meta"
        )
    try:
        return TokenizerData(
            vocab={k: int(v) for k, v in data["vocab"].items()},
            merges=[tuple(m) for m in data["merges"]],
            context_length=int(data["context_length"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ExportError(f"malformed tokenizer data: {e}") from e


def _sigma_from(sd: dict[str, np.ndarray], meta: dict) -> float:
    if "sigma" in meta:
        return float(meta["sigma"])
    if "logit_scale" in sd:
        return 1.0 / math.exp(float(sd["logit_scale"]))
    raise ExportError("checkpoint has no logit_scale and meta carries no sigma")


def _detect_arch(sd: dict[str, np.ndarray]) -> str:
    for name in sd:
        if name.startswith("visual.layer1.") or name.startswith("visual.layer2."):
            raise UnsupportedVariantError(
                "residual bottleneck stages are not representable in the bundle's "
                "flat backbone plan"
            )
    if "visual.class_embedding" in sd:
        return "vit"
    if "visual.attnpool.q_proj.weight" in sd:
        return "resnet"
    raise UnsupportedVariantError("unrecognized visual tower layout")


def _map_text_tower(sd: dict[str, np.ndarray], out: dict[str, np.ndarray]) -> int:
    """Move text-tower tensors into the bundle namespace; returns layer count."""
    direct = {
        "token_embedding.weight": "text.token_embedding",
        "positional_embedding": "text.positional_embedding",
        "ln_final.weight": "text.ln_final.weight",
        "ln_final.bias": "text.ln_final.bias",
        "text_projection": "text.projection",
    }
    layers = 0
    for name, t in sd.items():
        if name in direct:
            out[direct[name]] = t
            continue
        m = _TXT_BLOCK.match(name)
        if m:
            out[f"text.blocks.{m.group(1)}.{m.group(2)}"] = t
            layers = max(layers, int(m.group(1)) + 1)
    for target in direct.values():
        if target not in out:
            raise ExportError(f"text tower is missing tensor for '{target}'")
    if layers == 0:
        raise ExportError("text tower has no transformer blocks")
    return layers


def _fold_batch_norm(
    w: np.ndarray, b: np.ndarray | None, bn: dict[str, np.ndarray], eps: float
) -> tuple[np.ndarray, np.ndarray]:
    scale = bn["weight"] / np.sqrt(bn["running_var"] + eps)
    folded_w = w * scale[:, None, None, None]
    base = b if b is not None else np.zeros_like(bn["running_mean"])
    folded_b = bn["bias"] + (base - bn["running_mean"]) * scale
    return folded_w.astype(np.float32), folded_b.astype(np.float32)


def _convert_vit(sd: dict[str, np.ndarray], meta: dict) -> tuple[dict[str, np.ndarray], dict]:
    if "visual.conv1.bias" in sd:
        raise UnsupportedVariantError("patch embedding with bias is not supported")
    out: dict[str, np.ndarray] = {}
    passthrough = (
        "visual.class_embedding",
        "visual.positional_embedding",
        "visual.conv1.weight",
        "visual.ln_pre.weight",
        "visual.ln_pre.bias",
        "visual.ln_post.weight",
        "visual.ln_post.bias",
        "visual.proj",
    )
    for name in passthrough:
        if name not in sd:
            raise ExportError(f"vit checkpoint is missing tensor '{name}'")
        out[name] = sd[name]
    vis_layers = 0
    for name, t in sd.items():
        m = _VIS_BLOCK.match(name)
        if m:
            out[f"visual.blocks.{m.group(1)}.{m.group(2)}"] = t
            vis_layers = max(vis_layers, int(m.group(1)) + 1)
    if vis_layers == 0:
        raise ExportError("visual tower has no transformer blocks")
    text_layers = _map_text_tower(sd, out)

    width = int(sd["visual.class_embedding"].shape[0])
    patch = int(sd["visual.conv1.weight"].shape[-1])
    n_pos = int(sd["visual.positional_embedding"].shape[0]) - 1
    grid = int(round(math.sqrt(n_pos)))
    if grid * grid != n_pos:
        raise ExportError(f"positional embedding grid of {n_pos} tokens is not square")
    text_width = int(sd["token_embedding.weight"].shape[1])
    dims = {
        "embed_dim": int(sd["text_projection"].shape[1]),
        "width": width,
        "layers": vis_layers,
        "heads": int(meta.get("heads", width // 64)),
        "patch_size": patch,
        "input_resolution": grid * patch,
        "text_width": text_width,
        "text_layers": text_layers,
        "text_heads": int(meta.get("text_heads", text_width // 64)),
        "context_length": int(sd["positional_embedding"].shape[0]),
        "vocab_size": int(sd["token_embedding.weight"].shape[0]),
    }
    return out, dims


def _convert_resnet(
    sd: dict[str, np.ndarray], meta: dict
) -> tuple[dict[str, np.ndarray], dict, list[dict]]:
    backbone = meta.get("backbone")
    if not backbone:
        raise ExportError("resnet checkpoint meta must carry the backbone plan")
    eps = float(meta.get("bn_eps", 1e-5))
    out: dict[str, np.ndarray] = {}
    for i, desc in enumerate(backbone):
        if desc["kind"] != "conv":
            continue
        w = sd.get(f"visual.stem.{i}.conv.weight")
        if w is None:
            raise ExportError(f"backbone plan layer {i} has no conv weight in the checkpoint")
        b = sd.get(f"visual.stem.{i}.conv.bias")
        bn = {
            part: sd[f"visual.stem.{i}.bn.{part}"]
            for part in ("weight", "bias", "running_mean", "running_var")
            if f"visual.stem.{i}.bn.{part}" in sd
        }
        if bn:
            if len(bn) != 4:
                raise ExportError(f"backbone layer {i} has incomplete batch-norm statistics")
            w, b = _fold_batch_norm(w, b, bn, eps)
        elif b is None:
            b = np.zeros(w.shape[0], dtype=np.float32)
        out[f"visual.layers.{i}.weight"] = w
        out[f"visual.layers.{i}.bias"] = b
    for proj in ("q_proj", "k_proj", "v_proj", "c_proj"):
        for part in ("weight", "bias"):
            name = f"visual.attnpool.{proj}.{part}"
            if name not in sd:
                raise ExportError(f"attention pool is missing tensor '{name}'")
            out[name] = sd[name]
    text_layers = _map_text_tower(sd, out)

    width = int(sd["visual.attnpool.q_proj.weight"].shape[0])
    downsample = 1
    for desc in backbone:
        downsample *= int(desc.get("stride", 1))
    text_width = int(sd["token_embedding.weight"].shape[1])
    dims = {
        "embed_dim": int(sd["visual.attnpool.c_proj.weight"].shape[0]),
        "width": width,
        "layers": len(backbone),
        "heads": int(meta.get("heads", width // 64)),
        "patch_size": downsample,
        "input_resolution": int(meta.get("input_resolution", 224)),
        "text_width": text_width,
        "text_layers": text_layers,
        "text_heads": int(meta.get("text_heads", text_width // 64)),
        "context_length": int(sd["positional_embedding"].shape[0]),
        "vocab_size": int(sd["token_embedding.weight"].shape[0]),
    }
    return out, dims, [dict(d) for d in backbone]


def convert_state_dict(
    sd: dict[str, np.ndarray], meta: dict, tokenizer_path: str | Path | None = None
) -> WeightsBundle:
    """Remap a checkpoint state dict into an in-memory bundle."""
    arch = _detect_arch(sd)
    if arch == "vit":
        tensors, dims = _convert_vit(sd, meta)
        backbone: list[dict] = []
    else:
        tensors, dims, backbone = _convert_resnet(sd, meta)
    bundle = WeightsBundle(
        arch=arch,
        dims=dims,
        tensors=tensors,
        sigma_default=_sigma_from(sd, meta),
        preprocess=meta.get("preprocess", DEFAULT_PREPROCESS),
        tokenizer=_tokenizer_from_meta(meta, tokenizer_path),
        backbone=backbone,
    )
    violations = validate_bundle(bundle)
    if violations:
        raise ExportError("converted bundle failed validation: " + "; ".join(violations))
    return bundle


def export_checkpoint(
    checkpoint_path: str | Path,
    out_path: str | Path,
    manifest_path: str | Path | None = None,
    tokenizer_path: str | Path | None = None,
    model_id: str | None = None,
) -> dict:
    """Convert a checkpoint file to a CGB1 bundle plus its manifest.

    Returns the manifest dict. The manifest is written next to the bundle
    (``<out>.manifest.json``) unless a path is given.
    """
    sd, meta = load_checkpoint(checkpoint_path)
    bundle = convert_state_dict(sd, meta, tokenizer_path)
    save_bundle(bundle, out_path)
    source = model_id or meta.get("model_id") or Path(checkpoint_path).stem
    manifest = build_manifest(out_path, source)
    if manifest_path is None:
        manifest_path = str(out_path) + ".manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest
