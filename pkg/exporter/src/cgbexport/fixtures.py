"""Parity fixture archives: reference outputs the engine must reproduce.

``emit_parity_fixtures`` runs the torch reference model on deterministic
sample images and phrases and writes an archive of raw float dumps plus a
JSON index (embeddings, per-layer class-token activations, token ids).
``check_parity`` replays the same inputs through the numpy engine and
reports cosine agreement and token-id matches.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .convert import convert_state_dict, load_checkpoint
from .errors import ExportError
from .reference import (
    reference_resnet_image,
    reference_text,
    reference_tokenize,
    reference_vit_image,
)

FIXTURE_FORMAT = "cgb-parity-v1"

DEFAULT_PHRASES = [
    "the cat",
    "a red dog",
    "the man on the red mat",
    "a dog and a cat",
]


def _write_raw(values: np.ndarray, path: Path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(np.uint32(arr.ndim).tobytes())
        f.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        f.write(np.uint32(4).tobytes())
        f.write(arr.tobytes())


def _read_raw(path: Path) -> np.ndarray:
    data = path.read_bytes()
    ndim = int(np.frombuffer(data, dtype="<u4", count=1)[0])
    shape = tuple(np.frombuffer(data, dtype="<u4", count=ndim, offset=4))
    return np.frombuffer(data, dtype="<f4", offset=8 + 4 * ndim).reshape(shape).copy()


def _sample_images(n: int, resolution: int, seed: int) -> np.ndarray:
    """Smooth deterministic [n, 3, R, R] images in [0, 1]."""
    rng = np.random.default_rng(seed)
    coarse = rng.random((n, 3, max(2, resolution // 8), max(2, resolution // 8)))
    smooth = F.interpolate(
        torch.from_numpy(coarse), size=(resolution, resolution),
        mode="bilinear", align_corners=False,
    )
    return smooth.numpy().astype(np.float32)


def _normalize_image(image: np.ndarray, preprocess: dict) -> np.ndarray:
    mean = np.asarray(preprocess["mean"], dtype=np.float32)[:, None, None]
    std = np.asarray(preprocess["std"], dtype=np.float32)[:, None, None]
    return ((image - mean) / std).astype(np.float32)


def emit_parity_fixtures(
    checkpoint_path: str | Path,
    out_dir: str | Path,
    phrases: list[str] | None = None,
    n_images: int = 2,
    seed: int = 0,
    tokenizer_path: str | Path | None = None,
) -> dict:
    """Write a fixture archive for a checkpoint; returns the index dict."""
    sd, meta = load_checkpoint(checkpoint_path)
    bundle = convert_state_dict(sd, meta, tokenizer_path)
    dims = bundle.dims
    tok = {
        "vocab": bundle.tokenizer.vocab,
        "merges": [list(m) for m in bundle.tokenizer.merges],
        "context_length": bundle.tokenizer.context_length,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    phrases = DEFAULT_PHRASES if phrases is None else phrases

    index: dict = {
        "format": FIXTURE_FORMAT,
        "model_id": meta.get("model_id", Path(checkpoint_path).stem),
        "arch": bundle.arch,
        "seed": seed,
        "images": [],
        "texts": [],
    }
    images = _sample_images(n_images, dims["input_resolution"], seed)
    for i, image in enumerate(images):
        name = f"image_{i:03d}"
        normalized = _normalize_image(image, bundle.preprocess)
        entry = {"name": name, "file": f"{name}.raw", "embedding": f"{name}.emb.raw"}
        if bundle.arch == "vit":
            emb, acts = reference_vit_image(normalized, sd, dims["heads"], dims["layers"])
            entry["activations"] = f"{name}.act.raw"
            _write_raw(acts, out / entry["activations"])
        else:
            emb = reference_resnet_image(normalized, sd, bundle.backbone, dims["heads"])
            entry["activations"] = None
        _write_raw(image, out / entry["file"])
        _write_raw(emb, out / entry["embedding"])
        index["images"].append(entry)

    for i, phrase in enumerate(phrases):
        ids, eot_index = reference_tokenize(phrase, tok)
        emb = reference_text(
            ids, eot_index, sd, dims["text_heads"], dims["text_layers"]
        )
        entry = {
            "phrase": phrase,
            "ids": ids,
            "eot_index": eot_index,
            "embedding": f"text_{i:03d}.emb.raw",
        }
        _write_raw(emb, out / entry["embedding"])
        index["texts"].append(entry)

    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def check_parity(bundle, fixture_dir: str | Path) -> dict:
    """Replay a fixture archive through the engine; returns a report dict.

    Report rows carry cosine similarities for image/text embeddings (and the
    minimum per-layer class-token cosine for transformer towers) plus exact
    token-id comparison results.
    """
    from groundkit.attention import (
        TokenGrid,
        attention_pool,
        block_weights_from_bundle,
        class_token_update,
        resnet_class_token,
    )
    from groundkit.features import (
        resnet_attnpool_weights,
        resnet_backbone,
        vit_image_embedding,
        vit_patchify,
    )
    from groundkit.tensor_ops import l2_normalize, layer_norm
    from groundkit.text_encoder import encode_text
    from groundkit.tokenizer import BpeTokenizer, TokenSequence

    root = Path(fixture_dir)
    index = json.loads((root / "index.json").read_text())
    if index.get("format") != FIXTURE_FORMAT:
        raise ExportError(f"{root}: unknown fixture format")
    report: dict = {"images": [], "texts": []}

    for entry in index["images"]:
        image = _normalize_image(_read_raw(root / entry["file"]), bundle.preprocess)
        row = {"name": entry["name"]}
        if bundle.arch == "vit":
            emb = vit_image_embedding(image, bundle)
            grid = vit_patchify(image, bundle)
            tokens = layer_norm(
                grid.tokens,
                bundle.tensor("visual.ln_pre.weight"),
                bundle.tensor("visual.ln_pre.bias"),
            )
            grid = TokenGrid(tokens, grid.grid_h, grid.grid_w)
            acts = [grid.tokens[0].copy()]
            for layer in range(bundle.dims["layers"]):
                grid = class_token_update(
                    grid, block_weights_from_bundle(bundle, "visual", layer, bundle.dims["heads"])
                )
                acts.append(grid.tokens[0].copy())
            ref_acts = _read_raw(root / entry["activations"])
            row["activation_cosine_min"] = min(
                _cosine(a, r) for a, r in zip(acts, ref_acts)
            )
        else:  # resnet route: closed-form tower, mean-token attention pool
            feats = resnet_backbone(image, bundle, dilated=False)
            c = feats.shape[0]
            tokens = feats.reshape(c, -1).T
            pooled = attention_pool(
                resnet_class_token(tokens), tokens, resnet_attnpool_weights(bundle)
            )
            emb = l2_normalize(pooled)
        row["cosine"] = _cosine(emb, _read_raw(root / entry["embedding"]))
        report["images"].append(row)

    tokenizer = BpeTokenizer(bundle.tokenizer)
    for entry in index["texts"]:
        seq = tokenizer.tokenize(entry["phrase"])
        emb = encode_text(
            TokenSequence(ids=entry["ids"], eot_index=entry["eot_index"]), bundle
        )
        report["texts"].append(
            {
                "phrase": entry["phrase"],
                "ids_match": seq.ids == entry["ids"] and seq.eot_index == entry["eot_index"],
                "cosine": _cosine(emb, _read_raw(root / entry["embedding"])),
            }
        )
    return report
