import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from groundkit.bundle import load_bundle, validate_bundle

from cgbexport.convert import (
    _fold_batch_norm,
    convert_state_dict,
    export_checkpoint,
    load_checkpoint,
)
from cgbexport.errors import ExportError, UnsupportedVariantError
from conftest import make_vit_checkpoint, toy_tokenizer


def test_export_vit_loads_clean(vit_ckpt, tmp_path):
    out = tmp_path / "vit.cgb"
    manifest = export_checkpoint(vit_ckpt, out)
    bundle = load_bundle(out)
    assert validate_bundle(bundle) == []
    assert bundle.arch == "vit"
    assert manifest["tensor_count"] == len(bundle.tensors)
    assert (tmp_path / "vit.cgb.manifest.json").exists()


def test_tensor_name_mapping(vit_ckpt, tmp_path):
    sd, _ = load_checkpoint(vit_ckpt)
    out = tmp_path / "vit.cgb"
    export_checkpoint(vit_ckpt, out)
    bundle = load_bundle(out)
    pairs = [
        ("visual.transformer.resblocks.0.ln_1.weight", "visual.blocks.0.ln_1.weight"),
        ("visual.transformer.resblocks.1.attn.in_proj_weight", "visual.blocks.1.attn.in_proj_weight"),
        ("transformer.resblocks.0.mlp.c_fc.weight", "text.blocks.0.mlp.c_fc.weight"),
        ("token_embedding.weight", "text.token_embedding"),
        ("positional_embedding", "text.positional_embedding"),
        ("ln_final.weight", "text.ln_final.weight"),
        ("text_projection", "text.projection"),
        ("visual.class_embedding", "visual.class_embedding"),
        ("visual.proj", "visual.proj"),
    ]
    for src, dst in pairs:
        assert np.array_equal(sd[src].astype(np.float32), bundle.tensors[dst])
    assert "logit_scale" not in bundle.tensors


def test_sigma_from_logit_scale(vit_ckpt, tmp_path):
    export_checkpoint(vit_ckpt, tmp_path / "b.cgb")
    bundle = load_bundle(tmp_path / "b.cgb")
    assert abs(bundle.sigma_default - 1.0 / math.exp(math.log(4.0))) < 1e-9
    assert abs(bundle.sigma_default - 0.25) < 1e-9


def test_inferred_dims(vit_ckpt, tmp_path):
    export_checkpoint(vit_ckpt, tmp_path / "b.cgb")
    dims = load_bundle(tmp_path / "b.cgb").dims
    assert dims["width"] == 32
    assert dims["patch_size"] == 8
    assert dims["input_resolution"] == 32
    assert dims["layers"] == 2
    assert dims["text_layers"] == 2
    assert dims["context_length"] == 16
    assert dims["embed_dim"] == 16


def test_export_deterministic(vit_ckpt, tmp_path):
    a, b = tmp_path / "a.cgb", tmp_path / "b.cgb"
    export_checkpoint(vit_ckpt, a)
    export_checkpoint(vit_ckpt, b)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.cgb.manifest.json").read_text() == (
        tmp_path / "b.cgb.manifest.json"
    ).read_text()


def test_residual_stages_rejected():
    ckpt = make_vit_checkpoint()
    sd = {k: np.asarray(v) for k, v in ckpt["state_dict"].items()}
    sd["visual.layer1.0.conv1.weight"] = np.zeros((4, 4, 3, 3), dtype=np.float32)
    with pytest.raises(UnsupportedVariantError):
        convert_state_dict(sd, ckpt["meta"])


def test_patch_embedding_bias_rejected():
    ckpt = make_vit_checkpoint()
    sd = {k: np.asarray(v) for k, v in ckpt["state_dict"].items()}
    sd["visual.conv1.bias"] = np.zeros(32, dtype=np.float32)
    with pytest.raises(UnsupportedVariantError):
        convert_state_dict(sd, ckpt["meta"])


def test_missing_tokenizer_rejected():
    ckpt = make_vit_checkpoint()
    sd = {k: np.asarray(v) for k, v in ckpt["state_dict"].items()}
    meta = {k: v for k, v in ckpt["meta"].items() if k != "tokenizer"}
    with pytest.raises(ExportError):
        convert_state_dict(sd, meta)


def test_missing_text_tensor_rejected():
    ckpt = make_vit_checkpoint()
    sd = {
        k: np.asarray(v)
        for k, v in ckpt["state_dict"].items()
        if k != "text_projection"
    }
    with pytest.raises(ExportError):
        convert_state_dict(sd, ckpt["meta"])


def test_tokenizer_json_override(vit_ckpt, tmp_path):
    import json

    tok = toy_tokenizer(context_length=12)
    tok_path = tmp_path / "tok.json"
    tok_path.write_text(json.dumps(tok))
    export_checkpoint(vit_ckpt, tmp_path / "b.cgb", tokenizer_path=tok_path)
    # context_length stays consistent with the checkpoint's positional table
    bundle = load_bundle(tmp_path / "b.cgb")
    assert bundle.tokenizer.context_length == 12


def test_fold_batch_norm_matches_torch():
    g = torch.Generator().manual_seed(7)
    w = torch.randn(6, 3, 3, 3, generator=g)
    b = torch.randn(6, generator=g)
    bn = {
        "weight": torch.randn(6, generator=g).numpy() * 0.1 + 1.0,
        "bias": torch.randn(6, generator=g).numpy() * 0.1,
        "running_mean": torch.randn(6, generator=g).numpy() * 0.1,
        "running_var": (torch.rand(6, generator=g) + 0.5).numpy(),
    }
    x = torch.randn(1, 3, 10, 10, generator=g)
    want = F.batch_norm(
        F.conv2d(x, w, b, padding=1),
        torch.from_numpy(bn["running_mean"]).float(),
        torch.from_numpy(bn["running_var"]).float(),
        torch.from_numpy(bn["weight"]).float(),
        torch.from_numpy(bn["bias"]).float(),
        training=False,
        eps=1e-5,
    )
    fw, fb = _fold_batch_norm(w.numpy(), b.numpy(), {k: v.astype(np.float64) for k, v in bn.items()}, 1e-5)
    got = F.conv2d(x, torch.from_numpy(fw), torch.from_numpy(fb), padding=1)
    assert torch.allclose(want, got, atol=1e-5)


def test_export_resnet_loads_clean(resnet_ckpt, tmp_path):
    out = tmp_path / "rn.cgb"
    export_checkpoint(resnet_ckpt, out)
    bundle = load_bundle(out)
    assert validate_bundle(bundle) == []
    assert bundle.arch == "resnet"
    assert bundle.dims["patch_size"] == 4  # product of backbone strides
    assert len(bundle.backbone) == 3
    assert "visual.layers.0.bias" in bundle.tensors  # folded from batch norm


def test_resnet_without_plan_rejected(resnet_ckpt):
    sd, meta = load_checkpoint(resnet_ckpt)
    meta = {k: v for k, v in meta.items() if k != "backbone"}
    with pytest.raises(ExportError):
        convert_state_dict(sd, meta)
