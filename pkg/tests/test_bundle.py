import numpy as np
import pytest

from groundkit.bundle import MAGIC, load_bundle, save_bundle, validate_bundle
from groundkit.errors import (
    BundleCorruptionError,
    BundleFormatError,
    UnsupportedArchError,
)
from groundkit.synth import make_toy_resnet_bundle, make_toy_vit_bundle


def test_round_trip_bitwise(tmp_path, vit_bundle):
    p = tmp_path / "toy.cgb"
    save_bundle(vit_bundle, p)
    loaded = load_bundle(p)
    assert loaded.arch == vit_bundle.arch
    assert loaded.dims == vit_bundle.dims
    assert set(loaded.tensors) == set(vit_bundle.tensors)
    for name, t in vit_bundle.tensors.items():
        assert np.array_equal(loaded.tensors[name], t.astype(np.float32)), name
    assert loaded.sigma_default == vit_bundle.sigma_default
    assert loaded.tokenizer.vocab == vit_bundle.tokenizer.vocab
    assert loaded.tokenizer.merges == vit_bundle.tokenizer.merges


def test_save_is_deterministic(tmp_path, vit_bundle):
    a, b = tmp_path / "a.cgb", tmp_path / "b.cgb"
    save_bundle(vit_bundle, a)
    save_bundle(vit_bundle, b)
    assert a.read_bytes() == b.read_bytes()


def test_resnet_round_trip_keeps_backbone(tmp_path, resnet_bundle):
    p = tmp_path / "toy_rn.cgb"
    save_bundle(resnet_bundle, p)
    loaded = load_bundle(p)
    assert loaded.arch == "resnet"
    assert loaded.backbone == resnet_bundle.backbone


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.cgb"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(BundleFormatError):
        load_bundle(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "trunc.cgb"
    p.write_bytes(MAGIC + (10**6).to_bytes(8, "little") + b"{}")
    with pytest.raises(BundleCorruptionError):
        load_bundle(p)


def test_malformed_json_header(tmp_path):
    blob = b"not json at all"
    p = tmp_path / "mal.cgb"
    p.write_bytes(MAGIC + len(blob).to_bytes(8, "little") + blob)
    with pytest.raises(BundleFormatError):
        load_bundle(p)


def test_truncated_payload(tmp_path, vit_bundle):
    p = tmp_path / "cut.cgb"
    save_bundle(vit_bundle, p)
    data = p.read_bytes()
    p.write_bytes(data[:-100])
    with pytest.raises(BundleCorruptionError):
        load_bundle(p)


def test_unsupported_arch(tmp_path, vit_bundle):
    p = tmp_path / "arch.cgb"
    save_bundle(vit_bundle, p)
    data = bytearray(p.read_bytes())
    idx = data.find(b'"arch":"vit"')
    data[idx : idx + len(b'"arch":"vit"')] = b'"arch":"xxx"'
    p.write_bytes(bytes(data))
    with pytest.raises(UnsupportedArchError):
        load_bundle(p)


def test_missing_tensor_accessor(vit_bundle):
    with pytest.raises(BundleCorruptionError):
        vit_bundle.tensor("visual.does_not_exist")


def test_validate_clean_bundles():
    assert validate_bundle(make_toy_vit_bundle()) == []
    assert validate_bundle(make_toy_resnet_bundle()) == []


def test_validate_flags_nonfinite():
    b = make_toy_vit_bundle()
    b.tensors["visual.proj"] = b.tensors["visual.proj"].copy()
    b.tensors["visual.proj"][0, 0] = np.nan
    report = validate_bundle(b)
    assert any("non-finite" in r for r in report)


def test_validate_flags_bad_sigma():
    b = make_toy_vit_bundle()
    b.sigma_default = -1.0
    assert any("sigma" in r for r in validate_bundle(b))


def test_validate_flags_positional_embedding_length():
    b = make_toy_vit_bundle()
    pos = b.tensors["visual.positional_embedding"]
    b.tensors["visual.positional_embedding"] = pos[:-1]
    assert any("positional" in r for r in validate_bundle(b))


def test_validate_flags_heads_width_mismatch():
    b = make_toy_vit_bundle()
    b.dims = dict(b.dims, heads=5)  # 5 does not divide 32
    assert any("heads" in r for r in validate_bundle(b))


def test_grid_size(vit_bundle):
    assert vit_bundle.grid_size == 4
