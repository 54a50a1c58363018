import hashlib
import json

import pytest

from cgbexport.convert import export_checkpoint
from cgbexport.errors import ManifestMismatchError
from cgbexport.manifest import (
    build_manifest,
    load_manifest,
    tokenizer_digest,
    verify_manifest,
)


@pytest.fixture(scope="module")
def exported(vit_ckpt, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle") / "vit.cgb"
    manifest = export_checkpoint(vit_ckpt, out)
    return out, manifest


def test_checksums_match_payload_bytes(exported):
    bundle_path, manifest = exported
    raw = bundle_path.read_bytes()
    header_len = int.from_bytes(raw[4:12], "little")
    header = json.loads(raw[12 : 12 + header_len])
    payload = raw[12 + header_len :]
    offsets = {e["name"]: e["offset"] for e in header["tensors"]}
    for row in manifest["tensors"]:
        start = offsets[row["name"]]
        chunk = payload[start : start + row["nbytes"]]
        assert hashlib.sha256(chunk).hexdigest() == row["sha256"]


def test_verify_roundtrip(exported):
    bundle_path, manifest = exported
    verify_manifest(bundle_path, manifest)  # must not raise
    loaded = load_manifest(str(bundle_path) + ".manifest.json")
    verify_manifest(bundle_path, loaded)


def test_verify_detects_payload_tamper(exported, tmp_path):
    bundle_path, manifest = exported
    raw = bytearray(bundle_path.read_bytes())
    raw[-3] ^= 0xFF  # flip a bit inside the last tensor payload
    tampered = tmp_path / "tampered.cgb"
    tampered.write_bytes(bytes(raw))
    with pytest.raises(ManifestMismatchError, match="checksum mismatch"):
        verify_manifest(tampered, manifest)


def test_verify_detects_missing_tensor(exported):
    bundle_path, manifest = exported
    pruned = dict(manifest)
    pruned["tensors"] = manifest["tensors"][:-1]
    pruned["tensor_count"] = len(pruned["tensors"])
    with pytest.raises(ManifestMismatchError):
        verify_manifest(bundle_path, pruned)


def test_manifest_records_model_and_temperature(exported):
    _, manifest = exported
    assert manifest["source"] == "toy-vit"
    assert manifest["arch"] == "vit"
    assert abs(manifest["sigma_default"] - 0.25) < 1e-9
    assert len(manifest["preprocess"]["mean"]) == 3


def test_tokenizer_digest_sensitive_to_vocab():
    base = {"vocab": {"a": 1}, "merges": [], "context_length": 8}
    changed = {"vocab": {"a": 2}, "merges": [], "context_length": 8}
    assert tokenizer_digest(base) != tokenizer_digest(changed)
    assert tokenizer_digest(base) == tokenizer_digest(json.loads(json.dumps(base)))


def test_build_manifest_rejects_non_bundle(tmp_path):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a bundle at all")
    with pytest.raises(ManifestMismatchError):
        build_manifest(junk, "x")
