"""Bundle manifests: per-tensor checksums computed from the on-disk bytes.

The manifest is a JSON sidecar describing a CGB1 file: source model id,
tensor name/shape/sha256 rows, preprocessing constants, the score-map
temperature, and a digest of the inline tokenizer data. ``verify_manifest``
re-derives everything from the bundle file, so a stale or tampered bundle
is caught without loading it through the engine.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ManifestMismatchError

MANIFEST_FORMAT = "cgb1-manifest-v1"


def _parse_cgb1(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"CGB1":
        raise ManifestMismatchError(f"{path}: not a CGB1 bundle")
    header_len = int.from_bytes(raw[4:12], "little")
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    return header, raw[12 + header_len :]


def tokenizer_digest(tokenizer: dict) -> str:
    blob = json.dumps(tokenizer, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_manifest(bundle_path: str | Path, source: str) -> dict:
    """Describe an existing bundle file; checksums cover the payload bytes."""
    header, payload = _parse_cgb1(bundle_path)
    rows = []
    for entry in header["tensors"]:
        shape = entry["shape"]
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        chunk = payload[entry["offset"] : entry["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise ManifestMismatchError(
                f"{bundle_path}: payload for '{entry['name']}' is truncated"
            )
        rows.append(
            {
                "name": entry["name"],
                "shape": list(shape),
                "nbytes": nbytes,
                "sha256": hashlib.sha256(chunk).hexdigest(),
            }
        )
    return {
        "format": MANIFEST_FORMAT,
        "source": source,
        "arch": header["arch"],
        "dims": header["dims"],
        "sigma_default": header["sigma_default"],
        "preprocess": header["preprocess"],
        "tokenizer_sha256": tokenizer_digest(header["tokenizer"]),
        "tensor_count": len(rows),
        "tensors": rows,
    }


def write_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ManifestMismatchError(f"{path}: unknown manifest format")
    return manifest


def verify_manifest(bundle_path: str | Path, manifest: dict) -> None:
    """Raise ManifestMismatchError unless the bundle matches the manifest."""
    fresh = build_manifest(bundle_path, manifest.get("source", ""))
    problems = []
    if fresh["tensor_count"] != manifest["tensor_count"]:
        problems.append(
            f"tensor count {fresh['tensor_count']} != manifest {manifest['tensor_count']}"
        )
    if fresh["tokenizer_sha256"] != manifest["tokenizer_sha256"]:
        problems.append("tokenizer digest differs")
    recorded = {row["name"]: row for row in manifest["tensors"]}
    for row in fresh["tensors"]:
        ref = recorded.get(row["name"])
        if ref is None:
            problems.append(f"tensor '{row['name']}' not in manifest")
        elif ref["sha256"] != row["sha256"]:
            problems.append(f"tensor '{row['name']}' checksum mismatch")
        elif list(ref["shape"]) != row["shape"]:
            problems.append(f"tensor '{row['name']}' shape mismatch")
    for name in recorded:
        if not any(r["name"] == name for r in fresh["tensors"]):
            problems.append(f"manifest tensor '{name}' missing from bundle")
    if problems:
        raise ManifestMismatchError("; ".join(problems))
