"""CGB1 weights-bundle reading/writing and validation.

Layout: 4 magic bytes "CGB1", an 8-byte little-endian header length, a UTF-8
JSON header (arch, dims, backbone plan, preprocess stats, sigma_default,
inline tokenizer data, tensor manifest with name/shape/offset), then raw
little-endian float32 tensor payloads in manifest order. Offsets are relative
to the start of the payload section.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleCorruptionError, BundleFormatError, UnsupportedArchError

MAGIC = b"CGB1"
SUPPORTED_ARCHS = ("vit", "resnet")


@dataclass
class TokenizerData:
    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    context_length: int


@dataclass
class WeightsBundle:
    arch: str
    dims: dict
    tensors: dict[str, np.ndarray]
    sigma_default: float
    preprocess: dict
    tokenizer: TokenizerData
    backbone: list[dict] = field(default_factory=list)

    def tensor(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise BundleCorruptionError(f"bundle is missing tensor '{name}'") from None

    @property
    def grid_size(self) -> int:
        return self.dims["input_resolution"] // self.dims["patch_size"]


def save_bundle(bundle: WeightsBundle, path: str | Path) -> None:
    """Serialize a bundle to the CGB1 on-disk format (deterministic)."""
    names = sorted(bundle.tensors)
    manifest = []
    offset = 0
    for name in names:
        t = np.ascontiguousarray(bundle.tensors[name], dtype=np.float32)
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.nbytes
    header = {
        "arch": bundle.arch,
        "dims": bundle.dims,
        "backbone": bundle.backbone,
        "preprocess": bundle.preprocess,
        "sigma_default": bundle.sigma_default,
        "tokenizer": {
            "vocab": bundle.tokenizer.vocab,
            "merges": [list(m) for m in bundle.tokenizer.merges],
            "context_length": bundle.tokenizer.context_length,
        },
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(bundle.tensors[name], dtype=np.float32).tobytes())


def load_bundle(path: str | Path) -> WeightsBundle:
    """Load and materialize a CGB1 bundle, checking header/payload agreement."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BundleFormatError(f"{path}: not a CGB1 bundle (bad magic)")
    header_len = int.from_bytes(raw[4:12], "little")
    if len(raw) < 12 + header_len:
        raise BundleCorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BundleFormatError(f"{path}: malformed JSON header: {e}") from e
    arch = header.get("arch")
    if arch not in SUPPORTED_ARCHS:
        raise UnsupportedArchError(f"{path}: unsupported arch {arch!r}")
    payload = raw[12 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        start = entry["offset"]
        if start + nbytes > len(payload):
            raise BundleCorruptionError(f"{path}: truncated tensor data for '{name}'")
        buf = payload[start : start + nbytes]
        tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    tok = header["tokenizer"]
    return WeightsBundle(
        arch=arch,
        dims=header["dims"],
        tensors=tensors,
        sigma_default=float(header["sigma_default"]),
        preprocess=header["preprocess"],
        tokenizer=TokenizerData(
            vocab={k: int(v) for k, v in tok["vocab"].items()},
            merges=[tuple(m) for m in tok["merges"]],
            context_length=int(tok["context_length"]),
        ),
        backbone=header.get("backbone", []),
    )


def validate_bundle(bundle: WeightsBundle) -> list[str]:
    """Return a list of violations; empty means the bundle is usable."""
    report: list[str] = []
    if bundle.arch not in SUPPORTED_ARCHS:
        report.append(f"unsupported arch {bundle.arch!r}")
    for name, t in sorted(bundle.tensors.items()):
        if not np.all(np.isfinite(t)):
            report.append(f"tensor '{name}' contains non-finite values")
    if bundle.sigma_default <= 0:
        report.append(f"sigma_default must be positive, got {bundle.sigma_default}")
    dims = bundle.dims
    for key in ("embed_dim", "width", "heads", "input_resolution", "patch_size"):
        if key not in dims:
            report.append(f"dims missing '{key}'")
    if report:
        return report
    if dims["width"] % dims["heads"] != 0:
        report.append(
            f"heads ({dims['heads']}) must divide attention width ({dims['width']})"
        )
    if bundle.arch == "vit":
        if dims["input_resolution"] % dims["patch_size"] != 0:
            report.append("patch_size must divide input_resolution")
        else:
            grid = dims["input_resolution"] // dims["patch_size"]
            pos = bundle.tensors.get("visual.positional_embedding")
            if pos is None:
                report.append("missing tensor 'visual.positional_embedding'")
            elif pos.shape[0] != grid * grid + 1:
                report.append(
                    f"positional embedding length {pos.shape[0]} != grid^2+1 = {grid * grid + 1}"
                )
    for mkey in ("mean", "std"):
        vals = bundle.preprocess.get(mkey)
        if vals is None or len(vals) != 3:
            report.append(f"preprocess '{mkey}' must have 3 channel values")
    if bundle.tokenizer.context_length < 2:
        report.append("tokenizer context_length must be >= 2")
    return report
