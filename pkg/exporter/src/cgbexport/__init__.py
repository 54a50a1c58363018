"""Checkpoint-to-bundle exporter with manifests and parity fixtures."""

from .convert import convert_state_dict, export_checkpoint, load_checkpoint
from .errors import ExportError, ManifestMismatchError, UnsupportedVariantError
from .fixtures import check_parity, emit_parity_fixtures
from .manifest import build_manifest, load_manifest, verify_manifest, write_manifest

__all__ = [
    "ExportError",
    "ManifestMismatchError",
    "UnsupportedVariantError",
    "build_manifest",
    "check_parity",
    "convert_state_dict",
    "emit_parity_fixtures",
    "export_checkpoint",
    "load_checkpoint",
    "load_manifest",
    "verify_manifest",
    "write_manifest",
]
