class ExportError(Exception):
    """Base class for everything raised by the exporter."""


class UnsupportedVariantError(ExportError):
    """Checkpoint structure that the bundle format cannot represent."""


class ManifestMismatchError(ExportError):
    """A manifest does not agree with the bundle file it describes."""
