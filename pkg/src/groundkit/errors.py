"""Exception types shared across the package."""


class GroundkitError(Exception):
    """Base class for all groundkit errors."""


class ShapeMismatchError(GroundkitError):
    """Operand shapes are incompatible."""


class ParameterError(GroundkitError):
    """A scalar parameter is out of its valid range."""


class ConfigError(GroundkitError):
    """A pipeline/layer configuration produces an invalid geometry."""


class BundleFormatError(GroundkitError):
    """Weights file is not a valid CGB1 bundle."""


class BundleCorruptionError(GroundkitError):
    """Bundle header and payload disagree (truncation, bad shapes)."""


class UnsupportedArchError(GroundkitError):
    """Bundle declares an architecture this engine does not implement."""


class RegionError(GroundkitError):
    """A region token has an empty or invalid membership set."""


class DegenerateInputError(GroundkitError):
    """Input is degenerate for the requested operation (e.g. zero vector)."""


class CoordinateError(GroundkitError):
    """A bounding box violates its coordinate invariants."""


class DatasetParseError(GroundkitError):
    """A dataset file line could not be parsed."""


class SearchSizeError(GroundkitError):
    """Score map too large for the brute-force search guard."""


class TokenizerDataError(GroundkitError):
    """Tokenizer vocab/merges data is inconsistent."""
