"""Exception taxonomy shared across the pipeline.

Every error carries a short machine-parsable ``category`` string; the CLI
prints ``error: <category>: <message>`` and exits nonzero.
"""


class EmofuseError(Exception):
    category = "error"


class AudioFormatError(EmofuseError):
    """Malformed RIFF/WAVE container."""

    category = "format"


class UnsupportedAudioError(EmofuseError):
    """Well-formed WAV but an encoding we do not decode."""

    category = "unsupported"


class DomainError(EmofuseError):
    """Argument outside its documented domain."""

    category = "domain"


class RangeError(EmofuseError):
    """Boundary or index outside the underlying signal."""

    category = "range"


class SchemaError(EmofuseError):
    """File structure disagrees with its declared schema."""

    category = "schema"


class ParseError(EmofuseError):
    """Unparseable cell or line in a text input."""

    category = "parse"


class AlignmentError(EmofuseError):
    """Per-frame counts of annotations/audio/video disagree."""

    category = "alignment"


class CorruptionError(EmofuseError):
    """Stored blob fails its size or checksum check."""

    category = "corruption"


class ShapeError(EmofuseError):
    """Tensor shape incompatible with a layer or model."""

    category = "shape"


class CoverageError(EmofuseError):
    """Window set does not cover the frames it claims to."""

    category = "coverage"


class StateError(EmofuseError):
    """Backward called without a matching forward, or stale cache."""

    category = "state"


class DivergenceError(EmofuseError):
    """Training produced a non-finite loss."""

    category = "divergence"
