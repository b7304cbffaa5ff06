"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage/config problems -> 1,
data/file problems -> 2, numerical failures -> 3.
"""


class DrposeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DrposeError):
    """Tensor shapes are inconsistent with the requested operation."""


class GraphError(DrposeError):
    """A computation graph is malformed or evaluated with bad bindings."""


class DataFormatError(DrposeError):
    """A dataset or other on-disk artifact is corrupt or mismatched."""


class CheckpointError(DrposeError):
    """A checkpoint file cannot be loaded against the given config."""


class ConfigError(DrposeError):
    """A run configuration is invalid or contains unknown keys."""


class NumericalError(DrposeError):
    """A computation produced non-finite values."""


class ProjectionError(DrposeError):
    """A 3D point cannot be projected (at or behind the camera plane)."""
