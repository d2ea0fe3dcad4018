"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented domain constraint."""


class SchemaError(ValidationError):
    """Tabular input does not match its declared schema."""


class DecodeError(ValueError):
    """Binary image payload is malformed.

    ``byte_offset`` points at the first offending byte where that is
    meaningful (magic number, header token, payload start).
    """

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class PairingError(ValidationError):
    """Two per-subject score collections do not cover the same subjects."""

    def __init__(self, message: str, missing_left=(), missing_right=()):
        super().__init__(message)
        self.missing_left = tuple(missing_left)
        self.missing_right = tuple(missing_right)


class TrainingError(RuntimeError):
    """Training cannot proceed (e.g. single-class training set)."""


class DivergenceError(TrainingError):
    """Optimization produced a non-finite or runaway loss."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class NetShapeError(ValidationError):
    """Layer stack is not shape-compatible.

    ``layer_index`` identifies the first offending layer.
    """

    def __init__(self, message: str, layer_index: int | None = None):
        if layer_index is not None:
            message = f"{message} (layer {layer_index})"
        super().__init__(message)
        self.layer_index = layer_index
