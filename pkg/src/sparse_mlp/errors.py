"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent model/training configuration."""


class InputError(ValueError):
    """Bad runtime input, e.g. an out-of-range class label."""


class FormatError(ValueError):
    """Malformed binary tensor file or dataset directory."""


class CheckpointError(ValueError):
    """Missing or inconsistent checkpoint contents."""


class StateError(RuntimeError):
    """Operation invoked in an invalid state, e.g. optimizer step without grads."""
