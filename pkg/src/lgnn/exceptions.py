class LGNNError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(LGNNError, ValueError):
    pass


class ConfigurationError(LGNNError, ValueError):
    pass


class DegenerateBatchError(LGNNError, ValueError):
    pass


class LabelError(LGNNError, ValueError):
    pass


class RegistryError(LGNNError, KeyError):
    pass


class CheckpointFormatError(LGNNError, ValueError):
    pass


class DatasetFormatError(LGNNError, ValueError):
    pass


class DegenerateFilterError(LGNNError, ValueError):
    pass


class DivergenceError(LGNNError, FloatingPointError):
    pass


class UnsupportedLayerError(LGNNError, ValueError):
    pass
