class ShapeError(ValueError):
    """Operand shapes do not conform."""


class ConfigError(ValueError):
    """An experiment or layer configuration cannot be constructed."""


class DataError(ValueError):
    """Input data violates its declared format or range."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
