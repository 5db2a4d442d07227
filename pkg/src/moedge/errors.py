"""Exception types shared across modules."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str = "non-finite training loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class CheckpointError(ValueError):
    """Checkpoint file is malformed or does not match the expected model."""


class ConfigurationError(ValueError):
    """Scenario or run configuration is inconsistent or incomplete."""


class MissingArtifact(LookupError):
    """A policy needs a trained artifact that was not supplied."""
