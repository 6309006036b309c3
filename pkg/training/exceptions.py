"""
Error types raised while training or loading policies
"""


class TrainingError(Exception):
    """Base class for training failures"""


class TrainingDivergedError(TrainingError):
    """Loss or logits became non-finite"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(TrainingError):
    """Unreadable checkpoint or one that does not match the environment"""
