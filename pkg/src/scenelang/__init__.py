"""Synthetic spatial-language scenes and a text-conditioned scene renderer.

The package covers the full pipeline: scene sampling, viewpoint-dependent
caption synthesis, software rendering, a representation encoder plus a
recurrent-canvas conditional image decoder, the training harness, and the
representation analyses.
"""

__version__ = "0.1.0"


class ScenelangError(Exception):
    """Base class for errors raised by this package."""


class SceneGenerationError(ScenelangError):
    """Rejection sampling failed; the generation config is over-constrained."""


class DataFormatError(ScenelangError):
    """A serialized dataset or checkpoint file is malformed."""


class TrainingDivergedError(ScenelangError):
    """Non-finite values appeared during training."""
