"""Exception types shared across the package."""


class BurstDepthError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateProjectionError(BurstDepthError):
    """Projection of a point whose third homogeneous component is zero."""


class DegenerateBaselineError(BurstDepthError):
    """A transform vector too small to invert (near-zero baseline)."""


class InsufficientTracksError(BurstDepthError):
    """Too few full-length feature tracks survived for pose estimation."""


class PropagationError(BurstDepthError):
    """Sparse-to-dense inverse depth propagation cannot be performed."""


class ConfigurationError(BurstDepthError):
    """Inconsistent configuration, e.g. weight shapes not matching the network."""


class PipelineStageError(BurstDepthError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
