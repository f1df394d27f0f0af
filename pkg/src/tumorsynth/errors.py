"""Exception types shared across the package."""


class TumorSynthError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(TumorSynthError):
    """Arrays that must share a shape do not."""


class NonFiniteVolume(TumorSynthError):
    """A volume contains NaN or infinite voxels and the case is rejected."""


class CorruptVolumeFile(TumorSynthError):
    """A volume file or its sidecar is unreadable or inconsistent."""


class EmptyMask(TumorSynthError):
    """An operation that needs at least one mask voxel got none."""


class MaskSamplingError(TumorSynthError):
    """Tumor mask sampling could not satisfy the size spec for a case."""


class InfeasibleGeometry(TumorSynthError):
    """Requested phantom geometry cannot fit in the volume."""


class TrainingDiverged(TumorSynthError):
    """A training loop tripped its divergence guard."""


class ConfigError(TumorSynthError):
    """A run configuration is invalid (unknown key, bad value, missing path)."""


class UnknownCase(TumorSynthError):
    """A reader-study verdict referenced a case not in the session."""


class SessionClosed(TumorSynthError):
    """A verdict arrived for a session that was already closed."""


class InsufficientPool(TumorSynthError):
    """A case pool is too small to satisfy the reader-study design."""
