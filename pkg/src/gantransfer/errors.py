"""Exception hierarchy shared across the package."""


class GanTransferError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(GanTransferError):
    """Invalid or inconsistent configuration."""


class AlignmentError(GanTransferError):
    """Two parameter sets that must match differ in names, shapes, or roles."""


class CheckpointError(GanTransferError):
    """Base class for checkpoint load/save failures."""


class ManifestError(CheckpointError):
    """Checkpoint manifest is missing, unreadable, or structurally invalid."""


class TensorShapeError(CheckpointError):
    """A stored tensor disagrees with the manifest or the model layout."""


class DigestMismatchError(CheckpointError):
    """A content or spec digest does not match the manifest."""


class MetricUndefinedError(GanTransferError):
    """A metric was requested on inputs where it is undefined."""


class DivergenceError(GanTransferError):
    """Training produced a non-finite loss.

    Carries the tail of the gamma trace so the failure point can be inspected.
    """

    def __init__(self, message, gamma_tail=()):
        super().__init__(message)
        self.gamma_tail = list(gamma_tail)
