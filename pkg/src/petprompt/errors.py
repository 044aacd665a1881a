"""Exception types shared across the harness."""


class ShapeMismatchError(ValueError):
    """Two volumes/masks with incompatible dims were combined."""


class BoundsError(IndexError):
    """A voxel coordinate fell outside the grid or window."""


class NiftiFormatError(ValueError):
    """File is not a readable single-file NIfTI-1 volume."""


class UnsupportedDatatypeError(NiftiFormatError):
    """NIfTI datatype code outside the supported set."""


class TruncatedFileError(NiftiFormatError):
    """Payload shorter than the header promises."""


class ProtocolError(RuntimeError):
    """Malformed or contract-violating frame on the backend wire."""


class TransportError(ProtocolError):
    """Connection-level failure (timeout, closed stream, refused)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class IncompatibleVersionError(ProtocolError):
    """Handshake version mismatch."""


class BackendError(ProtocolError):
    """Backend answered with an error frame; carries its message."""


class ExpansionLimitError(RuntimeError):
    """Sliding-window expansion hit the window cap.

    ``allowed`` holds the subset of candidate windows that still fits
    under the cap so callers can finish with a truncated (flagged) result.
    """

    def __init__(self, message, allowed):
        super().__init__(message)
        self.allowed = allowed


class PlacementError(RuntimeError):
    """Phantom structures could not be placed without overlap."""


class InsufficientSubjectsError(ValueError):
    """Covariance network needs at least 3 subjects."""
