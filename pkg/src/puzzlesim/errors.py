"""Exception types shared across the package."""


class PuzzleSimError(Exception):
    """Base class for all package-specific errors."""


class FormatError(PuzzleSimError):
    """A binary container or image file does not conform to its layout."""


class ValidationError(PuzzleSimError):
    """Structurally valid input that violates a contract (missing keys, bad shapes)."""


class InputTooSmallError(PuzzleSimError):
    """Image smaller than the backbone's minimum input size."""

    def __init__(self, got, minimum):
        self.got = got
        self.minimum = minimum
        super().__init__(
            f"input of size {got[0]}x{got[1]} is below the backbone minimum "
            f"{minimum[0]}x{minimum[1]}"
        )


class IndexMismatchError(PuzzleSimError):
    """Reference index was built with a different network spec."""


class InpainterError(PuzzleSimError):
    """Inpainting backend failed; message carries the backend identity."""

    def __init__(self, backend, message):
        self.backend = backend
        super().__init__(f"{backend}: {message}")
