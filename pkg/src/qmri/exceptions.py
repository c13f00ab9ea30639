"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and input
problems exit 2, numerical failures exit 3, bridge failures exit 4.
"""


class QmriError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(QmriError, ValueError):
    """Array shapes are inconsistent with each other or with a contract."""


class DomainError(QmriError, ValueError):
    """Input values outside the valid domain (non-finite, wrong sign, ...)."""


class ConfigError(QmriError, ValueError):
    """Invalid configuration value or missing required setting."""


class NumericalError(QmriError, RuntimeError):
    """A solver produced non-finite values or otherwise diverged."""


class BridgeError(QmriError, RuntimeError):
    """The external regularizer process failed or violated the protocol."""


class RegularizerBlockError(QmriError, RuntimeError):
    """A regularizer failed inside an unroll block; carries the block index."""

    def __init__(self, block: int, message: str):
        super().__init__(f"block {block}: {message}")
        self.block = block


class QmrtFormatError(QmriError, ValueError):
    """A QMRT file has bad magic, version, dtype code, or trailing bytes."""


class QmrtTruncationError(QmriError, ValueError):
    """A QMRT file ends before the declared payload is complete."""
