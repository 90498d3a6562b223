"""Exception types shared across the toolkit."""


class CombDspError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(CombDspError):
    """A parameter or configuration value is out of contract."""


class SyncError(CombDspError):
    """Frame synchronization failed (no usable correlation peak)."""


class FoeRangeError(CombDspError):
    """Raw frequency offset outside the pilot-based capture range."""


class AdaptationError(CombDspError):
    """Equalizer adaptation diverged."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
