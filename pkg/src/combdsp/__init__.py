"""combdsp: comb-based optical superchannel simulation and joint receiver DSP."""

from .errors import (
    AdaptationError,
    CombDspError,
    ConfigurationError,
    FoeRangeError,
    SyncError,
)
from .sigkit import (
    ConstellationSpec,
    DualPolSignal,
    PulseShapeSpec,
    frequency_shift,
    qam_constellation,
    resample,
    rrc_taps,
)

__version__ = "0.1.0"
