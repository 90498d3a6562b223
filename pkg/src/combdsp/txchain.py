"""Transmitter chain: pilot-framed symbol streams, pulse shaping and
superchannel assembly on a comb-defined carrier grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .rng import substream
from .sigkit import (
    QPSK_POINTS,
    ConstellationSpec,
    DualPolSignal,
    PulseShapeSpec,
    frequency_shift,
    resample,
    rrc_frequency_response,
    snap_frequency,
)


@dataclass(frozen=True)
class FrameMap:
    """Pilot/payload layout of one transmitted frame.

    The frame opens with ``sync_pilot_len`` synchronization pilots;
    residual phase pilots then appear every ``cpe_pilot_period`` symbols
    in the remaining region, everything else is payload.
    """

    frame_len: int
    sync_pilot_len: int
    cpe_pilot_period: int

    def __post_init__(self):
        if self.sync_pilot_len < 0 or self.sync_pilot_len >= self.frame_len:
            raise ConfigurationError(
                f"frame_len {self.frame_len} cannot accommodate "
                f"sync_pilot_len {self.sync_pilot_len}"
            )
        if self.cpe_pilot_period < 2:
            raise ConfigurationError("cpe_pilot_period must be >= 2")

    @property
    def sync_pilot_indices(self) -> np.ndarray:
        return np.arange(self.sync_pilot_len)

    @property
    def cpe_pilot_indices(self) -> np.ndarray:
        return np.arange(self.sync_pilot_len, self.frame_len, self.cpe_pilot_period)

    @property
    def payload_indices(self) -> np.ndarray:
        mask = np.ones(self.frame_len, dtype=bool)
        mask[self.sync_pilot_indices] = False
        mask[self.cpe_pilot_indices] = False
        return np.nonzero(mask)[0]

    @property
    def overhead(self) -> float:
        return (self.sync_pilot_len + len(self.cpe_pilot_indices)) / self.frame_len


@dataclass(frozen=True)
class CombModel:
    """Per-line frequency state of an optical comb.

    line_offset(i) = f0 + i*delta_f is the deviation of line i from the
    nominal grid position i*spacing.
    """

    f0: float = 0.0
    delta_f: float = 0.0
    linewidth: float = 0.0
    spacing: float = 25e9
    num_lines: int = 3

    def __post_init__(self):
        if self.spacing <= 0:
            raise ConfigurationError("comb spacing must be > 0")
        if self.linewidth < 0:
            raise ConfigurationError("comb linewidth must be >= 0")
        if self.num_lines < 1 or self.num_lines % 2 == 0:
            raise ConfigurationError("num_lines must be odd and >= 1")

    @property
    def n_side(self) -> int:
        return self.num_lines // 2

    def line_offset(self, index: int) -> float:
        if abs(index) > self.n_side:
            raise ConfigurationError(
                f"line index {index} outside comb with {self.num_lines} lines"
            )
        return self.f0 + index * self.delta_f


def default_decorrelation_pattern(num_channels: int) -> tuple:
    """The 1-2-3-4-1-2... seed-index cycle."""
    return tuple((i % 4) + 1 for i in range(num_channels))


@dataclass(frozen=True)
class ChannelPlan:
    """Per-channel modulation and grid parameters for the superchannel."""

    symbol_rate: float
    spacing: float
    beta: float
    constellation: ConstellationSpec
    num_channels: int = 3
    decorrelation_pattern: tuple = ()
    polmux_delay: int = 250
    polmux_mode: str = "independent"  # or "delayed-copy"
    gain_ripple_db: float = 0.0

    def __post_init__(self):
        if self.symbol_rate <= 0 or self.spacing <= 0:
            raise ConfigurationError("symbol_rate and spacing must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"roll-off must be in [0, 1], got {self.beta}")
        if self.num_channels < 1 or self.num_channels % 2 == 0:
            raise ConfigurationError("num_channels must be odd")
        if not self.decorrelation_pattern:
            object.__setattr__(
                self, "decorrelation_pattern",
                default_decorrelation_pattern(self.num_channels),
            )
        if len(self.decorrelation_pattern) != self.num_channels:
            raise ConfigurationError(
                "decorrelation_pattern length must equal num_channels"
            )
        if self.polmux_mode not in ("independent", "delayed-copy"):
            raise ConfigurationError(f"unknown polmux_mode {self.polmux_mode!r}")

    @property
    def guard_band(self) -> float:
        """spacing - symbol_rate; negative means super-Nyquist operation."""
        return self.spacing - self.symbol_rate

    @property
    def n_side(self) -> int:
        return self.num_channels // 2

    def channel_indices(self) -> np.ndarray:
        return np.arange(-self.n_side, self.n_side + 1)

    def line_gains(self) -> np.ndarray:
        """Per-channel amplitude gains with optional power ripple across lines."""
        if self.gain_ripple_db == 0.0:
            return np.ones(self.num_channels)
        i = self.channel_indices()
        ripple_db = -0.5 * self.gain_ripple_db * (1 - np.cos(2 * np.pi * i / self.num_channels))
        return 10.0 ** (ripple_db / 20.0)


@dataclass(frozen=True)
class FrameRecord:
    """Known transmitted content of one channel's frame (dual pol)."""

    symbols: np.ndarray          # (2, frame_len) complex
    payload_bits: np.ndarray     # (2, n_payload * bits_per_symbol) uint8
    fmap: FrameMap
    shifted_by: int = 0          # circular symbol shift applied for decorrelation

    @property
    def sync_pilots(self) -> np.ndarray:
        return self.symbols[:, self.fmap.sync_pilot_indices]

    @property
    def cpe_pilots(self) -> np.ndarray:
        return self.symbols[:, self.fmap.cpe_pilot_indices]

    @property
    def payload(self) -> np.ndarray:
        return self.symbols[:, self.fmap.payload_indices]


def _base_stream(plan: ChannelPlan, fmap: FrameMap, seed: int, seed_index: int):
    """One frame worth of symbols + payload bits for a decorrelation seed index."""
    const = plan.constellation
    m = const.bits_per_symbol
    n_pay = len(fmap.payload_indices)
    n_cpe = len(fmap.cpe_pilot_indices)
    symbols = np.zeros((2, fmap.frame_len), dtype=np.complex128)
    bits = np.zeros((2, n_pay * m), dtype=np.uint8)
    for pol, pol_name in enumerate(("x", "y")):
        if plan.polmux_mode == "delayed-copy" and pol == 1:
            # split-delay-combine emulation: y is a delayed copy of x
            symbols[1] = np.roll(symbols[0], plan.polmux_delay)
            bits[1] = bits[0]
            break
        rng_sync = substream(seed, "sync", seed_index, pol_name)
        rng_pay = substream(seed, "payload", seed_index, pol_name)
        rng_cpe = substream(seed, "cpe", seed_index, pol_name)
        symbols[pol, fmap.sync_pilot_indices] = rng_sync.choice(QPSK_POINTS, fmap.sync_pilot_len)
        b = rng_pay.integers(0, 2, n_pay * m).astype(np.uint8)
        bits[pol] = b
        symbols[pol, fmap.payload_indices] = const.map_bits(b)
        symbols[pol, fmap.cpe_pilot_indices] = const.points[
            rng_cpe.integers(0, const.order, n_cpe)
        ]
    return symbols, bits


def build_frame(plan: ChannelPlan, fmap: FrameMap, seed: int) -> list:
    """Per-channel dual-pol symbol frames plus the known-pilot record.

    Channels sharing a decorrelation seed index carry circularly shifted
    copies of the same stream; distinct indices get independent streams.
    Occurrences are counted from the center channel outward so the
    measurement channel always holds the unshifted copy.
    """
    pattern = plan.decorrelation_pattern
    order = sorted(range(plan.num_channels),
                   key=lambda c: (abs(c - plan.n_side), c))
    shift_step = fmap.frame_len // 4
    base_cache: dict = {}
    records: list = [None] * plan.num_channels
    occurrence: dict = {}
    for ch in order:
        s_idx = pattern[ch]
        if s_idx not in base_cache:
            base_cache[s_idx] = _base_stream(plan, fmap, seed, s_idx)
        occ = occurrence.get(s_idx, 0)
        occurrence[s_idx] = occ + 1
        symbols, bits = base_cache[s_idx]
        shift = occ * shift_step
        if shift:
            symbols = np.roll(symbols, shift, axis=1)
        records[ch] = FrameRecord(symbols=symbols, payload_bits=bits, fmap=fmap,
                                  shifted_by=shift)
    return records


def shape_channel(symbols: np.ndarray, pulse: PulseShapeSpec, sim_sps: int,
                  *, symbol_rate: float = 1.0, method: str = "spectral") -> DualPolSignal:
    """Upsample a dual-pol symbol frame and apply the RRC shaping filter.

    ``method="spectral"`` (default) applies the analytic RRC response on
    the circular frame, equivalent to a tap filter spanning the whole
    frame: this keeps the crosstalk-free regime exactly crosstalk-free
    at small roll-offs.  ``method="taps"`` circularly convolves with
    ``pulse.taps`` instead.
    """
    if sim_sps != pulse.sps:
        raise ConfigurationError(
            f"sim_sps {sim_sps} does not match pulse sps {pulse.sps}"
        )
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.complex128))
    if symbols.shape[0] == 1:
        symbols = np.vstack([symbols, symbols])
    if symbols.shape[-1] == 0:
        raise ConfigurationError("symbol frame is empty")
    n_sym = symbols.shape[-1]
    n = n_sym * sim_sps
    up = np.zeros((2, n), dtype=np.complex128)
    up[:, ::sim_sps] = symbols
    spec = np.fft.fft(up, axis=-1)
    if method == "spectral":
        f = np.fft.fftfreq(n, d=1.0 / (symbol_rate * sim_sps))
        h = rrc_frequency_response(f, symbol_rate, pulse.beta)
        # unit-energy tap equivalent: a zero-padded unit-energy tap vector
        # has sum |FFT|^2 = n
        h = h * math.sqrt(n / np.sum(h**2))
    elif method == "taps":
        taps = np.zeros(n)
        k = len(pulse.taps)
        taps[: k] = pulse.taps
        taps = np.roll(taps, -(k // 2))
        h = np.fft.fft(taps)
    else:
        raise ConfigurationError(f"unknown shaping method {method!r}")
    shaped = np.fft.ifft(spec * h, axis=-1) * math.sqrt(sim_sps)
    return DualPolSignal(samples_x=shaped[0], samples_y=shaped[1],
                         sample_rate=symbol_rate * sim_sps)


def min_assembly_rate(plan: ChannelPlan) -> float:
    """Smallest legal simulation rate for this plan (25% margin)."""
    return 2 * (plan.num_channels * plan.spacing / 2
                + plan.symbol_rate * (1 + plan.beta) / 2) * 1.25


def assemble_superchannel(channels: list, plan: ChannelPlan, comb: CombModel,
                          sim_rate: float, seed: int = 0) -> DualPolSignal:
    """Place per-channel waveforms on the comb grid and sum them.

    Channel i is shifted to i*spacing + comb.line_offset(i); grid and f0
    placements are snapped to the frame's spectral grid (see
    ``snap_frequency``) so the composite stays exactly periodic.  The
    comb phase-noise process is fully correlated across lines, so one
    common phase trajectory multiplies the composite.
    """
    if len(channels) != plan.num_channels:
        raise ConfigurationError("number of channel waveforms != plan.num_channels")
    required = min_assembly_rate(plan)
    if sim_rate < required:
        raise ConfigurationError(
            f"sim_rate {sim_rate:.3e} Hz below required minimum {required:.3e} Hz"
        )
    resampled = [resample(ch, sim_rate) for ch in channels]
    n = len(resampled[0])
    if any(len(ch) != n for ch in resampled):
        raise ConfigurationError("channels must have equal length at the assembly rate")
    grid_res = sim_rate / n
    spacing_q = snap_frequency(plan.spacing, grid_res)
    f0_q = snap_frequency(comb.f0, grid_res)
    gains = plan.line_gains()
    acc_x = np.zeros(n, dtype=np.complex128)
    acc_y = np.zeros(n, dtype=np.complex128)
    for pos, i in enumerate(plan.channel_indices()):
        df = i * spacing_q + f0_q + i * comb.delta_f
        shifted = frequency_shift(resampled[pos], df)
        acc_x += gains[pos] * shifted.samples_x
        acc_y += gains[pos] * shifted.samples_y
    if comb.linewidth > 0:
        rng = substream(seed, "tx-comb-phase")
        dphi = rng.standard_normal(n) * math.sqrt(2 * np.pi * comb.linewidth / sim_rate)
        rot = np.exp(1j * np.cumsum(dphi))
        acc_x *= rot
        acc_y *= rot
    return DualPolSignal(samples_x=acc_x, samples_y=acc_y,
                         sample_rate=sim_rate, center_offset=0.0)
