"""Per-channel coherent receiver: optical demux, downconversion against a
receiver-comb LO line, and decimation to 2 samples per symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .channel import SPEED_OF_LIGHT, quantize, wiener_phase
from .errors import ConfigurationError
from .rng import substream
from .sigkit import DualPolSignal, fractional_delay, frequency_shift, snap_frequency
from .txchain import CombModel

DEMUX_SHAPES = ("ideal-rect", "super-gaussian")


def optical_bw_hz(delta_lambda_nm: float,
                  wavelength_nm: float = 1550.0) -> float:
    """Convert an optical filter width in nm to Hz at the given wavelength."""
    lam = wavelength_nm * 1e-9
    return SPEED_OF_LIGHT * delta_lambda_nm * 1e-9 / lam**2


@dataclass(frozen=True)
class ReceiverConfig:
    """Receiver front-end parameters; out_sps is fixed at the 2-SPS design point."""

    demux_bw: float = optical_bw_hz(0.3)
    demux_shape: str = "ideal-rect"
    sg_order: int = 4
    adc_enob: float = math.inf
    adc_clip_sigma: float = 3.0
    rx_comb: CombModel = CombModel()
    out_sps: int = 2
    timing_offset: float = 0.0   # fractional trigger misalignment, output samples

    def __post_init__(self):
        if self.demux_shape not in DEMUX_SHAPES:
            raise ConfigurationError(
                f"demux_shape must be one of {DEMUX_SHAPES}, got {self.demux_shape!r}"
            )
        if self.out_sps != 2:
            raise ConfigurationError("out_sps is fixed at 2 for this receiver design")
        if self.demux_bw <= 0:
            raise ConfigurationError("demux_bw must be > 0")


def wss_demux(superchannel: DualPolSignal, channel_index: int,
              cfg: ReceiverConfig) -> DualPolSignal:
    """Band-pass one channel slot out of the composite (still at sim rate).

    The filter is centered on the nominal grid position
    channel_index*spacing (snapped to the frame grid like the
    transmitter placement).
    """
    if abs(channel_index) > cfg.rx_comb.n_side:
        raise ConfigurationError(
            f"channel_index {channel_index} outside the {cfg.rx_comb.num_lines}-line plan"
        )
    n = len(superchannel)
    fs = superchannel.sample_rate
    spacing_q = snap_frequency(cfg.rx_comb.spacing, fs / n)
    center = channel_index * spacing_q - superchannel.center_offset
    f = np.fft.fftfreq(n, d=1.0 / fs)
    u = (f - center) / (cfg.demux_bw / 2.0)
    if cfg.demux_shape == "ideal-rect":
        h = (np.abs(u) <= 1.0).astype(np.float64)
    else:
        h = np.exp(-(math.log(2) / 2.0) * u ** (2 * cfg.sg_order))
    x = np.fft.ifft(np.fft.fft(superchannel.samples_x) * h)
    y = np.fft.ifft(np.fft.fft(superchannel.samples_y) * h)
    return superchannel.with_samples(x, y)


def coherent_downconvert(band: DualPolSignal, channel_index: int, cfg: ReceiverConfig,
                         lo_phase: np.ndarray | None = None,
                         rng: np.random.Generator | None = None) -> DualPolSignal:
    """Mix the selected band down against the receiver-comb LO line.

    The residual carrier after this step is exactly the transmitter /
    receiver comb difference f0 + i*delta_f.  ``lo_phase`` carries the
    receiver-comb phase trajectory (shared across the lines of one
    comb); if omitted and the comb has nonzero linewidth, a trajectory
    is drawn from ``rng``.
    """
    n = len(band)
    res = band.sample_rate / n
    spacing_q = snap_frequency(cfg.rx_comb.spacing, res)
    # f0 snaps to the frame grid exactly like the transmitter placement,
    # so identical tx/rx combs cancel to a true homodyne
    lo_offset = snap_frequency(cfg.rx_comb.f0, res) + channel_index * cfg.rx_comb.delta_f
    df = channel_index * spacing_q + lo_offset
    out = frequency_shift(band, -df)
    if lo_phase is None and cfg.rx_comb.linewidth > 0:
        if rng is None:
            rng = substream(0, "rx-comb-phase")
        lo_phase = wiener_phase(cfg.rx_comb.linewidth, n, band.sample_rate, rng)
    if lo_phase is not None and np.any(lo_phase):
        rot = np.exp(-1j * lo_phase)
        out = out.with_samples(out.samples_x * rot, out.samples_y * rot)
    return out


def adc(signal: DualPolSignal, symbol_rate: float, cfg: ReceiverConfig) -> DualPolSignal:
    """Sample at exactly 2*symbol_rate and quantize at the ADC resolution.

    Decimation folds out-of-band content (true sampling, not band-limited
    resampling): neighbor skirts beyond the new Nyquist alias into band,
    which is the effect the joint equalizer exploits.
    """
    target = cfg.out_sps * symbol_rate
    if cfg.timing_offset:
        signal = fractional_delay(
            signal, cfg.timing_offset * signal.sample_rate / target
        )
    ratio = Fraction(target / signal.sample_rate).limit_denominator(1 << 16)
    if abs(float(ratio) - target / signal.sample_rate) > 1e-12:
        raise ConfigurationError(
            "ADC rate conversion must be an exact small rational of the input rate"
        )
    p, q = ratio.numerator, ratio.denominator
    n = len(signal)
    if (n * p) % q:
        raise ConfigurationError(
            f"buffer length {n} is not compatible with the {p}/{q} ADC conversion"
        )
    x, y = signal.samples_x, signal.samples_y
    if p > 1:
        # exact circular upsample by p (spectrum zero-padding)
        def _up(v):
            spec = np.fft.fft(v)
            out = np.zeros(n * p, dtype=np.complex128)
            half = n // 2
            out[:half] = spec[:half]
            out[-(n - half):] = spec[half:]
            return np.fft.ifft(out) * p
        x, y = _up(x), _up(y)
    # true sampling: keep every q-th point, aliasing retained
    x = x[::q].copy()
    y = y[::q].copy()
    out = DualPolSignal(samples_x=x, samples_y=y, sample_rate=target,
                        center_offset=signal.center_offset)
    if not math.isinf(cfg.adc_enob):
        out = quantize(out, cfg.adc_enob, cfg.adc_clip_sigma)
    return out
