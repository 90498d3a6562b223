"""Core signal types and DSP primitives shared by the whole toolkit.

Sign convention, used by every module in this package: a positive
frequency f corresponds to counterclockwise rotation exp(+j*2*pi*f*t).
Frequency shifts, dispersion transfer functions and comb line offsets
all follow this convention.

Waveform buffers are treated as one period of a cyclically repeated
frame (the transmitter plays its memory on loop), so spectral
operations (shaping, filtering, resampling, delays) are circular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError

SUPPORTED_QAM_ORDERS = (16, 32, 64)

# QPSK alphabet used for constant-modulus sync pilots.
QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2)


@dataclass(frozen=True)
class DualPolSignal:
    """Complex baseband waveform on two polarizations.

    ``center_offset`` is the frequency of this buffer's DC relative to
    the superchannel center, in Hz.  Instances are treated as immutable;
    operations return new signals.
    """

    samples_x: np.ndarray
    samples_y: np.ndarray
    sample_rate: float
    center_offset: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples_x, dtype=np.complex128)
        y = np.asarray(self.samples_y, dtype=np.complex128)
        object.__setattr__(self, "samples_x", x)
        object.__setattr__(self, "samples_y", y)
        if x.ndim != 1 or y.ndim != 1 or x.size != y.size or x.size == 0:
            raise ConfigurationError(
                "samples_x and samples_y must be 1-d arrays of equal nonzero length"
            )
        if not self.sample_rate > 0:
            raise ConfigurationError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not (np.all(np.isfinite(x.view(np.float64))) and np.all(np.isfinite(y.view(np.float64)))):
            raise ConfigurationError("signal contains non-finite samples")

    def __len__(self) -> int:
        return self.samples_x.size

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def mean_power(self) -> float:
        """Average per-sample power, averaged over both polarizations."""
        px = np.mean(np.abs(self.samples_x) ** 2)
        py = np.mean(np.abs(self.samples_y) ** 2)
        return float(px + py) / 2.0

    def with_samples(self, x: np.ndarray, y: np.ndarray, *,
                     sample_rate: float | None = None,
                     center_offset: float | None = None) -> "DualPolSignal":
        """New signal with replaced samples, keeping metadata unless overridden."""
        return DualPolSignal(
            samples_x=x,
            samples_y=y,
            sample_rate=self.sample_rate if sample_rate is None else sample_rate,
            center_offset=self.center_offset if center_offset is None else center_offset,
        )

    def pol_stack(self) -> np.ndarray:
        """Both polarizations as a (2, n) array (copy-free views)."""
        return np.stack([self.samples_x, self.samples_y])


@dataclass(frozen=True)
class ConstellationSpec:
    """Unit-energy QAM alphabet with per-point bit labels.

    ``labels`` has shape (order, bits_per_symbol) with MSB first; the
    rows are a bijection onto {0,1}^bits_per_symbol.
    """

    order: int
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.complex128)
        labs = np.asarray(self.labels, dtype=np.uint8)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labs)
        m = self.bits_per_symbol
        if pts.shape != (self.order,) or labs.shape != (self.order, m):
            raise ConfigurationError("constellation points/labels have inconsistent shapes")
        if abs(np.mean(np.abs(pts) ** 2) - 1.0) > 1e-12:
            raise ConfigurationError("constellation is not unit average energy")
        codes = labs @ (1 << np.arange(m - 1, -1, -1)).astype(np.uint64)
        if len(set(codes.tolist())) != self.order:
            raise ConfigurationError("constellation labels are not a bijection")

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map a flat bit array (length divisible by bits_per_symbol) to symbols."""
        m = self.bits_per_symbol
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1, m)
        codes = bits @ (1 << np.arange(m - 1, -1, -1))
        return self.points[self._code_to_index()[codes]]

    def _code_to_index(self) -> np.ndarray:
        m = self.bits_per_symbol
        codes = self.labels @ (1 << np.arange(m - 1, -1, -1))
        lut = np.zeros(self.order, dtype=np.int64)
        lut[codes] = np.arange(self.order)
        return lut

    def hard_decide(self, symbols: np.ndarray) -> np.ndarray:
        """Indices of nearest constellation points."""
        d = np.abs(symbols[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)

    def bits_of(self, indices: np.ndarray) -> np.ndarray:
        return self.labels[indices].reshape(-1)


@dataclass(frozen=True)
class PulseShapeSpec:
    """Root-raised-cosine pulse description: roll-off, span and unit-energy taps."""

    beta: float
    span_symbols: int
    sps: int
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", taps)
        if taps.shape != (self.span_symbols * self.sps + 1,):
            raise ConfigurationError("taps length must be span_symbols*sps + 1")
        if abs(np.sum(taps**2) - 1.0) > 1e-9:
            raise ConfigurationError("taps are not unit energy")
        if np.max(np.abs(taps - taps[::-1])) > 1e-12:
            raise ConfigurationError("taps are not symmetric")


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _square_qam(order: int):
    side = int(round(math.sqrt(order)))
    axis_bits = int(round(math.log2(side)))
    levels = 2 * np.arange(side) - (side - 1)
    points, codes = [], []
    for ic in range(side):
        for qc in range(side):
            points.append(levels[ic] + 1j * levels[qc])
            codes.append((_gray(ic) << axis_bits) | _gray(qc))
    return np.array(points), np.array(codes), 2 * axis_bits


def _cross_32qam():
    # 8x4 Gray-labeled rectangle folded into the 6x6-minus-corners cross:
    # outer columns (|I| = 7) move to the wings at Q = +-5.
    points, codes = [], []
    for ic in range(8):
        for qc in range(4):
            i_val = 2 * ic - 7
            q_val = 2 * qc - 3
            if abs(i_val) == 7:
                i_val, q_val = int(np.sign(i_val)) * abs(q_val), int(np.sign(q_val)) * 5
            points.append(i_val + 1j * q_val)
            codes.append((_gray(ic) << 2) | _gray(qc))
    return np.array(points), np.array(codes), 5


def qam_constellation(order: int) -> ConstellationSpec:
    """Gray-labeled unit-energy QAM alphabet.

    16 and 64 are square grids with per-axis Gray coding (true Gray map);
    32 is the cross constellation with a quasi-Gray map whose nearest
    neighbors differ in at most 2 bits.
    """
    if order not in SUPPORTED_QAM_ORDERS:
        raise ConfigurationError(
            f"unsupported QAM order {order!r}; supported: {SUPPORTED_QAM_ORDERS}"
        )
    if order == 32:
        points, codes, nbits = _cross_32qam()
    else:
        points, codes, nbits = _square_qam(order)
    points = points / math.sqrt(np.mean(np.abs(points) ** 2))
    labels = (codes[:, None] >> np.arange(nbits - 1, -1, -1)) & 1
    return ConstellationSpec(order=order, points=points, labels=labels.astype(np.uint8))


def rrc_taps(beta: float, sps: int, span_symbols: int) -> PulseShapeSpec:
    """Time-domain root-raised-cosine impulse response, unit energy.

    The removable singularities at t = 0 and |t| = 1/(4*beta) symbol
    periods are evaluated with their analytic limits rather than by
    nudging t, so taps are bit-reproducible.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigurationError(f"roll-off must be in [0, 1], got {beta}")
    if sps < 2:
        raise ConfigurationError(f"sps must be >= 2, got {sps}")
    if span_symbols < 8 or span_symbols % 2:
        raise ConfigurationError(f"span_symbols must be even and >= 8, got {span_symbols}")
    n = np.arange(-span_symbols * sps // 2, span_symbols * sps // 2 + 1)
    t = n / sps
    h = np.empty_like(t)
    at_zero = n == 0
    if beta == 0.0:
        h = np.sinc(t)
    else:
        at_sing = np.abs(np.abs(4 * beta * t) - 1.0) < 1e-12
        regular = ~(at_zero | at_sing)
        tr = t[regular]
        h[regular] = (
            np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
        ) / (np.pi * tr * (1 - (4 * beta * tr) ** 2))
        h[at_zero] = 1 - beta + 4 * beta / np.pi
        h[at_sing] = (beta / math.sqrt(2)) * (
            (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
        )
    h = h / math.sqrt(np.sum(h**2))
    return PulseShapeSpec(beta=beta, span_symbols=span_symbols, sps=sps, taps=h)


def rrc_frequency_response(freqs_hz: np.ndarray, symbol_rate: float, beta: float) -> np.ndarray:
    """Analytic sqrt-raised-cosine amplitude response, evaluated at freqs_hz.

    Flat at 1 inside the passband, raised-cosine transition of width
    beta*Rs, exactly 1/sqrt(2) at |f| = Rs/2.
    """
    f = np.abs(np.asarray(freqs_hz, dtype=np.float64)) / symbol_rate
    h = np.zeros_like(f)
    if beta == 0.0:
        h[f < 0.5] = 1.0
        h[f == 0.5] = math.sqrt(0.5)
        return h
    lo = (1 - beta) / 2
    hi = (1 + beta) / 2
    h[f <= lo] = 1.0
    tr = (f > lo) & (f < hi)
    h[tr] = np.sqrt(0.5 * (1 + np.cos(np.pi / beta * (f[tr] - lo))))
    return h


def _phase_factor(n_samples: int, cycles_per_sample) -> np.ndarray:
    # Phase accumulated in extended precision, reduced mod 1 before the
    # complex exponential: keeps f_a + f_b composition within ~1e-14 of a
    # single f_a+f_b shift even over long buffers.
    n = np.arange(n_samples, dtype=np.longdouble)
    frac = np.mod(n * np.longdouble(cycles_per_sample), 1.0)
    return np.exp(2j * np.pi * frac.astype(np.float64))


def frequency_shift(signal: DualPolSignal, df: float) -> DualPolSignal:
    """Multiply both polarizations by exp(+j*2*pi*df*n/fs).

    Shifts beyond Nyquist wrap (the discrete-time aliasing identity);
    ``center_offset`` decreases by df so absolute positions stay correct.
    """
    if df == 0.0:
        return replace(signal, center_offset=signal.center_offset)
    fs = signal.sample_rate
    # reduce mod fs so df and df - k*fs produce identical samples
    df_red = df - fs * round(df / fs)
    if df_red == 0.0:
        return replace(signal, center_offset=signal.center_offset - df)
    rot = _phase_factor(len(signal), df_red / fs)
    return signal.with_samples(
        signal.samples_x * rot,
        signal.samples_y * rot,
        center_offset=signal.center_offset - df,
    )


def resample(signal: DualPolSignal, target_rate: float) -> DualPolSignal:
    """Band-limited rational resampling via FFT zero-pad/truncate.

    The ratio must be representable as p/q with p, q <= 2**16.  Content
    below the smaller of the two Nyquist frequencies is preserved; this
    operation truncates (does not fold) out-of-band content, which is
    what an anti-aliased converter model wants.  Use the receiver ADC
    for deliberate aliasing.
    """
    if not target_rate > 0:
        raise ConfigurationError(f"target_rate must be > 0, got {target_rate}")
    ratio = target_rate / signal.sample_rate
    frac = Fraction(ratio).limit_denominator(1 << 16)
    if frac.numerator > (1 << 16) or abs(float(frac) - ratio) > 1e-9 * ratio:
        raise ConfigurationError(
            f"resampling ratio {ratio} is not representable as p/q with p,q <= 2^16"
        )
    if frac == 1:
        return replace(signal, center_offset=signal.center_offset)
    from scipy.signal import resample as _fft_resample

    n_out = len(signal) * frac.numerator / frac.denominator
    n_out = int(round(n_out))
    x = _fft_resample(signal.samples_x, n_out)
    y = _fft_resample(signal.samples_y, n_out)
    return signal.with_samples(x, y, sample_rate=target_rate)


def fractional_delay(signal: DualPolSignal, delay_samples: float) -> DualPolSignal:
    """Circular delay by an arbitrary (fractional) number of samples.

    Implemented as an FFT phase ramp; integer delays reduce to exact
    circular rolls of the periodic frame.
    """
    if delay_samples == 0.0:
        return replace(signal, center_offset=signal.center_offset)
    n = len(signal)
    k = np.fft.fftfreq(n)
    ramp = np.exp(-2j * np.pi * k * delay_samples)
    x = np.fft.ifft(np.fft.fft(signal.samples_x) * ramp)
    y = np.fft.ifft(np.fft.fft(signal.samples_y) * ramp)
    return signal.with_samples(x, y)


def rrc_filter_exact(signal: DualPolSignal, beta: float, symbol_rate: float) -> DualPolSignal:
    """Apply the analytic RRC amplitude response circularly (matched filter)."""
    n = len(signal)
    f = np.fft.fftfreq(n, d=1.0 / signal.sample_rate)
    h = rrc_frequency_response(f, symbol_rate, beta)
    # unit-energy tap equivalent (sum |FFT|^2 = n), like the shaping filter
    h = h * math.sqrt(n / np.sum(h**2))
    x = np.fft.ifft(np.fft.fft(signal.samples_x) * h)
    y = np.fft.ifft(np.fft.fft(signal.samples_y) * h)
    return signal.with_samples(x, y)


def snap_frequency(freq_hz: float, resolution_hz: float) -> float:
    """Round a frequency onto the periodic frame's spectral grid.

    The simulator treats buffers as one period of a repeating frame, so
    carrier placements are snapped to multiples of (symbol_rate /
    frame_len_symbols) to stay exactly periodic.  Estimators never rely
    on this grid.
    """
    return round(freq_hz / resolution_hz) * resolution_hz
