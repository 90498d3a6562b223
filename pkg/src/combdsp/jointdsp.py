"""Joint multi-channel receive DSP at 2 samples per symbol: shared
synchronization, per-channel dispersion compensation, joint frequency
offset estimation, aliased-input preparation and the 6x2 MIMO equalizer
with its 2x2 single-channel baseline, plus pilot-aided carrier phase
tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._lms import lms_payload, lms_train
from .channel import apply_cd
from .errors import AdaptationError, ConfigurationError, FoeRangeError, SyncError
from .sigkit import (
    ConstellationSpec,
    DualPolSignal,
    fractional_delay,
    frequency_shift,
    rrc_filter_exact,
    rrc_frequency_response,
    rrc_taps,
    snap_frequency,
)
from .txchain import FrameMap, shape_channel

EQUALIZER_MODES = ("joint6x2", "single2x2")
TAP_ENERGY_LIMIT = 1e3


@dataclass
class EqualizerState:
    """Bank of M-tap complex FIR filters plus adaptation parameters.

    taps has shape (2, B, M): output polarization, input branch (x/y of
    each contributing channel), tap index.  B is 6 in joint mode and 2
    in single mode.
    """

    taps: np.ndarray
    step_train: float = 1e-3
    step_dd: float = 1e-4
    mode: str = "joint6x2"
    train_epochs: int = 3
    step_train2: float = 0.0      # optional annealed second training stage
    train_epochs2: int = 0
    freeze_after_training: bool = False
    theta_gain: float = 0.3

    def __post_init__(self):
        if self.mode not in EQUALIZER_MODES:
            raise ConfigurationError(f"unknown equalizer mode {self.mode!r}")
        self.taps = np.asarray(self.taps, dtype=np.complex128)
        expected_b = 6 if self.mode == "joint6x2" else 2
        if self.taps.ndim != 3 or self.taps.shape[0] != 2 \
                or self.taps.shape[1] != expected_b or self.taps.shape[2] % 2 == 0:
            raise ConfigurationError(
                f"taps must have shape (2, {expected_b}, M) with odd M"
            )

    @property
    def num_taps(self) -> int:
        return self.taps.shape[2]

    @classmethod
    def initial(cls, mode: str = "joint6x2", num_taps: int = 25, **kw) -> "EqualizerState":
        """Center-spike initialization on the center channel's direct paths."""
        if num_taps % 2 == 0:
            raise ConfigurationError("num_taps must be odd")
        b = 6 if mode == "joint6x2" else 2
        taps = np.zeros((2, b, num_taps), dtype=np.complex128)
        center_x = 2 if mode == "joint6x2" else 0
        taps[0, center_x, num_taps // 2] = 1.0
        taps[1, center_x + 1, num_taps // 2] = 1.0
        return cls(taps=taps, mode=mode, **kw)


@dataclass(frozen=True)
class FoeResult:
    f0_hz: float
    delta_f_hz: float
    raw_offsets_hz: np.ndarray
    channel_indices: np.ndarray


@dataclass(frozen=True)
class EqResult:
    symbols: np.ndarray          # (2, frame_len)
    taps: np.ndarray
    error_curve: np.ndarray
    train_error: np.ndarray
    theta_trace: np.ndarray


@dataclass(frozen=True)
class DspResult:
    """Recovered payload and per-stage diagnostics for one processed channel."""

    symbols_x: np.ndarray
    symbols_y: np.ndarray
    foe_estimate: float
    delta_f_estimate: float
    timing_offset: float
    diagnostics: dict = field(default_factory=dict)


def sync_template(sync_pilots: np.ndarray, fmap: FrameMap, beta: float,
                  symbol_rate: float) -> DualPolSignal:
    """Known 2-SPS waveform of the synchronization pilots inside an
    otherwise empty frame."""
    symbols = np.zeros((2, fmap.frame_len), dtype=np.complex128)
    symbols[:, fmap.sync_pilot_indices] = sync_pilots
    pulse = rrc_taps(beta, 2, 8)
    return shape_channel(symbols, pulse, 2, symbol_rate=symbol_rate)


def synchronize(reference_channel: DualPolSignal, known_sync_pilots: np.ndarray,
                fmap: FrameMap, beta: float) -> float:
    """Shared timing estimate from the reference channel, fractional samples.

    Coarse: magnitude peak of the circular cross-correlation of
    lag-differential products (rx[n]*conj(rx[n+1]) against the same
    product of the known pilot waveform), combined over all polarization
    pairings: immune to carrier offset and polarization rotation.  Fine:
    a provisional pilot-based carrier estimate derotates the signal and
    the continuous cross-correlation power is maximized by iterated
    parabolic interpolation around the coarse peak.
    """
    tmpl = sync_template(known_sync_pilots, fmap, beta,
                         reference_channel.sample_rate / 2.0)
    rx = reference_channel.pol_stack()
    tp = tmpl.pol_stack()
    n = rx.shape[1]
    lag = 1
    d_rx = [rx[a] * np.conj(np.roll(rx[a], -lag)) for a in range(2)]
    d_tp = [tp[b] * np.conj(np.roll(tp[b], -lag)) for b in (0, 1)]
    d_tp += [tp[0] * np.conj(np.roll(tp[1], -lag)),
             tp[1] * np.conj(np.roll(tp[0], -lag))]
    metric = np.zeros(n)
    dtf = [np.fft.fft(d) for d in d_tp]
    for a in range(2):
        da = np.fft.fft(d_rx[a])
        for tb in dtf:
            metric += np.abs(np.fft.ifft(da * np.conj(tb))) ** 2
    coarse = int(np.argmax(metric))
    # provisional carrier removal at the coarse position, then verify and
    # refine on the plain (full-gain) correlation of the derotated signal
    rolled = fractional_delay(reference_channel, -float(coarse))
    f_prov = _raw_offset(rolled, known_sync_pilots, fmap,
                         reference_channel.sample_rate / 2.0)
    derot = frequency_shift(rolled, -f_prov)
    cross = [np.fft.fft(derot.pol_stack()[a]) * np.conj(np.fft.fft(tp[b]))
             for a in range(2) for b in range(2)]
    plain = np.zeros(n)
    for c in cross:
        plain += np.abs(np.fft.ifft(c)) ** 2
    rel_peak = int(np.argmax(plain))
    if rel_peak > n / 2:
        rel_peak -= n
    peak = coarse + rel_peak
    exclusion = 4
    sidelobes = plain.copy()
    for d in range(-exclusion, exclusion + 1):
        sidelobes[(rel_peak + d) % n] = 0.0
    psr = math.sqrt(plain[rel_peak % n] / max(sidelobes.max(), 1e-300))
    if psr < 3.0:
        raise SyncError(
            f"frame not found: peak-to-sidelobe ratio {psr:.2f} < 3"
        )
    freqs = np.fft.fftfreq(n)

    def corr_power(tau: float) -> float:
        ph = np.exp(2j * np.pi * freqs * tau)
        return sum(abs(np.dot(c, ph)) ** 2 for c in cross)

    delta, half = float(rel_peak), 0.5
    for _ in range(4):
        m0 = corr_power(delta - half)
        m1 = corr_power(delta)
        m2 = corr_power(delta + half)
        denom = m0 - 2 * m1 + m2
        if denom != 0:
            delta += 0.5 * (m0 - m2) / denom * half
        half /= 2
    offset = coarse + delta
    if offset > n / 2:
        offset -= n
    return float(offset)


def apply_timing(signal: DualPolSignal, offset: float) -> DualPolSignal:
    """Undo a measured timing offset (circular, fractional)."""
    return fractional_delay(signal, -offset)


def cd_compensate(channel: DualPolSignal, length_km: float,
                  dispersion_ps_nm_km: float = 17.0) -> DualPolSignal:
    """Exact inverse of the link dispersion at this channel's absolute
    frequency position (per-channel independent filtering)."""
    return apply_cd(channel, length_km, dispersion_ps_nm_km, invert=True)


def _coarse_offset(stream: DualPolSignal, ref_symbols: np.ndarray, fmap: FrameMap,
                   symbol_rate: float, beta: float | None) -> float:
    """FFT-peak carrier estimate from pilot-conjugate products."""
    if beta is not None:
        stream = rrc_filter_exact(stream, beta, symbol_rate)
    s = fmap.sync_pilot_len
    rx = stream.pol_stack()[:, : 2 * s: 2]
    prods = [rx[a] * np.conj(ref_symbols[b]) for a in range(2) for b in range(2)]
    nfft = 1 << (int(np.ceil(np.log2(s))) + 3)
    spec = np.zeros(nfft)
    for z in prods:
        spec += np.abs(np.fft.fft(z, nfft)) ** 2
    kpk = int(np.argmax(spec))
    m_prev, m_next = spec[(kpk - 1) % nfft], spec[(kpk + 1) % nfft]
    denom = m_prev - 2 * spec[kpk] + m_next
    frac = 0.0 if denom == 0 else 0.5 * (m_prev - m_next) / denom
    f_hat = ((kpk + frac) / nfft) * symbol_rate
    if f_hat > symbol_rate / 2:
        f_hat -= symbol_rate
    return float(f_hat)


def _narrowband_filter(samples: np.ndarray, sample_rate: float, symbol_rate: float,
                       beta: float, f_cut: float) -> np.ndarray:
    n = samples.shape[-1]
    f = np.fft.fftfreq(n, d=1.0 / sample_rate)
    h = rrc_frequency_response(f, symbol_rate, beta) * (np.abs(f) <= f_cut)
    return np.fft.ifft(np.fft.fft(samples, axis=-1) * h, axis=-1)


def _raw_offset(stream: DualPolSignal, ref_symbols: np.ndarray, fmap: FrameMap,
                symbol_rate: float, beta: float | None = None) -> float:
    """Per-channel carrier estimate over the sync window.

    Coarse stage: FFT peak of pilot-conjugate products.  Fine stage: the
    coarse-derotated stream and a locally reconstructed reference are
    both passed through a narrow analysis filter (quarter symbol rate:
    below the demux leak-through of the neighbors), making the product
    deterministic up to the carrier; the residual slope comes from an LS
    line over unwrapped block phases.
    """
    f_hat = _coarse_offset(stream, ref_symbols, fmap, symbol_rate, beta)
    if beta is None:
        return f_hat
    s = fmap.sync_pilot_len
    f_cut = symbol_rate / 4.0
    derot = frequency_shift(stream, -f_hat)
    rx_f = _narrowband_filter(derot.pol_stack(), stream.sample_rate,
                              symbol_rate, beta, f_cut)[:, : 2 * s: 2]
    up = np.zeros((2, 2 * s), dtype=np.complex128)
    up[:, ::2] = ref_symbols
    ref_f = _narrowband_filter(up, 2 * symbol_rate, symbol_rate, beta,
                               f_cut)[:, ::2]
    trim = min(64, s // 8)
    sl = slice(trim, s - trim)
    prods = [rx_f[a, sl] * np.conj(ref_f[b, sl])
             for a in range(2) for b in range(2)]
    n_eff = s - 2 * trim
    n_blocks = 16
    blk = n_eff // n_blocks
    k_centers = (np.arange(n_blocks) + 0.5) * blk
    residual = 0.0
    for _ in range(2):
        rot = np.exp(-2j * np.pi * residual * np.arange(n_eff) / symbol_rate)
        q = np.zeros(n_eff, dtype=np.complex128)
        for z in prods:
            zd = z * rot
            q += zd * np.conj(np.mean(zd))
        m = q[: n_blocks * blk].reshape(n_blocks, blk).mean(axis=1)
        phases = np.unwrap(np.angle(m))
        slope = np.polyfit(k_centers, phases, 1)[0]
        residual += slope * symbol_rate / (2 * np.pi)
    return float(f_hat + residual)


def joint_foe(triple: list, channel_indices, known_sync_pilots,
              fmap: FrameMap, symbol_rate: float, beta: float | None = None) -> FoeResult:
    """Comb-aware frequency offset estimation over a channel group.

    ``known_sync_pilots`` is each channel's known (2, S) symbol block over
    the shared sync window (one array is broadcast to all channels).
    Per-channel raw offsets are regressed against the channel index with
    an exact least-squares line: the intercept is the shared center
    offset f0, the slope the line-spacing difference delta_f.  delta_f
    is returned for downstream handling rather than silently absorbed,
    which keeps the spectral alignment between channels intact.
    """
    channel_indices = np.asarray(channel_indices, dtype=np.float64)
    refs = known_sync_pilots
    if isinstance(refs, np.ndarray) and refs.ndim == 2:
        refs = [refs] * len(triple)
    raws = np.array([
        _raw_offset(s, ref, fmap, symbol_rate, beta) for s, ref in zip(triple, refs)
    ])
    limit = symbol_rate / 4
    if np.any(np.abs(raws) > limit):
        raise FoeRangeError(
            f"raw offset {raws[np.argmax(np.abs(raws))]:.3e} Hz beyond "
            f"pilot capture range +-{limit:.3e} Hz"
        )
    if len(triple) == 1:
        return FoeResult(float(raws[0]), 0.0, raws, channel_indices)
    coeffs = np.polyfit(channel_indices, raws, 1)
    return FoeResult(float(coeffs[1]), float(coeffs[0]), raws, channel_indices)


def delta_f_threshold(fmap: FrameMap, symbol_rate: float) -> float:
    """Below 1/(10 * frame duration) the residual line-spacing error is
    left to the carrier phase tracker."""
    return symbol_rate / (10.0 * fmap.frame_len)


def compensate_foe(triple: list, channel_indices, foe: FoeResult,
                   fmap: FrameMap, symbol_rate: float) -> tuple:
    """Remove f0 (always) and the per-channel i*delta_f term (only when it
    exceeds the CPE-trackable threshold).  Returns (streams, delta_applied)."""
    apply_delta = abs(foe.delta_f_hz) > delta_f_threshold(fmap, symbol_rate)
    out = []
    for sig, i in zip(triple, channel_indices):
        df = foe.f0_hz + (i * foe.delta_f_hz if apply_delta else 0.0)
        out.append(frequency_shift(sig, -df))
    return out, apply_delta


def prepare_aliased_inputs(triple: list, spacing: float, symbol_rate: float) -> np.ndarray:
    """Six aligned 2-SPS streams for the joint equalizer.

    The lower side channel shifts by -spacing and the upper by +spacing
    at the 2-SPS rate: the shifts wrap modulo 2*Rs, so the outer halves
    of the side channels fold back in -- the aliasing that reconstructs
    the frequency grid without upsampling.  The center channel passes
    through untouched.
    """
    if len(triple) != 3:
        raise ConfigurationError("prepare_aliased_inputs expects exactly 3 channels")
    lo, center, hi = triple
    n = len(center)
    res = center.sample_rate / n
    spacing_q = snap_frequency(spacing, res)
    lo_s = frequency_shift(lo, -spacing_q)
    hi_s = frequency_shift(hi, +spacing_q)
    n_common = min(len(lo_s), len(center), len(hi_s))
    return np.stack([
        lo_s.samples_x[:n_common], lo_s.samples_y[:n_common],
        center.samples_x[:n_common], center.samples_y[:n_common],
        hi_s.samples_x[:n_common], hi_s.samples_y[:n_common],
    ])


def _circular_pad(streams: np.ndarray, half: int) -> np.ndarray:
    return np.concatenate(
        [streams[:, -half:], streams, streams[:, :half]], axis=1
    )


def _equalize(streams: np.ndarray, state: EqualizerState, fmap: FrameMap,
              known_pilots: dict, constellation: ConstellationSpec,
              sps: int = 2) -> EqResult:
    n_symbols = streams.shape[1] // sps
    half = state.num_taps // 2
    # one common gain normalizes the adaptation operating point; applied
    # to all branches alike it cannot change relative weights, and makes
    # the output invariant to a common scalar on the inputs
    power = float(np.mean(np.abs(streams) ** 2))
    if power > 0:
        streams = streams / math.sqrt(power)
    inp = np.ascontiguousarray(_circular_pad(streams, half))
    taps = state.taps.copy()
    sync = np.ascontiguousarray(known_pilots["sync"])
    train_err, n_ok, diverged = lms_train(
        inp, sps, taps, sync, state.step_train, state.train_epochs,
        TAP_ENERGY_LIMIT,
    )
    if not diverged and state.train_epochs2 > 0 and state.step_train2 > 0:
        err2, n_ok, diverged = lms_train(
            inp, sps, taps, sync, state.step_train2, state.train_epochs2,
            TAP_ENERGY_LIMIT,
        )
        train_err = np.concatenate([train_err, err2])
    if diverged:
        raise AdaptationError(
            f"training diverged at step {n_ok}",
            diagnostics={"train_error": train_err[:n_ok], "taps": taps},
        )
    pilot_mask = np.zeros(n_symbols, dtype=np.bool_)
    pilot_syms = np.zeros((2, n_symbols), dtype=np.complex128)
    pilot_mask[fmap.sync_pilot_indices] = True
    pilot_syms[:, fmap.sync_pilot_indices] = sync
    pilot_mask[fmap.cpe_pilot_indices] = True
    pilot_syms[:, fmap.cpe_pilot_indices] = known_pilots["cpe"]
    out, err, theta, n_ok, diverged = lms_payload(
        inp, sps, taps, n_symbols, pilot_mask, pilot_syms,
        np.ascontiguousarray(constellation.points), state.step_dd,
        state.theta_gain, 0.0, state.freeze_after_training, TAP_ENERGY_LIMIT,
    )
    if diverged:
        raise AdaptationError(
            f"decision-directed adaptation diverged at symbol {n_ok}",
            diagnostics={"error_curve": err[:n_ok], "taps": taps,
                         "train_error": train_err},
        )
    return EqResult(symbols=out, taps=taps, error_curve=err,
                    train_error=train_err, theta_trace=theta)


def joint_equalize(streams6: np.ndarray, known_pilots: dict, state: EqualizerState,
                   fmap: FrameMap, constellation: ConstellationSpec) -> EqResult:
    """6x2 T/2-spaced MIMO equalization of the aliased channel group.

    LMS trains on the sync pilot sequence for ``state.train_epochs``
    epochs, then runs decision-directed over the frame with the phase
    tracker de-rotating the error term.  ``known_pilots`` carries
    "sync" (2, S) and "cpe" (2, P) symbol arrays of the center channel.
    """
    if state.mode != "joint6x2":
        raise ConfigurationError("joint_equalize needs a joint6x2 state")
    streams6 = np.asarray(streams6, dtype=np.complex128)
    if streams6.shape[0] != 6:
        raise ConfigurationError("joint_equalize expects 6 input streams")
    return _equalize(streams6, state, fmap, known_pilots, constellation)


def single_equalize(streams2: np.ndarray, known_pilots: dict, state: EqualizerState,
                    fmap: FrameMap, constellation: ConstellationSpec) -> EqResult:
    """2x2 baseline restricted to the center channel's pair of streams."""
    if state.mode != "single2x2":
        raise ConfigurationError("single_equalize needs a single2x2 state")
    streams2 = np.asarray(streams2, dtype=np.complex128)
    if streams2.shape[0] != 2:
        raise ConfigurationError("single_equalize expects 2 input streams")
    return _equalize(streams2, state, fmap, known_pilots, constellation)


def wideband_equalize(streams2: np.ndarray, state: EqualizerState, fmap: FrameMap,
                      known_pilots: dict, constellation: ConstellationSpec,
                      sps: int) -> EqResult:
    """2x2 equalizer at an arbitrary oversampling (oracle receivers)."""
    return _equalize(np.asarray(streams2, dtype=np.complex128), state, fmap,
                     known_pilots, constellation, sps=sps)


def cpe(symbols: np.ndarray, known_cpe_pilots: np.ndarray, fmap: FrameMap,
        num_average: int = 3) -> tuple:
    """Pilot-aided residual carrier phase estimation and correction.

    Per pilot, the phase is the argument of sum(r * conj(s)) over a
    sliding window of ``num_average`` pilots with both polarizations
    averaged; the unwrapped phase is linearly interpolated between
    pilots and removed.  Returns (corrected, phase_trace, warnings);
    warnings list pilot gaps whose phase step exceeds pi/2 (cycle-slip
    suspects).  Magnitudes are never altered.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    idx = fmap.cpe_pilot_indices
    z = np.sum(symbols[:, idx] * np.conj(known_cpe_pilots), axis=0)
    if num_average > 1:
        kernel = np.ones(num_average) / num_average
        pad = num_average // 2
        zp = np.concatenate([z[:pad][::-1], z, z[-pad:][::-1]])
        z = np.convolve(zp, kernel, mode="valid")[: len(idx)]
    phases = np.unwrap(np.angle(z))
    steps = np.diff(phases)
    warnings = [
        {"pilot_gap": int(i), "phase_step": float(s)}
        for i, s in enumerate(steps) if abs(s) > np.pi / 2
    ]
    trace = np.interp(np.arange(symbols.shape[1]), idx, phases)
    corrected = symbols * np.exp(-1j * trace)[None, :]
    return corrected, trace, warnings
