"""Physical impairments: AWGN, laser phase noise, chromatic dispersion,
polarization rotation and finite-resolution quantization.

All operations are pure: they preserve length, sample rate and
center-offset metadata, and take any randomness as an explicit
generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .sigkit import DualPolSignal

SPEED_OF_LIGHT = 299_792_458.0
REFERENCE_WAVELENGTH_NM = 1550.0
DEFAULT_DISPERSION_PS_NM_KM = 17.0


@dataclass(frozen=True)
class ImpairmentConfig:
    """Channel and transceiver impairment knobs.

    ``snr_db`` is defined per dual-pol symbol at the post-matched-filter
    reference point; ``math.inf`` sentinels disable AWGN / quantization.
    """

    snr_db: float = math.inf
    enob: float = math.inf
    clip_sigma: float = 3.0
    linewidth: float = 0.0
    fiber_len_km: float = 0.0
    dispersion_ps_nm_km: float = DEFAULT_DISPERSION_PS_NM_KM
    pol_rotation_seed: int = 0

    def __post_init__(self):
        if not (math.isinf(self.snr_db) or math.isfinite(self.snr_db)):
            raise ConfigurationError("snr_db must be finite or inf")
        if not self.enob > 1:
            raise ConfigurationError(f"enob must be > 1 (or inf), got {self.enob}")
        if self.fiber_len_km < 0:
            raise ConfigurationError("fiber_len_km must be >= 0")
        if not self.clip_sigma > 0:
            raise ConfigurationError("clip_sigma must be > 0")
        if self.linewidth < 0:
            raise ConfigurationError("linewidth must be >= 0")


def add_awgn(signal: DualPolSignal, snr_db: float, symbol_rate: float,
             rng: np.random.Generator, ref_power: float | None = None) -> DualPolSignal:
    """Add circular complex Gaussian noise for a target post-matched-filter SNR.

    The per-sample noise variance is scaled by the sample_rate /
    symbol_rate bandwidth ratio so that after matched filtering the
    per-polarization symbol SNR equals ``snr_db``.  ``ref_power``
    overrides the per-polarization signal power reference (used when the
    buffer carries several channels).
    """
    if math.isinf(snr_db):
        return replace(signal, center_offset=signal.center_offset)
    power = signal.mean_power() if ref_power is None else ref_power
    if power <= 0:
        raise ConfigurationError("cannot set an SNR on a zero-power signal")
    var = power * (signal.sample_rate / symbol_rate) / 10.0 ** (snr_db / 10.0)
    scale = math.sqrt(var / 2.0)
    n = len(signal)
    nx = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    ny = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return signal.with_samples(signal.samples_x + nx, signal.samples_y + ny)


def apply_phase_noise(signal: DualPolSignal, linewidth: float,
                      rng: np.random.Generator) -> DualPolSignal:
    """Multiply both polarizations by a Wiener phase process exp(j*phi).

    Increment variance per sample is 2*pi*linewidth/sample_rate, the
    Lorentzian-equivalent random walk; the same trajectory multiplies
    both polarizations.
    """
    if linewidth < 0:
        raise ConfigurationError("linewidth must be >= 0")
    if linewidth == 0:
        return replace(signal, center_offset=signal.center_offset)
    dphi = rng.standard_normal(len(signal)) * math.sqrt(
        2 * np.pi * linewidth / signal.sample_rate
    )
    rot = np.exp(1j * np.cumsum(dphi))
    return signal.with_samples(signal.samples_x * rot, signal.samples_y * rot)


def wiener_phase(linewidth: float, n: int, sample_rate: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Standalone Wiener phase trajectory (shared-LO use)."""
    if linewidth == 0:
        return np.zeros(n)
    dphi = rng.standard_normal(n) * math.sqrt(2 * np.pi * linewidth / sample_rate)
    return np.cumsum(dphi)


def _cd_phase(signal: DualPolSignal, length_km: float, dispersion_ps_nm_km: float,
              wavelength_nm: float) -> np.ndarray:
    f_abs = np.fft.fftfreq(len(signal), d=1.0 / signal.sample_rate) + signal.center_offset
    lam = wavelength_nm * 1e-9
    d_si = dispersion_ps_nm_km * 1e-6          # ps/(nm km) -> s/m^2
    return np.pi * lam**2 * d_si * (length_km * 1e3) * f_abs**2 / SPEED_OF_LIGHT


def apply_cd(signal: DualPolSignal, length_km: float,
             dispersion_ps_nm_km: float = DEFAULT_DISPERSION_PS_NM_KM,
             wavelength_nm: float = REFERENCE_WAVELENGTH_NM,
             invert: bool = False) -> DualPolSignal:
    """All-pass chromatic dispersion H(f) = exp(-j*pi*lambda^2*D*L*f^2/c).

    Frequencies are absolute (buffer frequency + center_offset) so
    separately detected channels see a consistent dispersion profile.
    ``invert=True`` applies the exact inverse (receiver-side
    compensation).
    """
    if length_km < 0:
        raise ConfigurationError("length_km must be >= 0")
    if length_km == 0:
        return replace(signal, center_offset=signal.center_offset)
    phase = _cd_phase(signal, length_km, dispersion_ps_nm_km, wavelength_nm)
    h = np.exp((1j if invert else -1j) * phase)
    x = np.fft.ifft(np.fft.fft(signal.samples_x) * h)
    y = np.fft.ifft(np.fft.fft(signal.samples_y) * h)
    return signal.with_samples(x, y)


def random_jones(rng: np.random.Generator) -> np.ndarray:
    """Haar-random 2x2 unitary (QR of a complex Gaussian, phase-fixed)."""
    z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def apply_pol_rotation(signal: DualPolSignal, matrix: np.ndarray | None = None,
                       rng: np.random.Generator | None = None) -> DualPolSignal:
    """Apply one 2x2 unitary Jones matrix to every (x, y) sample pair."""
    if matrix is None:
        if rng is None:
            raise ConfigurationError("apply_pol_rotation needs a matrix or an rng")
        matrix = random_jones(rng)
    matrix = np.asarray(matrix, dtype=np.complex128)
    if matrix.shape != (2, 2) or np.max(
        np.abs(matrix @ matrix.conj().T - np.eye(2))
    ) > 1e-9:
        raise ConfigurationError("polarization rotation matrix is not unitary")
    x = matrix[0, 0] * signal.samples_x + matrix[0, 1] * signal.samples_y
    y = matrix[1, 0] * signal.samples_x + matrix[1, 1] * signal.samples_y
    return signal.with_samples(x, y)


def _quantize_rail(v: np.ndarray, enob: float, clip_sigma: float) -> np.ndarray:
    sigma = math.sqrt(np.mean(v**2))
    if sigma == 0:
        return v.copy()
    amp = clip_sigma * sigma
    levels = round(2.0**enob)
    step = 2 * amp / levels
    lower = -((levels + 1) // 2)
    idx = np.clip(np.floor(v / step), lower, lower + levels - 1)
    return (idx + 0.5) * step


def quantize(signal: DualPolSignal, enob: float, clip_sigma: float = 3.0) -> DualPolSignal:
    """Hard-clip and uniformly quantize each rail (I/Q of each polarization).

    Rails are clipped at +-clip_sigma times their own RMS, then mid-rise
    quantized with round(2**enob) levels across the clip range.
    Fractional ENOBs are realized through the level count.
    """
    if not enob > 1:
        raise ConfigurationError(f"enob must be > 1 (or inf), got {enob}")
    if math.isinf(enob):
        return replace(signal, center_offset=signal.center_offset)
    x = (_quantize_rail(signal.samples_x.real, enob, clip_sigma)
         + 1j * _quantize_rail(signal.samples_x.imag, enob, clip_sigma))
    y = (_quantize_rail(signal.samples_y.real, enob, clip_sigma)
         + 1j * _quantize_rail(signal.samples_y.imag, enob, clip_sigma))
    return signal.with_samples(x, y)
