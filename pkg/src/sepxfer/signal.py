"""Audio I/O, STFT analysis/synthesis, and resampling.

All spectrogram code uses one framing convention, fixed here:

* frame count for a length-L signal at hop h is ``ceil(L / h) + 1``;
* the signal is zero-padded by half a window at both ends before framing,
  so frame t starts at sample ``t * hop - window_length // 2`` of the
  original signal and every original sample is covered by full-weight
  window positions (exact least-squares reconstruction, edges included);
* synthesis overlap-adds with the same window and divides by the
  overlap-added squared window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "AudioSignal",
    "StftConfig",
    "ComplexSpectrogram",
    "sqrt_hann",
    "stft",
    "istft",
    "resample",
    "n_stft_frames",
    "read_wav",
    "write_wav",
]

# minimum overlap-added squared-window value for invertibility
_NOLA_FLOOR = 1e-10


@dataclass
class AudioSignal:
    """A mono waveform with its sample rate.

    samples: 1-D float array, finite, nominally in [-1, 1].
    sample_rate: Hz, positive.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.issubdtype(self.samples.dtype, np.floating):
            raise ValueError(f"samples must be floating point, got {self.samples.dtype}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def sqrt_hann(window_length: int) -> np.ndarray:
    """Elementwise square root of the periodic Hann window."""
    if window_length < 2 or window_length % 2 != 0:
        raise ValueError(f"window_length must be even and >= 2, got {window_length}")
    n = np.arange(window_length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_length)
    return np.sqrt(hann)


@dataclass
class StftConfig:
    """Analysis/synthesis parameters: window length, hop, window coefficients."""

    window_length: int
    hop_length: int
    window: np.ndarray = field(default=None)  # defaults to sqrt-Hann

    def __post_init__(self):
        if self.window is None:
            self.window = sqrt_hann(self.window_length)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window_length < 1:
            raise ValueError(f"window_length must be positive, got {self.window_length}")
        if not (0 < self.hop_length <= self.window_length):
            raise ValueError(
                f"hop_length must satisfy 0 < hop <= window_length, got "
                f"hop={self.hop_length}, window={self.window_length}")
        if self.window.shape != (self.window_length,):
            raise ValueError(
                f"window must have {self.window_length} coefficients, got {self.window.shape}")
        if np.any(self.window < 0) or not np.all(np.isfinite(self.window)):
            raise ValueError("window coefficients must be nonnegative and finite")

    @property
    def n_freq(self) -> int:
        return self.window_length // 2 + 1


@dataclass
class ComplexSpectrogram:
    """Complex STFT indexed (frequency, time)."""

    bins: np.ndarray
    config: StftConfig
    sample_rate: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 2:
            raise ValueError(f"bins must be 2-D (freq, time), got shape {self.bins.shape}")
        if self.bins.shape[0] != self.config.n_freq:
            raise ValueError(
                f"expected {self.config.n_freq} frequency rows for window length "
                f"{self.config.window_length}, got {self.bins.shape[0]}")
        if not np.all(np.isfinite(self.bins)):
            raise ValueError("spectrogram entries must be finite")

    @property
    def n_freq(self) -> int:
        return self.bins.shape[0]

    @property
    def n_time(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


def n_stft_frames(n_samples: int, hop_length: int) -> int:
    """Frame count: ceil(n_samples / hop) + 1."""
    return -(-n_samples // hop_length) + 1


def stft(signal: AudioSignal, config: StftConfig) -> ComplexSpectrogram:
    """One-sided STFT of a mono signal.

    The signal is zero-padded by window_length // 2 at both ends; each frame
    is windowed and transformed with a real FFT. Output is complex64 for
    float32 input, complex128 for float64.
    """
    x = signal.samples
    if x.size == 0:
        raise ValueError("cannot take the STFT of an empty signal")
    w = config.window_length
    h = config.hop_length
    n_frames = n_stft_frames(x.size, h)
    pad_front = w // 2
    last_start = (n_frames - 1) * h  # in padded coordinates
    total = last_start + w
    padded = np.zeros(total, dtype=x.dtype)
    padded[pad_front:pad_front + x.size] = x

    frames = np.lib.stride_tricks.sliding_window_view(padded, w)[::h][:n_frames]
    window = config.window.astype(x.dtype)
    bins = np.fft.rfft(frames * window, axis=1).T
    if x.dtype == np.float32:
        bins = bins.astype(np.complex64)
    return ComplexSpectrogram(bins=bins, config=config, sample_rate=signal.sample_rate)


def _ola_window_sq(config: StftConfig, n_frames: int, dtype) -> np.ndarray:
    w = config.window_length
    h = config.hop_length
    total = (n_frames - 1) * h + w
    wsq = (config.window.astype(dtype)) ** 2
    denom = np.zeros(total, dtype=dtype)
    for t in range(n_frames):
        denom[t * h:t * h + w] += wsq
    return denom


def istft(spec: ComplexSpectrogram, length: int | None = None) -> AudioSignal:
    """Least-squares inverse STFT (windowed overlap-add over sum(window^2)).

    Args:
        spec: spectrogram produced by :func:`stft` (or compatible).
        length: original signal length; when omitted the maximum length
            consistent with the frame count, ``(n_time - 1) * hop``, is used.

    Raises:
        ValueError: if the overlap-added squared window vanishes somewhere
            in the reconstructed region (perfect-reconstruction condition).
    """
    config = spec.config
    w = config.window_length
    h = config.hop_length
    n_frames = spec.n_time
    real_dtype = np.float32 if spec.bins.dtype == np.complex64 else np.float64

    if length is None:
        length = (n_frames - 1) * h
    pad_front = w // 2

    denom = _ola_window_sq(config, n_frames, real_dtype)
    region = denom[pad_front:pad_front + length]
    if region.size < length or np.min(region) < _NOLA_FLOOR:
        raise ValueError(
            "window/hop combination is not invertible over the requested length "
            "(overlap-added squared window vanishes)")

    frames = np.fft.irfft(spec.bins.T, n=w, axis=1).astype(real_dtype)
    window = config.window.astype(real_dtype)
    frames *= window
    out = np.zeros((n_frames - 1) * h + w, dtype=real_dtype)
    for t in range(n_frames):
        out[t * h:t * h + w] += frames[t]
    out[pad_front:pad_front + length] /= region
    return AudioSignal(samples=out[pad_front:pad_front + length].copy(),
                       sample_rate=spec.sample_rate)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

_KAISER_BETA = 8.6
_HALF_TAPS = 32  # kernel half-width, in samples of the band-limited rate
_ROLLOFF = 0.945


def resample(signal: AudioSignal, ratio: float) -> AudioSignal:
    """Band-limited resampling by windowed-sinc (Kaiser) interpolation.

    Output length is round(len * ratio); the kernel spans 64 taps at the
    anti-aliased rate. The sample_rate field is preserved: this changes the
    number of samples, i.e. playback at the original rate scales frequencies
    by 1 / ratio.
    """
    if not (0.25 <= ratio <= 4.0):
        raise ValueError(f"resample ratio must be in [0.25, 4.0], got {ratio}")
    x = signal.samples
    if ratio == 1.0:
        return AudioSignal(samples=x.copy(), sample_rate=signal.sample_rate)

    n_out = int(round(x.size * ratio))
    scale = min(1.0, ratio)            # <1 when decimating: widen the kernel
    cutoff = 0.5 * scale * _ROLLOFF    # cycles per input sample
    half_width = _HALF_TAPS / scale

    work_dtype = np.float64
    xw = x.astype(work_dtype)
    out = np.empty(n_out, dtype=work_dtype)

    j = np.arange(-int(math.ceil(half_width)), int(math.ceil(half_width)) + 1)
    chunk = max(1, int(2_000_000 / max(1, j.size)))
    for start in range(0, n_out, chunk):
        stop = min(n_out, start + chunk)
        pos = np.arange(start, stop) / ratio          # centers in input coords
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        offs = j[None, :] - frac[:, None]             # tap offsets from center
        idx = base[:, None] + j[None, :]
        valid = (idx >= 0) & (idx < x.size)
        taps = np.sinc(2.0 * cutoff * offs) * (2.0 * cutoff)
        u = offs / half_width
        win = np.zeros_like(u)
        inside = np.abs(u) <= 1.0
        win[inside] = np.i0(_KAISER_BETA * np.sqrt(1.0 - u[inside] ** 2)) / np.i0(_KAISER_BETA)
        taps *= win
        taps = np.where(valid, taps, 0.0)
        # unit DC gain per output sample (also evens out edge truncation)
        taps /= taps.sum(axis=1, keepdims=True)
        gathered = np.where(valid, xw[np.clip(idx, 0, x.size - 1)], 0.0)
        out[start:stop] = np.sum(gathered * taps, axis=1)

    return AudioSignal(samples=out.astype(x.dtype), sample_rate=signal.sample_rate)


# ---------------------------------------------------------------------------
# WAV files (mono; float32 or int16 PCM in, float32 out)
# ---------------------------------------------------------------------------


def read_wav(path) -> AudioSignal:
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV files are supported, got shape {data.shape}")
    if data.dtype == np.float32:
        samples = data
    elif data.dtype == np.int16:
        samples = (data / 32768.0).astype(np.float32)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype} "
                         "(expected float32 or int16)")
    return AudioSignal(samples=samples, sample_rate=int(rate))


def write_wav(path, signal: AudioSignal) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), signal.sample_rate, signal.samples.astype(np.float32))
