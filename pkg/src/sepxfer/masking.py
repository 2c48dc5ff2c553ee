"""Time-frequency masks, ideal binary assignments, bin weights, and
mask-based source reconstruction.

Whenever a (freq, time) matrix is flattened to a vector of TF bins, the
order is time-major: bin index = t * n_freq + f. The embedding and loss
code shares this convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import AudioSignal, ComplexSpectrogram, StftConfig, istft, stft

__all__ = [
    "Mask",
    "IdealAssignment",
    "BinWeights",
    "apply_mask",
    "ideal_binary_assignment",
    "magnitude_weights",
    "reconstruct_sources",
    "flatten_bins",
    "unflatten_bins",
]


def flatten_bins(matrix: np.ndarray) -> np.ndarray:
    """(freq, time) -> flat TF vector, time-major."""
    return np.ascontiguousarray(matrix.T).reshape(-1)


def unflatten_bins(flat: np.ndarray, n_freq: int, n_time: int) -> np.ndarray:
    """Inverse of :func:`flatten_bins`."""
    return flat.reshape(n_time, n_freq).T


@dataclass
class Mask:
    """Per-source real mask over (freq, time), entries in [0, 1]."""

    values: np.ndarray
    source_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"mask must be 2-D (freq, time), got {self.values.shape}")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("mask entries must lie in [0, 1]")


@dataclass
class IdealAssignment:
    """One-hot bin-to-source assignment, rows ordered time-major."""

    one_hot: np.ndarray
    n_freq: int
    n_time: int

    def __post_init__(self):
        self.one_hot = np.asarray(self.one_hot)
        if self.one_hot.ndim != 2:
            raise ValueError("one_hot must be (n_bins, n_sources)")
        if self.one_hot.shape[0] != self.n_freq * self.n_time:
            raise ValueError("one_hot row count must equal n_freq * n_time")
        if not np.array_equal(self.one_hot.sum(axis=1), np.ones(self.one_hot.shape[0])):
            raise ValueError("each assignment row must sum to exactly 1")

    @property
    def n_sources(self) -> int:
        return self.one_hot.shape[1]

    def to_masks(self) -> list[Mask]:
        """Realize the assignment as binary masks, one per source."""
        return [
            Mask(values=unflatten_bins(self.one_hot[:, c].astype(np.float64),
                                       self.n_freq, self.n_time),
                 source_index=c)
            for c in range(self.n_sources)
        ]


@dataclass
class BinWeights:
    """Nonnegative per-bin weights (time-major), summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a flat per-bin vector")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")


def apply_mask(mix: ComplexSpectrogram, mask: Mask) -> ComplexSpectrogram:
    """Elementwise product of mixture bins and mask; mixture phase is kept."""
    if mix.bins.shape != mask.values.shape:
        raise ValueError(
            f"mask shape {mask.values.shape} does not match spectrogram {mix.bins.shape}")
    masked = mix.bins * mask.values.astype(mix.bins.real.dtype)
    return ComplexSpectrogram(bins=masked, config=mix.config, sample_rate=mix.sample_rate)


def ideal_binary_assignment(source_mags: list[np.ndarray]) -> IdealAssignment:
    """Assign each TF bin to the source with the largest magnitude.

    Ties go to the lowest source index.
    """
    if len(source_mags) < 2:
        raise ValueError("need at least 2 sources for an ideal binary assignment")
    shapes = {m.shape for m in source_mags}
    if len(shapes) != 1:
        raise ValueError(f"source magnitude shapes differ: {sorted(shapes)}")
    stacked = np.stack(source_mags, axis=-1)  # (F, T, C)
    winners = np.argmax(stacked, axis=-1)     # first max wins ties
    n_freq, n_time = winners.shape
    flat = flatten_bins(winners)
    one_hot = np.zeros((flat.size, len(source_mags)), dtype=np.int8)
    one_hot[np.arange(flat.size), flat] = 1
    return IdealAssignment(one_hot=one_hot, n_freq=n_freq, n_time=n_time)


def magnitude_weights(mix_mag: np.ndarray) -> BinWeights:
    """Weights proportional to mixture magnitude, normalized to sum 1.

    An all-silent mixture falls back to uniform weights.
    """
    mix_mag = np.asarray(mix_mag, dtype=np.float64)
    if np.any(mix_mag < 0):
        raise ValueError("magnitudes must be nonnegative")
    total = mix_mag.sum()
    if total <= 0.0:
        flat = np.full(mix_mag.size, 1.0 / mix_mag.size)
    else:
        flat = flatten_bins(mix_mag) / total
    return BinWeights(weights=flat)


def reconstruct_sources(mix: AudioSignal, masks: list[Mask],
                        config: StftConfig) -> list[AudioSignal]:
    """Mask the mixture spectrogram per source and resynthesize waveforms."""
    spec = stft(mix, config)
    out = []
    for mask in masks:
        masked = apply_mask(spec, mask)
        out.append(istft(masked, length=len(mix)))
    return out
