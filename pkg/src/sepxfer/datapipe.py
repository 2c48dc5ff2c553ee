"""Stem corpora, on-the-fly coherent/incoherent mixing, pitch-shift and
time-stretch augmentation, and procedural corpus generators.

A corpus on disk is `root/<song>/<source>.wav` plus a `corpus.txt` manifest:
source names one per line, a blank line, then song directory names one per
line. Within a song all stems share length and sample rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import AudioSignal, StftConfig, istft, read_wav, resample, stft, write_wav

__all__ = [
    "StemCorpus",
    "MixSpec",
    "StemProvenance",
    "TrainingExample",
    "load_corpus",
    "draw_coherent",
    "draw_incoherent",
    "draw_example",
    "pitch_shift",
    "time_stretch",
    "make_synthetic_corpus",
    "RECIPES",
]

MANIFEST_NAME = "corpus.txt"

# augmentation parameter ranges
PITCH_RANGE_SEMITONES = (-3.0, 3.0)
STRETCH_RANGE = (0.8, 1.2)

# phase vocoder analysis parameters
_PV_WINDOW = 512
_PV_HOP = 128


class StemCorpus:
    """A directory of songs, each holding one stem per source (lazily cached)."""

    def __init__(self, root: Path, source_names: list[str], song_names: list[str]):
        self.root = Path(root)
        self.source_names = list(source_names)
        self.song_names = list(song_names)
        self._cache: dict[int, dict[str, AudioSignal]] = {}
        if not self.source_names:
            raise ValueError(f"{root}: corpus declares no sources")
        if not self.song_names:
            raise ValueError(f"{root}: corpus declares no songs")

    @property
    def n_songs(self) -> int:
        return len(self.song_names)

    @property
    def n_sources(self) -> int:
        return len(self.source_names)

    def stems(self, song_index: int) -> dict[str, AudioSignal]:
        if song_index not in self._cache:
            song = self.song_names[song_index]
            loaded = {}
            for name in self.source_names:
                path = self.root / song / f"{name}.wav"
                if not path.exists():
                    raise FileNotFoundError(f"missing stem {path}")
                loaded[name] = read_wav(path)
            lengths = {len(s) for s in loaded.values()}
            rates = {s.sample_rate for s in loaded.values()}
            if len(lengths) != 1 or len(rates) != 1:
                raise ValueError(f"{song}: stems disagree on length or sample rate")
            self._cache[song_index] = loaded
        return self._cache[song_index]

    def song_length(self, song_index: int) -> int:
        return len(next(iter(self.stems(song_index).values())))

    @property
    def sample_rate(self) -> int:
        return next(iter(self.stems(0).values())).sample_rate


def load_corpus(root) -> StemCorpus:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {root}")
    sources: list[str] = []
    songs: list[str] = []
    section = sources
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            section = songs
            continue
        section.append(line)
    return StemCorpus(root=root, source_names=sources, song_names=songs)


def _write_manifest(root: Path, source_names, song_names) -> None:
    lines = list(source_names) + [""] + list(song_names)
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


@dataclass
class MixSpec:
    """How to draw training examples from a corpus."""

    mode: str = "coherent"
    chunk_seconds: float = 10.0
    augmentations: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("coherent", "incoherent"):
            raise ValueError(f"mode must be coherent or incoherent, got {self.mode!r}")
        if self.chunk_seconds <= 0:
            raise ValueError("chunk_seconds must be positive")
        bad = set(self.augmentations) - {"pitch_shift", "time_stretch"}
        if bad:
            raise ValueError(f"unknown augmentations: {sorted(bad)}")
        self.augmentations = tuple(self.augmentations)


@dataclass
class StemProvenance:
    source_name: str
    song_index: int
    offset: int
    pitch_semitones: float = 0.0
    stretch_rate: float = 1.0


@dataclass
class TrainingExample:
    mixture: AudioSignal
    sources: list[AudioSignal]
    provenance: list[StemProvenance] = field(default_factory=list)


def _chunk_samples(spec: MixSpec, sample_rate: int) -> int:
    return int(round(spec.chunk_seconds * sample_rate))


def _eligible_songs(corpus: StemCorpus, chunk: int) -> list[int]:
    eligible = [i for i in range(corpus.n_songs) if corpus.song_length(i) >= chunk]
    if not eligible:
        raise ValueError(
            f"no song in {corpus.root} is at least {chunk} samples long")
    return eligible


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if x.size >= n:
        return x[:n]
    out = np.zeros(n, dtype=x.dtype)
    out[:x.size] = x
    return out


def _draw_aug_params(spec: MixSpec, rng: np.random.Generator):
    pitch = float(rng.uniform(*PITCH_RANGE_SEMITONES)) if "pitch_shift" in spec.augmentations else 0.0
    rate = float(rng.uniform(*STRETCH_RANGE)) if "time_stretch" in spec.augmentations else 1.0
    return pitch, rate


def _process_stem(samples: np.ndarray, sample_rate: int, chunk: int,
                  pitch: float, rate: float) -> np.ndarray:
    out = AudioSignal(samples=samples, sample_rate=sample_rate)
    if pitch != 0.0:
        out = pitch_shift(out, pitch)
    if rate != 1.0:
        out = time_stretch(out, rate)
    return _fit_length(out.samples, chunk)


def draw_coherent(corpus: StemCorpus, spec: MixSpec,
                  rng: np.random.Generator) -> TrainingExample:
    """One song, one offset, one set of augmentation parameters shared by
    every stem; the mixture is the exact sample-wise sum of the processed
    stems."""
    sr = corpus.sample_rate
    chunk = _chunk_samples(spec, sr)
    eligible = _eligible_songs(corpus, chunk)
    song = eligible[int(rng.integers(len(eligible)))]
    offset = int(rng.integers(corpus.song_length(song) - chunk + 1))
    pitch, rate = _draw_aug_params(spec, rng)

    stems = corpus.stems(song)
    processed, provenance = [], []
    for name in corpus.source_names:
        excerpt = stems[name].samples[offset:offset + chunk]
        processed.append(_process_stem(excerpt, sr, chunk, pitch, rate))
        provenance.append(StemProvenance(name, song, offset, pitch, rate))
    mixture = np.sum(np.stack(processed), axis=0)
    return TrainingExample(
        mixture=AudioSignal(samples=mixture, sample_rate=sr),
        sources=[AudioSignal(samples=s, sample_rate=sr) for s in processed],
        provenance=provenance)


def draw_incoherent(corpus: StemCorpus, spec: MixSpec,
                    rng: np.random.Generator) -> TrainingExample:
    """Song, offset, and augmentation parameters drawn independently per
    source slot."""
    sr = corpus.sample_rate
    chunk = _chunk_samples(spec, sr)
    eligible = _eligible_songs(corpus, chunk)

    processed, provenance = [], []
    for name in corpus.source_names:
        song = eligible[int(rng.integers(len(eligible)))]
        offset = int(rng.integers(corpus.song_length(song) - chunk + 1))
        pitch, rate = _draw_aug_params(spec, rng)
        excerpt = corpus.stems(song)[name].samples[offset:offset + chunk]
        processed.append(_process_stem(excerpt, sr, chunk, pitch, rate))
        provenance.append(StemProvenance(name, song, offset, pitch, rate))
    mixture = np.sum(np.stack(processed), axis=0)
    return TrainingExample(
        mixture=AudioSignal(samples=mixture, sample_rate=sr),
        sources=[AudioSignal(samples=s, sample_rate=sr) for s in processed],
        provenance=provenance)


def draw_example(corpus: StemCorpus, spec: MixSpec,
                 rng: np.random.Generator) -> TrainingExample:
    if spec.mode == "coherent":
        return draw_coherent(corpus, spec, rng)
    return draw_incoherent(corpus, spec, rng)


# ---------------------------------------------------------------------------
# augmentations
# ---------------------------------------------------------------------------


def _phase_vocoder(bins: np.ndarray, rate: float, hop: int, window_length: int) -> np.ndarray:
    """Resample a spectrogram along time while advancing phase coherently."""
    n_freq, n_time = bins.shape
    omega = 2.0 * np.pi * np.arange(n_freq) * hop / window_length
    steps = np.arange(0.0, n_time, rate)
    padded = np.pad(bins, [(0, 0), (0, 2)])
    out = np.empty((n_freq, steps.size), dtype=np.complex128)
    phase_acc = np.angle(padded[:, 0])
    for k, step in enumerate(steps):
        m = int(step)
        frac = step - m
        col0 = padded[:, m]
        col1 = padded[:, m + 1]
        mag = (1.0 - frac) * np.abs(col0) + frac * np.abs(col1)
        out[:, k] = mag * np.exp(1j * phase_acc)
        dphase = np.angle(col1) - np.angle(col0) - omega
        dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
        phase_acc += omega + dphase
    return out


def time_stretch(signal: AudioSignal, rate: float) -> AudioSignal:
    """Phase-vocoder time stretch: output length ~ len / rate, pitch kept."""
    if not (0.5 <= rate <= 2.0):
        raise ValueError(f"stretch rate must be in [0.5, 2.0], got {rate}")
    if len(signal) < _PV_WINDOW:
        raise ValueError(f"signal too short to stretch (need >= {_PV_WINDOW} samples)")
    config = StftConfig(window_length=_PV_WINDOW, hop_length=_PV_HOP)
    spec = stft(signal, config)
    stretched = _phase_vocoder(spec.bins.astype(np.complex128), rate,
                               _PV_HOP, _PV_WINDOW)
    if signal.samples.dtype == np.float32:
        stretched = stretched.astype(np.complex64)
    out_spec = type(spec)(bins=stretched, config=config, sample_rate=signal.sample_rate)
    target = int(round(len(signal) / rate))
    avail = (out_spec.n_time - 1) * _PV_HOP
    audio = istft(out_spec, length=min(target, avail))
    return AudioSignal(samples=_fit_length(audio.samples, target),
                       sample_rate=signal.sample_rate)


def pitch_shift(signal: AudioSignal, semitones: float) -> AudioSignal:
    """Shift pitch by time-stretching (factor 2^(s/12)) then resampling back
    to the original length; output length equals the input length."""
    if abs(semitones) > 12.0:
        raise ValueError(f"semitones must be within +-12, got {semitones}")
    factor = 2.0 ** (-semitones / 12.0)
    stretched = time_stretch(signal, rate=factor)
    shifted = resample(stretched, ratio=factor)
    return AudioSignal(samples=_fit_length(shifted.samples, len(signal)),
                       sample_rate=signal.sample_rate)


# ---------------------------------------------------------------------------
# procedural stem generators
# ---------------------------------------------------------------------------


def _normalize_rms(x: np.ndarray, target_rms: float) -> np.ndarray:
    rms = float(np.sqrt(np.mean(x**2)))
    if rms < 1e-12:
        return x
    return x * (target_rms / rms)


def _tone_complex(rng, n, sr, f0_range, n_harmonics, vibrato=0.004):
    """Harmonic stack with a random fundamental per call, light vibrato and
    slow amplitude modulation; never silent."""
    f0 = rng.uniform(*f0_range)
    t = np.arange(n) / sr
    vib = 1.0 + vibrato * np.sin(2.0 * np.pi * rng.uniform(4.0, 7.0) * t
                                 + rng.uniform(0, 2 * np.pi))
    base_phase = 2.0 * np.pi * f0 * np.cumsum(vib) / sr
    am = 1.0 + 0.3 * np.sin(2.0 * np.pi * rng.uniform(0.3, 1.2) * t
                            + rng.uniform(0, 2 * np.pi))
    x = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        if k * f0 * (1.0 + vibrato) >= 0.45 * sr:
            break
        amp = (1.0 / k) * rng.uniform(0.8, 1.2)
        x += amp * np.sin(k * base_phase + rng.uniform(0, 2 * np.pi))
    x *= am
    return _normalize_rms(x, rng.uniform(0.10, 0.16))


def _bandpass(x: np.ndarray, sr: int, lo: float, hi: float, edge: float = 100.0):
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sr)
    gain = np.zeros_like(freqs)
    rise = np.clip((freqs - (lo - edge)) / edge, 0.0, 1.0)
    fall = np.clip(((hi + edge) - freqs) / edge, 0.0, 1.0)
    gain = 0.5 * (1 - np.cos(np.pi * rise)) * 0.5 * (1 - np.cos(np.pi * fall))
    return np.fft.irfft(spectrum * gain, n=x.size)


def _hit_envelope(rng, n, sr, rate_range, decay_range, floor):
    env = np.full(n, floor)
    pos = int(rng.uniform(0, sr / rate_range[0]))
    while pos < n:
        tau = rng.uniform(*decay_range) * sr
        length = min(n - pos, int(8 * tau))
        amp = rng.uniform(0.7, 1.3)
        env[pos:pos + length] += amp * np.exp(-np.arange(length) / tau)
        pos += int(sr / rng.uniform(*rate_range))
    return env


def _noise_bursts(rng, n, sr, band, rate_range=(1.5, 4.0), decay_range=(0.05, 0.15)):
    noise = _bandpass(rng.standard_normal(n), sr, *band)
    env = _hit_envelope(rng, n, sr, rate_range, decay_range, floor=0.25)
    return _normalize_rms(noise * env, rng.uniform(0.10, 0.16))


def _noise_hits(rng, n, sr, band, rate_range=(2.0, 5.0), decay_range=(0.03, 0.08)):
    noise = _bandpass(rng.standard_normal(n), sr, *band)
    env = _hit_envelope(rng, n, sr, rate_range, decay_range, floor=0.2)
    return _normalize_rms(noise * env, rng.uniform(0.10, 0.16))


def _chirp_train(rng, n, sr, f_range):
    """Back-to-back linear sweeps between random frequencies in a band."""
    freq = np.empty(n)
    pos = 0
    f_cur = rng.uniform(*f_range)
    while pos < n:
        seg = min(n - pos, int(rng.uniform(0.4, 0.8) * sr))
        f_next = rng.uniform(*f_range)
        freq[pos:pos + seg] = np.linspace(f_cur, f_next, seg, endpoint=False)
        f_cur = f_next
        pos += seg
    phase = 2.0 * np.pi * np.cumsum(freq) / sr
    am = 1.0 + 0.2 * np.sin(2.0 * np.pi * rng.uniform(0.3, 1.0) * np.arange(n) / sr
                            + rng.uniform(0, 2 * np.pi))
    return _normalize_rms(np.sin(phase + rng.uniform(0, 2 * np.pi)) * am,
                          rng.uniform(0.10, 0.16))


def _harmonic_vs_noise(rng, n, sr):
    return {
        "harmonic": _tone_complex(rng, n, sr, (110.0, 440.0), 8),
        "noise": _noise_bursts(rng, n, sr, band=(1800.0, 3600.0)),
    }


def _tones_low_vs_high(rng, n, sr):
    return {
        "low": _tone_complex(rng, n, sr, (130.0, 250.0), 5),
        "high": _tone_complex(rng, n, sr, (950.0, 1700.0), 2),
    }


def _chirps_vs_drums_like(rng, n, sr):
    return {
        "chirps": _chirp_train(rng, n, sr, (250.0, 1500.0)),
        "drums": _noise_hits(rng, n, sr, band=(150.0, 3600.0)),
    }


RECIPES = {
    "harmonic_vs_noise": _harmonic_vs_noise,
    "tones_low_vs_high": _tones_low_vs_high,
    "chirps_vs_drums_like": _chirps_vs_drums_like,
}


def make_synthetic_corpus(recipe: str, n_songs: int, song_seconds: float,
                          seed: int, root, sample_rate: int = 16000) -> StemCorpus:
    """Write a procedurally generated stem corpus to `root` and load it.

    Deterministic: the same arguments always produce byte-identical files.
    """
    if recipe not in RECIPES:
        raise ValueError(
            f"unknown recipe {recipe!r}; valid recipes: {', '.join(sorted(RECIPES))}")
    if n_songs < 1 or song_seconds <= 0:
        raise ValueError("need at least one song of positive duration")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    generate = RECIPES[recipe]
    n = int(round(song_seconds * sample_rate))
    song_names = []
    source_names = None
    for i in range(n_songs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        stems = generate(rng, n, sample_rate)
        if source_names is None:
            source_names = list(stems)
        song = f"song{i:03d}"
        song_names.append(song)
        for name, samples in stems.items():
            write_wav(root / song / f"{name}.wav",
                      AudioSignal(samples=samples.astype(np.float32),
                                  sample_rate=sample_rate))
    _write_manifest(root, source_names, song_names)
    return load_corpus(root)
