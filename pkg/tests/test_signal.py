import numpy as np
import pytest

from sepxfer.signal import (AudioSignal, ComplexSpectrogram, StftConfig, istft,
                            n_stft_frames, read_wav, resample, sqrt_hann, stft,
                            write_wav)

REF_CONFIG = dict(window_length=512, hop_length=128)


def rel_rms(a, b):
    return np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b**2))


def reconstruction_snr_db(original, reconstructed):
    err = np.mean((original - reconstructed) ** 2)
    if err == 0:
        return np.inf
    return 10 * np.log10(np.mean(original**2) / err)


# ---------------------------------------------------------------------------
# sqrt_hann
# ---------------------------------------------------------------------------


def test_sqrt_hann_squares_to_periodic_hann():
    w = sqrt_hann(512)
    n = np.arange(512)
    expected = 0.5 - 0.5 * np.cos(2 * np.pi * n / 512)
    assert np.allclose(w**2, expected, atol=1e-12)
    assert w[256] == 1.0  # midpoint peak
    assert np.all((w >= 0) & (w <= 1))


def test_sqrt_hann_length_four_exact():
    # periodic Hann at n=0..3 is [0, 0.5, 1, 0.5]
    assert np.allclose(sqrt_hann(4), [0.0, np.sqrt(0.5), 1.0, np.sqrt(0.5)], atol=1e-15)


@pytest.mark.parametrize("bad", [1, 0, -4, 3])
def test_sqrt_hann_rejects_degenerate_lengths(bad):
    with pytest.raises(ValueError):
        sqrt_hann(bad)


# ---------------------------------------------------------------------------
# stft
# ---------------------------------------------------------------------------


def test_stft_pure_cosine_concentrates_in_one_bin():
    # an interior frame of a bin-8 cosine has all its energy in bin 8
    n = 1536
    x = np.cos(2 * np.pi * 8 * np.arange(n) / 512)
    config = StftConfig(window_length=512, hop_length=512, window=np.ones(512))
    spec = stft(AudioSignal(samples=x, sample_rate=16000), config)
    frame = np.abs(spec.bins[:, 1])  # frame 1 covers samples 256..767
    peak = frame[8]
    assert peak > 100
    others = np.delete(frame, 8)
    assert others.max() < 1e-9 * peak


def test_stft_zero_signal_gives_zero_spectrogram():
    sig = AudioSignal(samples=np.zeros(4096), sample_rate=16000)
    spec = stft(sig, StftConfig(**REF_CONFIG))
    assert np.all(spec.bins == 0)


def test_stft_reference_frame_count():
    # 10 s at 16 kHz with the reference config: 257 x (ceil(160000/128)+1)
    sig = AudioSignal(samples=np.zeros(160000), sample_rate=16000)
    spec = stft(sig, StftConfig(**REF_CONFIG))
    assert spec.n_freq == 257
    assert spec.n_time == -(-160000 // 128) + 1 == 1251


@pytest.mark.parametrize("n_samples", [100, 511, 512, 1000, 16001])
def test_stft_frame_count_formula(n_samples):
    sig = AudioSignal(samples=np.ones(n_samples), sample_rate=16000)
    spec = stft(sig, StftConfig(**REF_CONFIG))
    assert spec.n_time == n_stft_frames(n_samples, 128)
    assert spec.n_time == int(np.ceil(n_samples / 128)) + 1


def test_stft_rejects_empty_signal():
    sig = AudioSignal(samples=np.zeros(0), sample_rate=16000)
    with pytest.raises(ValueError):
        stft(sig, StftConfig(**REF_CONFIG))


def test_stft_linearity():
    rng = np.random.default_rng(3)
    config = StftConfig(**REF_CONFIG)
    x = rng.standard_normal(5000)
    y = rng.standard_normal(5000)
    a, b = 2.5, -0.7
    lhs = stft(AudioSignal(samples=a * x + b * y, sample_rate=16000), config).bins
    rhs = (a * stft(AudioSignal(samples=x, sample_rate=16000), config).bins
           + b * stft(AudioSignal(samples=y, sample_rate=16000), config).bins)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)) < 1e-6


def test_stft_parseval_energy_consistency():
    # white-noise energy matches the spectrogram energy after overlap and
    # window normalization, within 1%
    rng = np.random.default_rng(4)
    x = rng.standard_normal(160000)
    config = StftConfig(**REF_CONFIG)
    spec = stft(AudioSignal(samples=x, sample_rate=16000), config)
    weights = np.full(spec.n_freq, 2.0)
    weights[0] = weights[-1] = 1.0  # one-sided spectrum double-counts the middle bins
    spec_energy = np.sum(weights[:, None] * np.abs(spec.bins) ** 2)
    # per Parseval: sum |X_f|^2 = W * sum of windowed frame energy; each signal
    # sample is seen by sum(window^2)/hop frames on average
    expected = np.sum(x**2) * np.sum(config.window**2) / config.hop_length * 512
    assert abs(spec_energy - expected) / expected < 0.01


# ---------------------------------------------------------------------------
# istft
# ---------------------------------------------------------------------------


def test_istft_round_trip_double_precision():
    rng = np.random.default_rng(5)
    config = StftConfig(**REF_CONFIG)
    for _ in range(5):
        x = rng.standard_normal(int(rng.integers(2000, 40000)))
        sig = AudioSignal(samples=x, sample_rate=16000)
        rec = istft(stft(sig, config), length=x.size)
        assert rel_rms(rec.samples, x) < 1e-6


def test_istft_round_trip_single_precision():
    rng = np.random.default_rng(6)
    config = StftConfig(**REF_CONFIG)
    x = rng.standard_normal(30000).astype(np.float32)
    sig = AudioSignal(samples=x, sample_rate=16000)
    rec = istft(stft(sig, config), length=x.size)
    assert rec.samples.dtype == np.float32
    assert rel_rms(rec.samples.astype(np.float64), x.astype(np.float64)) < 1e-3


def test_istft_zero_spectrogram_is_silence():
    config = StftConfig(**REF_CONFIG)
    spec = ComplexSpectrogram(bins=np.zeros((257, 40), dtype=complex),
                              config=config, sample_rate=16000)
    out = istft(spec, length=4000)
    assert np.all(out.samples == 0)
    assert len(out) == 4000


def test_istft_rejects_non_invertible_hop():
    # hop == window with sqrt-Hann: the overlap-added squared window has zeros
    sig = AudioSignal(samples=np.ones(4096), sample_rate=16000)
    spec = stft(sig, StftConfig(window_length=512, hop_length=512))
    with pytest.raises(ValueError):
        istft(spec, length=4096)


# ---------------------------------------------------------------------------
# resample
# ---------------------------------------------------------------------------


def test_resample_identity():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(1000)
    out = resample(AudioSignal(samples=x, sample_rate=16000), 1.0)
    assert rel_rms(out.samples, x) < 1e-6


def test_resample_length_rule():
    sig = AudioSignal(samples=np.zeros(1000), sample_rate=16000)
    assert len(resample(sig, 0.5)) == 500
    assert len(resample(sig, 1.5)) == 1500


def test_resample_shifts_sinusoid_frequency():
    sr = 16000
    x = np.sin(2 * np.pi * 440 * np.arange(sr) / sr)
    out = resample(AudioSignal(samples=x, sample_rate=sr), 2.0)
    spec = np.abs(np.fft.rfft(out.samples))
    bin_hz = sr / len(out)
    assert abs(np.argmax(spec) * bin_hz - 220.0) <= bin_hz


def test_resample_preserves_midband_energy():
    sr = 16000
    x = np.sin(2 * np.pi * 440 * np.arange(sr) / sr)
    for ratio in (0.5, 0.8, 1.25, 2.0):
        out = resample(AudioSignal(samples=x, sample_rate=sr), ratio)
        drift = 10 * np.log10(np.mean(out.samples**2) / np.mean(x**2))
        assert abs(drift) < 0.5


@pytest.mark.parametrize("ratio", [0.1, 4.5, -1.0])
def test_resample_rejects_out_of_range_ratio(ratio):
    sig = AudioSignal(samples=np.zeros(100), sample_rate=16000)
    with pytest.raises(ValueError):
        resample(sig, ratio)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def test_wav_float32_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    x = (rng.uniform(-0.5, 0.5, 4000)).astype(np.float32)
    path = tmp_path / "a.wav"
    write_wav(path, AudioSignal(samples=x, sample_rate=16000))
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.array_equal(back.samples, x)


def test_wav_reads_int16(tmp_path):
    from scipy.io import wavfile

    data = (np.linspace(-0.5, 0.5, 100) * 32768).astype(np.int16)
    path = tmp_path / "b.wav"
    wavfile.write(str(path), 8000, data)
    sig = read_wav(path)
    assert sig.samples.dtype == np.float32
    assert np.allclose(sig.samples, data / 32768.0)


def test_audio_signal_rejects_nonfinite():
    with pytest.raises(ValueError):
        AudioSignal(samples=np.array([0.0, np.nan]), sample_rate=16000)
    with pytest.raises(ValueError):
        AudioSignal(samples=np.zeros(4), sample_rate=0)
