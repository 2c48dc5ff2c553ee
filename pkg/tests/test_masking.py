import numpy as np
import pytest

from sepxfer.masking import (BinWeights, IdealAssignment, Mask, apply_mask,
                             flatten_bins, ideal_binary_assignment,
                             magnitude_weights, reconstruct_sources, unflatten_bins)
from sepxfer.signal import AudioSignal, ComplexSpectrogram, StftConfig, stft


def make_spec(bins):
    config = StftConfig(window_length=(bins.shape[0] - 1) * 2, hop_length=bins.shape[0] - 1)
    return ComplexSpectrogram(bins=bins, config=config, sample_rate=16000)


def test_flatten_bins_is_time_major():
    m = np.arange(6).reshape(3, 2)  # (freq=3, time=2)
    flat = flatten_bins(m)
    # bin index t * n_freq + f
    assert flat.tolist() == [0, 2, 4, 1, 3, 5]
    assert np.array_equal(unflatten_bins(flat, 3, 2), m)


def test_apply_mask_identity_and_zero():
    rng = np.random.default_rng(0)
    bins = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    spec = make_spec(bins)
    ones = Mask(values=np.ones((5, 4)), source_index=0)
    zeros = Mask(values=np.zeros((5, 4)), source_index=1)
    assert np.array_equal(apply_mask(spec, ones).bins, bins)
    assert np.all(apply_mask(spec, zeros).bins == 0)


def test_apply_mask_scales_magnitude_keeps_phase():
    bins = 2.0 * np.exp(1j * np.linspace(0, 3, 12)).reshape(3, 4)
    spec = make_spec(bins)
    half = Mask(values=np.full((3, 4), 0.5), source_index=0)
    out = apply_mask(spec, half).bins
    assert np.allclose(np.abs(out), 1.0)
    assert np.allclose(np.angle(out), np.angle(bins))


def test_apply_mask_shape_mismatch():
    spec = make_spec(np.zeros((5, 4), dtype=complex))
    with pytest.raises(ValueError):
        apply_mask(spec, Mask(values=np.ones((5, 5)), source_index=0))


def test_mask_range_validation():
    with pytest.raises(ValueError):
        Mask(values=np.array([[1.5]]), source_index=0)
    with pytest.raises(ValueError):
        Mask(values=np.array([[-0.1]]), source_index=0)


def test_ideal_assignment_disjoint_support():
    a = np.zeros((4, 3))
    b = np.zeros((4, 3))
    a[:2] = 1.0
    b[2:] = 1.0
    assignment = ideal_binary_assignment([a, b])
    masks = assignment.to_masks()
    assert np.array_equal(masks[0].values, (a > 0).astype(float))
    assert np.array_equal(masks[1].values, (b > 0).astype(float))


def test_ideal_assignment_argmax_and_tie_break():
    a = np.array([[3.0, 4.0]])
    b = np.array([[5.0, 4.0]])
    assignment = ideal_binary_assignment([a, b])
    # bin (0,0): mags (3,5) -> source 1; bin (0,1): tie (4,4) -> source 0
    grid = unflatten_bins(np.argmax(assignment.one_hot, axis=1), 1, 2)
    assert grid[0, 0] == 1
    assert grid[0, 1] == 0


def test_ideal_assignment_needs_two_sources():
    with pytest.raises(ValueError):
        ideal_binary_assignment([np.ones((2, 2))])


def test_ideal_assignment_masks_sum_to_one():
    rng = np.random.default_rng(1)
    mags = [np.abs(rng.standard_normal((6, 5))) for _ in range(3)]
    masks = ideal_binary_assignment(mags).to_masks()
    total = sum(m.values for m in masks)
    assert np.array_equal(total, np.ones((6, 5)))


def test_magnitude_weights_single_bin():
    mag = np.zeros((3, 3))
    mag[1, 2] = 7.0
    w = magnitude_weights(mag).weights
    assert w.sum() == 1.0
    grid = unflatten_bins(w, 3, 3)
    assert grid[1, 2] == 1.0
    assert np.count_nonzero(w) == 1


def test_magnitude_weights_uniform_and_silent_fallback():
    uniform = magnitude_weights(np.full((4, 5), 2.0)).weights
    assert np.allclose(uniform, 1.0 / 20)
    silent = magnitude_weights(np.zeros((4, 5))).weights
    assert np.allclose(silent, 1.0 / 20)


def test_magnitude_weights_sum_property():
    rng = np.random.default_rng(2)
    for _ in range(20):
        mag = np.abs(rng.standard_normal((8, 7)))
        w = magnitude_weights(mag).weights
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) < 1e-9


def test_reconstruct_with_ones_mask_recovers_mixture():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(8000)
    sig = AudioSignal(samples=x, sample_rate=16000)
    config = StftConfig(window_length=512, hop_length=128)
    spec = stft(sig, config)
    ones = Mask(values=np.ones(spec.bins.shape), source_index=0)
    (rec,) = reconstruct_sources(sig, [ones], config)
    assert len(rec) == len(sig)
    err = np.mean((rec.samples - x) ** 2)
    assert 10 * np.log10(np.mean(x**2) / err) > 60


def test_reconstruct_with_zero_mask_is_silent():
    sig = AudioSignal(samples=np.random.default_rng(4).standard_normal(4000),
                      sample_rate=16000)
    config = StftConfig(window_length=512, hop_length=128)
    spec = stft(sig, config)
    zero = Mask(values=np.zeros(spec.bins.shape), source_index=0)
    (rec,) = reconstruct_sources(sig, [zero], config)
    assert np.max(np.abs(rec.samples)) == 0.0


def test_bin_weights_reject_negative():
    with pytest.raises(ValueError):
        BinWeights(weights=np.array([0.5, -0.1]))


def test_ideal_assignment_validates_rows():
    with pytest.raises(ValueError):
        IdealAssignment(one_hot=np.array([[1, 1], [0, 1]]), n_freq=1, n_time=2)
