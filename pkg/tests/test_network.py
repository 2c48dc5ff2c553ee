import numpy as np
import pytest

from sepxfer.network import (ChimeraConfig, forward, init_model, load_checkpoint,
                             log_magnitude, save_checkpoint, set_trainable)
from sepxfer.signal import AudioSignal, StftConfig, stft

TINY = ChimeraConfig(n_freq=33, hidden_size=8, n_layers=2, embedding_dim=4, n_sources=2)


def lstm_param_count(n_freq, hidden, layers):
    total = 0
    for layer in range(layers):
        in_size = n_freq if layer == 0 else 2 * hidden
        per_direction = in_size * 4 * hidden + hidden * 4 * hidden + 4 * hidden
        total += 2 * per_direction
    return total


def head_param_count(n_freq, hidden, dim):
    return 2 * hidden * n_freq * dim + n_freq * dim


def test_init_is_deterministic_per_seed():
    a = init_model(TINY, seed=9)
    b = init_model(TINY, seed=9)
    c = init_model(TINY, seed=10)
    for name in a.params:
        assert np.array_equal(a.params[name].value, b.params[name].value)
    assert any(not np.array_equal(a.params[n].value, c.params[n].value)
               for n in a.params)


def test_init_bounds_and_zero_biases():
    model = init_model(TINY, seed=1)
    bound = 1 / np.sqrt(TINY.hidden_size)
    for p in model.parameters():
        if p.name.endswith("_b"):
            assert np.all(p.value == 0)
        else:
            assert np.max(np.abs(p.value)) <= bound


def test_parameter_count_closed_form():
    config = ChimeraConfig(n_freq=257, hidden_size=20, n_layers=4,
                           embedding_dim=20, n_sources=2)
    model = init_model(config, seed=0)
    total = sum(p.value.size for p in model.parameters())
    expected = (lstm_param_count(257, 20, 4)
                + head_param_count(257, 20, 20)   # embedding head
                + head_param_count(257, 20, 2))   # mask head
    assert total == expected


def test_forward_output_contracts():
    rng = np.random.default_rng(2)
    model = init_model(TINY, seed=3)
    for n_time in (7, 20):
        x = rng.standard_normal((n_time, TINY.n_freq)).astype(np.float32)
        out = forward(model, x)
        assert out.embeddings.shape == (TINY.n_freq * n_time, TINY.embedding_dim)
        assert out.masks.shape == (TINY.n_freq, n_time, TINY.n_sources)
        assert np.allclose(np.linalg.norm(out.embeddings, axis=1), 1.0, atol=1e-5)
        assert np.allclose(out.masks.sum(axis=2), 1.0, atol=1e-5)
        assert np.all(out.masks >= 0) and np.all(out.masks <= 1)


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    model = init_model(TINY, seed=4)
    x = rng.standard_normal((9, TINY.n_freq)).astype(np.float32)
    a = forward(model, x)
    b = forward(model, x)
    assert np.array_equal(a.embeddings, b.embeddings)
    assert np.array_equal(a.masks, b.masks)


def test_zero_weight_model_gives_constant_embeddings():
    model = init_model(TINY, seed=5)
    for p in model.parameters():
        p.value = np.zeros_like(p.value)
    x = np.random.default_rng(6).standard_normal((5, TINY.n_freq)).astype(np.float32)
    out = forward(model, x)
    # sigmoid(0) rows, normalized: all bins identical
    assert np.allclose(out.embeddings, out.embeddings[0], atol=1e-7)
    assert np.allclose(out.embeddings[0], 1 / np.sqrt(TINY.embedding_dim), atol=1e-5)


def test_forward_rejects_wrong_freq_dim():
    model = init_model(TINY, seed=7)
    with pytest.raises(ValueError):
        forward(model, np.zeros((5, TINY.n_freq + 1), dtype=np.float32))


def test_set_trainable_regimes():
    model = init_model(TINY, seed=8)
    set_trainable(model, "mask_only")
    trainable = {p.name for p in model.trainable_parameters()}
    assert trainable == {"mask_w", "mask_b"}
    assert model.frozen_groups() == ["backbone", "embedding_head"]
    set_trainable(model, "whole")
    assert not model.frozen_groups()
    assert len(model.trainable_parameters()) == len(model.parameters())
    with pytest.raises(ValueError):
        set_trainable(model, "nothing")


def test_log_magnitude_orientation_and_floor():
    sig = AudioSignal(samples=np.zeros(400, dtype=np.float32), sample_rate=16000)
    spec = stft(sig, StftConfig(window_length=64, hop_length=16))
    lm = log_magnitude(spec)
    assert lm.shape == (spec.n_time, spec.n_freq)
    assert np.all(np.isfinite(lm))
    assert np.allclose(lm, np.log(1e-8))


def test_checkpoint_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(9)
    model = init_model(TINY, seed=10)
    path = tmp_path / "model.bin"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert restored.config == TINY
    for name in model.params:
        assert np.array_equal(model.params[name].value, restored.params[name].value)
    x = rng.standard_normal((6, TINY.n_freq)).astype(np.float32)
    a, b = forward(model, x), forward(restored, x)
    assert np.array_equal(a.embeddings, b.embeddings)
    assert np.array_equal(a.masks, b.masks)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTSEPX1" + b"\x00" * 40)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncated_file(tmp_path):
    model = init_model(TINY, seed=11)
    path = tmp_path / "model.bin"
    save_checkpoint(model, path)
    data = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[: len(data) // 2])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "cut.bin")
