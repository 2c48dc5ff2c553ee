"""Two-headed separation network: bidirectional LSTM stack, an embedding
head (sigmoid + row L2 normalization) and a mask head (softmax over
sources).

The embedding for bin (f, t) lives at row t * n_freq + f of the output,
matching the bin order used by `masking` and `losses`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter
from .signal import ComplexSpectrogram

__all__ = [
    "ChimeraConfig",
    "ChimeraModel",
    "ForwardOutput",
    "log_magnitude",
    "init_model",
    "forward",
    "set_trainable",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

LOG_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"SEPXFER1"

_GATES = 4  # input, forget, cell, output


@dataclass
class ChimeraConfig:
    n_freq: int
    hidden_size: int
    n_layers: int
    embedding_dim: int
    n_sources: int

    def __post_init__(self):
        for name in ("n_freq", "hidden_size", "n_layers", "embedding_dim", "n_sources"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")

    def as_tuple(self):
        return (self.n_freq, self.hidden_size, self.n_layers,
                self.embedding_dim, self.n_sources)


@dataclass
class ForwardOutput:
    """Single-example network output.

    embeddings: (n_freq * n_time, D), unit-norm rows, time-major bin order.
    masks: (n_freq, n_time, n_sources), simplex over the source axis.
    """

    embeddings: np.ndarray
    masks: np.ndarray


def log_magnitude(spec: ComplexSpectrogram, dtype=np.float32) -> np.ndarray:
    """Network input: (time, freq) matrix of log(|X| + floor)."""
    return np.log(np.abs(spec.bins).T + LOG_FLOOR).astype(dtype)


class ChimeraModel:
    """Parameter container plus forward graph construction.

    Parameter groups: "backbone" (all LSTM weights), "embedding_head",
    "mask_head". The mask-only fine-tuning regime freezes everything but
    the mask head.
    """

    def __init__(self, config: ChimeraConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params

    # -- parameter bookkeeping ----------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.params.values() if not p.frozen]

    def group_of(self, name: str) -> str:
        if name.startswith("lstm"):
            return "backbone"
        if name.startswith("embed"):
            return "embedding_head"
        return "mask_head"

    def frozen_groups(self) -> list[str]:
        groups = sorted({self.group_of(p.name) for p in self.params.values() if p.frozen})
        return groups

    # -- forward -------------------------------------------------------------

    def forward_nodes(self, x: np.ndarray, need_embedding=True, need_masks=True):
        """Build the forward graph for a batch.

        Args:
            x: (batch, time, freq) log-magnitude input.
            need_embedding / need_masks: skip a head entirely when its
                output is unused (e.g. pretraining never touches the mask
                head, so its parameters receive no gradient).

        Returns:
            (V, M): V is a (batch, time * freq, D) node with unit-norm rows
            or None; M is a (batch, time, freq, n_sources) node or None.
        """
        if x.ndim != 3:
            raise ValueError(f"expected (batch, time, freq) input, got shape {x.shape}")
        cfg = self.config
        b, t, f = x.shape
        if f != cfg.n_freq:
            raise ValueError(f"input has {f} frequency bins, model expects {cfg.n_freq}")

        seq = ad.constant(x)
        for layer in range(cfg.n_layers):
            seq = self._blstm_layer(seq, layer)

        hidden = ad.reshape(seq, (b * t, 2 * cfg.hidden_size))

        v_node = None
        if need_embedding:
            e = hidden @ self.params["embed_w"].node + self.params["embed_b"].node
            e = ad.sigmoid(e)
            e = ad.reshape(e, (b, t * f, cfg.embedding_dim))
            v_node = ad.l2_normalize(e, axis=-1)

        m_node = None
        if need_masks:
            m = hidden @ self.params["mask_w"].node + self.params["mask_b"].node
            m = ad.reshape(m, (b, t, f, cfg.n_sources))
            m_node = ad.softmax(m, axis=-1)

        return v_node, m_node

    def _blstm_layer(self, seq: Node, layer: int) -> Node:
        b, t, _ = seq.shape
        h = self.config.hidden_size
        outs = []
        for direction in ("fwd", "bwd"):
            wx = self.params[f"lstm{layer}_{direction}_wx"].node
            wh = self.params[f"lstm{layer}_{direction}_wh"].node
            bias = self.params[f"lstm{layer}_{direction}_b"].node
            flat = ad.reshape(seq, (b * t, seq.shape[2]))
            xproj = ad.reshape(flat @ wx + bias, (b, t, _GATES * h))
            steps = range(t) if direction == "fwd" else range(t - 1, -1, -1)
            hidden = ad.constant(np.zeros((b, h), dtype=seq.dtype))
            cell = ad.constant(np.zeros((b, h), dtype=seq.dtype))
            collected = [None] * t
            for step in steps:
                gates = xproj[:, step, :] + hidden @ wh
                i_gate = ad.sigmoid(gates[:, 0 * h:1 * h])
                f_gate = ad.sigmoid(gates[:, 1 * h:2 * h])
                g_gate = ad.tanh(gates[:, 2 * h:3 * h])
                o_gate = ad.sigmoid(gates[:, 3 * h:4 * h])
                cell = f_gate * cell + i_gate * g_gate
                hidden = o_gate * ad.tanh(cell)
                collected[step] = ad.reshape(hidden, (b, 1, h))
            outs.append(ad.concatenate(collected, axis=1))
        return ad.concatenate(outs, axis=2)


def init_model(config: ChimeraConfig, seed: int, dtype=np.float32) -> ChimeraModel:
    """Initialize a model: weights uniform in [-1/sqrt(hidden), 1/sqrt(hidden)],
    biases zero. Deterministic given the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    bound = 1.0 / np.sqrt(config.hidden_size)

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params: dict[str, Parameter] = {}
    h = config.hidden_size
    for layer in range(config.n_layers):
        in_size = config.n_freq if layer == 0 else 2 * h
        for direction in ("fwd", "bwd"):
            prefix = f"lstm{layer}_{direction}"
            params[f"{prefix}_wx"] = Parameter(f"{prefix}_wx", uniform(in_size, _GATES * h))
            params[f"{prefix}_wh"] = Parameter(f"{prefix}_wh", uniform(h, _GATES * h))
            params[f"{prefix}_b"] = Parameter(f"{prefix}_b",
                                              np.zeros(_GATES * h, dtype=dtype))
    params["embed_w"] = Parameter("embed_w", uniform(2 * h, config.n_freq * config.embedding_dim))
    params["embed_b"] = Parameter("embed_b",
                                  np.zeros(config.n_freq * config.embedding_dim, dtype=dtype))
    params["mask_w"] = Parameter("mask_w", uniform(2 * h, config.n_freq * config.n_sources))
    params["mask_b"] = Parameter("mask_b",
                                 np.zeros(config.n_freq * config.n_sources, dtype=dtype))
    return ChimeraModel(config, params)


def forward(model: ChimeraModel, logmag: np.ndarray) -> ForwardOutput:
    """Run a single (time, freq) input through the network.

    Returns embeddings as (TF bins, D) and masks as (freq, time, sources).
    """
    if logmag.ndim != 2:
        raise ValueError(f"expected (time, freq) input, got shape {logmag.shape}")
    v, m = model.forward_nodes(logmag[None, :, :])
    embeddings = v.value[0]
    masks = np.transpose(m.value[0], (1, 0, 2))
    return ForwardOutput(embeddings=embeddings, masks=masks)


def set_trainable(model: ChimeraModel, regime: str) -> None:
    """'whole' unfreezes every parameter; 'mask_only' freezes all but the
    mask head's affine map."""
    if regime == "whole":
        for p in model.params.values():
            p.unfreeze()
    elif regime == "mask_only":
        for p in model.params.values():
            if model.group_of(p.name) == "mask_head":
                p.unfreeze()
            else:
                p.freeze()
    else:
        raise ValueError(f"unknown regime {regime!r} (expected 'whole' or 'mask_only')")


# ---------------------------------------------------------------------------
# checkpoints: "SEPXFER1", config as little-endian int32, then per parameter
# name length / name bytes / rank / dims / raw float32 data
# ---------------------------------------------------------------------------


def save_checkpoint(model: ChimeraModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5i", *model.config.as_tuple()))
        for name, param in model.params.items():
            encoded = name.encode("utf-8")
            value = np.ascontiguousarray(param.value, dtype="<f4")
            fh.write(struct.pack("<i", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<i", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}i", *value.shape))
            fh.write(value.tobytes())


def _read_exact(fh, count: int, path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"{path}: truncated checkpoint file")
    return data


def load_checkpoint(path) -> ChimeraModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        fields = struct.unpack("<5i", _read_exact(fh, 20, path))
        config = ChimeraConfig(*fields)
        model = init_model(config, seed=0)
        seen = set()
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise ValueError(f"{path}: truncated checkpoint file")
            (name_len,) = struct.unpack("<i", head)
            name = _read_exact(fh, name_len, path).decode("utf-8")
            (rank,) = struct.unpack("<i", _read_exact(fh, 4, path))
            shape = struct.unpack(f"<{rank}i", _read_exact(fh, 4 * rank, path))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * count, path), dtype="<f4").reshape(shape)
            if name not in model.params:
                raise ValueError(f"{path}: unknown parameter {name!r} for this config")
            if model.params[name].value.shape != data.shape:
                raise ValueError(
                    f"{path}: parameter {name!r} has shape {data.shape}, "
                    f"expected {model.params[name].value.shape}")
            model.params[name].value = data.copy()
            seen.add(name)
        missing = set(model.params) - seen
        if missing:
            raise ValueError(f"{path}: checkpoint is missing parameters {sorted(missing)}")
    return model
