"""Optimization: Adam with AutoClip gradient clipping, plateau-based
learning-rate halving, the deep-clustering pretraining stage, and both
fine-tuning regimes.

Loss log format (one row per iteration):
    iteration,stage,loss_dc,loss_mi,loss_total,lr,grad_norm,clip_threshold
Unused loss columns are left empty (e.g. loss_mi during pretraining).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, backward, zero_grads
from .datapipe import MixSpec, StemCorpus, TrainingExample, draw_example, load_corpus
from .losses import (MI_ALPHA, MixtureTargets, combined_loss, deep_clustering_loss,
                     mask_inference_loss)
from .manifest import ExperimentManifest
from .masking import ideal_binary_assignment, magnitude_weights
from .network import (ChimeraModel, init_model, load_checkpoint, log_magnitude,
                      save_checkpoint, set_trainable)
from .seeding import substream
from .signal import StftConfig, stft

__all__ = [
    "OptimizerState",
    "AutoClipState",
    "LrSchedule",
    "RunBudget",
    "adam_step",
    "autoclip_threshold",
    "schedule_step",
    "make_targets",
    "pretrain",
    "finetune",
    "LOSS_LOG_HEADER",
]

logger = logging.getLogger(__name__)

LOSS_LOG_HEADER = "iteration,stage,loss_dc,loss_mi,loss_total,lr,grad_norm,clip_threshold"

CHECKPOINT_EVERY = 500
VALIDATION_BATCHES = 2
DEFAULT_LEARNING_RATE = 1e-3


@dataclass
class OptimizerState:
    """Adam accumulators; beta/epsilon defaults are the canonical constants."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def adam_step(params: list[Parameter], state: OptimizerState) -> bool:
    """One Adam update over every unfrozen parameter that received a
    gradient. Returns False (and changes nothing) if any gradient is
    non-finite; the skipped step is logged."""
    live = [p for p in params if not p.frozen and p.grad is not None]
    for p in live:
        if not np.all(np.isfinite(p.grad)):
            logger.warning("skipping optimizer step %d: non-finite gradient in %s",
                           state.step_count + 1, p.name)
            return False
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for p in live:
        g = p.grad.astype(np.float64)
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(g)
            state.v[p.name] = np.zeros_like(g)
        v = state.v[p.name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[p.name] = m
        state.v[p.name] = v
        update = state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.value = p.value - update.astype(p.value.dtype)
    return True


@dataclass
class AutoClipState:
    """History of observed global gradient norms; gradients are rescaled to
    the p-th percentile of the history (the current norm included)."""

    percentile: float = 10.0
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 < self.percentile <= 100.0):
            raise ValueError("percentile must be in (0, 100]")


def autoclip_threshold(state: AutoClipState) -> float:
    """p-th percentile of the norm history, linear interpolation between
    order statistics: index = (n - 1) * p / 100."""
    if not state.history:
        raise ValueError("autoclip threshold is undefined for an empty history")
    ordered = np.sort(np.asarray(state.history, dtype=np.float64))
    pos = (ordered.size - 1) * state.percentile / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, ordered.size - 1)
    frac = pos - lo
    return float(ordered[lo] + frac * (ordered[hi] - ordered[lo]))


def _global_grad_norm(params: list[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64)
            total += float(np.sum(g * g))
    return math.sqrt(total)


def _clip_gradients(params: list[Parameter], clip: AutoClipState) -> tuple[float, float]:
    """Append the current global norm to the history, then rescale all
    gradients to at most the percentile threshold. Returns (norm, threshold)."""
    norm = _global_grad_norm(params)
    clip.history.append(norm)
    threshold = autoclip_threshold(clip)
    if norm > threshold and norm > 0.0:
        scale = threshold / norm
        for p in params:
            if p.grad is not None:
                p.node.grad = p.grad * p.value.dtype.type(scale)
    return norm, threshold


@dataclass
class LrSchedule:
    """Halve the learning rate when the windowed validation loss stops
    improving: no halving before `warmup` iterations, then after `patience`
    consecutive windows without a relative improvement of `tolerance`."""

    window: int = 100
    warmup: int = 500
    tolerance: float = 1e-4
    patience: int = 5
    best_windowed_loss: float = math.inf
    bad_windows: int = 0

    def __post_init__(self):
        if self.window <= 0 or self.warmup <= 0:
            raise ValueError("window and warmup must be positive")


def schedule_step(schedule: LrSchedule, iteration: int, windowed_val_loss: float,
                  learning_rate: float) -> float:
    """Consume one window-boundary validation loss; returns the (possibly
    halved) learning rate."""
    improved = windowed_val_loss < schedule.best_windowed_loss * (1.0 - schedule.tolerance)
    if improved:
        schedule.best_windowed_loss = windowed_val_loss
        schedule.bad_windows = 0
        return learning_rate
    if iteration <= schedule.warmup:
        return learning_rate
    schedule.bad_windows += 1
    if schedule.bad_windows >= schedule.patience:
        schedule.bad_windows = 0
        return learning_rate / 2.0
    return learning_rate


@dataclass
class RunBudget:
    stage: str
    iterations: int
    batch_size: int
    chunk_seconds: float

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune", "baseline"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.iterations <= 0 or self.batch_size <= 0 or self.chunk_seconds <= 0:
            raise ValueError("budget entries must be positive")


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------


def make_targets(example: TrainingExample, config: StftConfig) -> MixtureTargets:
    """STFT the example and derive magnitudes, the ideal assignment, and
    magnitude-ratio bin weights."""
    mix_spec = stft(example.mixture, config)
    mix_mag = mix_spec.magnitude()
    source_mags = [stft(s, config).magnitude() for s in example.sources]
    assignment = ideal_binary_assignment(source_mags)
    weights = magnitude_weights(mix_mag)
    return MixtureTargets(
        mix_mag=np.ascontiguousarray(mix_mag.T),
        source_mags=[np.ascontiguousarray(m.T) for m in source_mags],
        assignment=assignment.one_hot,
        weights=weights.weights,
    )


class _BatchSource:
    """Deterministic example stream: examples are drawn round-robin from
    per-worker substreams, so a run is reproducible for a fixed worker
    count."""

    def __init__(self, corpus: StemCorpus, spec: MixSpec, seed: int,
                 stream: str, n_workers: int = 1):
        self.corpus = corpus
        self.spec = spec
        self.rngs = [substream(seed, "data", stream, f"worker{w}")
                     for w in range(n_workers)]
        self._next = 0

    def draw(self) -> TrainingExample:
        rng = self.rngs[self._next]
        self._next = (self._next + 1) % len(self.rngs)
        return draw_example(self.corpus, self.spec, rng)

    def batch(self, size: int) -> list[TrainingExample]:
        return [self.draw() for _ in range(size)]


def _batch_loss(model: ChimeraModel, examples: list[TrainingExample],
                targets: list[MixtureTargets], stft_config: StftConfig,
                loss_mode: str) -> tuple[Node, float | None, float | None]:
    """Forward a batch and build the scalar loss node.

    Returns (loss, dc_value, mi_value); the component values are detached
    floats or None when the mode does not compute them.
    """
    x = np.stack([log_magnitude(stft(e.mixture, stft_config)) for e in examples])
    need_v = loss_mode in ("dc", "combined")
    need_m = loss_mode in ("mi", "combined")
    v, m = model.forward_nodes(x, need_embedding=need_v, need_masks=need_m)

    def batch_mean(pieces):
        total = pieces[0]
        for piece in pieces[1:]:
            total = total + piece
        return total / float(len(pieces))

    dc = mi = None
    if need_v:
        dc = batch_mean([deep_clustering_loss(v[b], t.assignment, t.weights)
                         for b, t in enumerate(targets)])
    if need_m:
        mi = batch_mean([mask_inference_loss(m[b], t.mix_mag, t.source_mags)
                         for b, t in enumerate(targets)])
    if loss_mode == "dc":
        loss = dc
    elif loss_mode == "mi":
        loss = mi
    else:
        loss = combined_loss(dc, mi, MI_ALPHA)
    return (loss,
            dc.item() if dc is not None else None,
            mi.item() if mi is not None else None)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


def _format_loss(value: float | None) -> str:
    return "" if value is None else f"{value:.9g}"


def _run_stage(
    model: ChimeraModel,
    manifest: ExperimentManifest,
    budget: RunBudget,
    loss_mode: str,
    stage_dir: Path,
    on_step: Callable[[dict], None] | None = None,
) -> Path:
    """Shared loop for pretraining and both fine-tuning regimes."""
    stft_config = manifest.stft_config()
    train_corpus = load_corpus(manifest.train_corpus)
    val_corpus = load_corpus(manifest.val_corpus)
    mix = MixSpec(mode=manifest.mix_mode, chunk_seconds=budget.chunk_seconds,
                  augmentations=manifest.augmentations, seed=manifest.seed)
    val_mix = MixSpec(mode=manifest.mix_mode, chunk_seconds=budget.chunk_seconds,
                      augmentations=(), seed=manifest.seed)

    source = _BatchSource(train_corpus, mix, manifest.seed, stream=budget.stage)
    val_source = _BatchSource(val_corpus, val_mix, manifest.seed,
                              stream=f"{budget.stage}-val")
    val_batches = [val_source.batch(budget.batch_size) for _ in range(VALIDATION_BATCHES)]
    val_targets = [[make_targets(e, stft_config) for e in batch] for batch in val_batches]

    optimizer = OptimizerState()
    clip = AutoClipState()
    schedule = LrSchedule()
    params = model.parameters()

    stage_dir.mkdir(parents=True, exist_ok=True)
    log_path = stage_dir / "loss.csv"
    with open(log_path, "w") as log:
        log.write(LOSS_LOG_HEADER + "\n")
        for iteration in range(1, budget.iterations + 1):
            examples = source.batch(budget.batch_size)
            targets = [make_targets(e, stft_config) for e in examples]
            zero_grads(params)
            loss, dc_value, mi_value = _batch_loss(model, examples, targets,
                                                   stft_config, loss_mode)
            total_value = loss.item()
            if not math.isfinite(total_value):
                raise FloatingPointError(
                    f"{budget.stage}: non-finite loss {total_value} at iteration {iteration}")
            backward(loss)
            norm, threshold = _clip_gradients(params, clip)
            adam_step(model.trainable_parameters(), optimizer)

            log.write(",".join([
                str(iteration), budget.stage,
                _format_loss(dc_value), _format_loss(mi_value),
                _format_loss(total_value),
                f"{optimizer.learning_rate:.9g}", f"{norm:.9g}", f"{threshold:.9g}",
            ]) + "\n")

            if on_step is not None:
                on_step({
                    "iteration": iteration,
                    "loss": total_value,
                    "grad_norm": norm,
                    "clip_threshold": threshold,
                    "post_clip_norm": _global_grad_norm(params),
                    "learning_rate": optimizer.learning_rate,
                })

            if iteration % schedule.window == 0:
                val_loss = _validation_loss(model, val_batches, val_targets,
                                            stft_config, loss_mode)
                optimizer.learning_rate = schedule_step(
                    schedule, iteration, val_loss, optimizer.learning_rate)

            if iteration % CHECKPOINT_EVERY == 0:
                save_checkpoint(model, stage_dir / f"checkpoint_{iteration:06d}.bin")

    final = stage_dir / "final.bin"
    save_checkpoint(model, final)
    return final


def _validation_loss(model, val_batches, val_targets, stft_config, loss_mode) -> float:
    values = []
    for batch, targets in zip(val_batches, val_targets):
        loss, _, _ = _batch_loss(model, batch, targets, stft_config, loss_mode)
        values.append(loss.item())
    return float(np.mean(values))


def _write_stage_log(stage_dir: Path, model: ChimeraModel, stage: str,
                     loss_mode: str, init_desc: str) -> None:
    stage_dir.mkdir(parents=True, exist_ok=True)
    frozen = model.frozen_groups()
    lines = [
        f"stage = {stage}",
        f"loss = {loss_mode}",
        f"init = {init_desc}",
        f"frozen_groups = {','.join(frozen) if frozen else 'none'}",
    ]
    (stage_dir / "stage.txt").write_text("\n".join(lines) + "\n")


def pretrain(manifest: ExperimentManifest,
             on_step: Callable[[dict], None] | None = None) -> Path:
    """Train the embedding head (and backbone) with the deep clustering
    loss only; the mask head is never touched. Returns the final
    checkpoint path."""
    model = init_model(manifest.model_config(), seed=_init_seed(manifest))
    set_trainable(model, "whole")
    budget = RunBudget(stage="pretrain", iterations=manifest.pretrain_iterations,
                       batch_size=manifest.batch_size,
                       chunk_seconds=manifest.chunk_seconds)
    stage_dir = Path(manifest.output_dir) / "pretrain"
    _write_stage_log(stage_dir, model, "pretrain", "dc", "scratch")
    return _run_stage(model, manifest, budget, "dc", stage_dir, on_step)


def finetune(manifest: ExperimentManifest, init: str, regime: str,
             on_step: Callable[[dict], None] | None = None) -> Path:
    """Continue training on the manifest's train corpus.

    Args:
        init: "scratch" (the from-scratch baseline condition, which uses
            the baseline iteration budget) or a checkpoint path.
        regime: "whole" trains everything with the combined loss;
            "mask_only" freezes all but the mask head and trains with the
            mask-inference loss alone.
    """
    if regime not in ("whole", "mask_only"):
        raise ValueError(f"unknown regime {regime!r}")
    if init == "scratch":
        model = init_model(manifest.model_config(), seed=_init_seed(manifest))
        stage = "baseline"
    else:
        model = load_checkpoint(init)
        if model.config != manifest.model_config():
            raise ValueError(
                f"checkpoint config {model.config} does not match manifest "
                f"config {manifest.model_config()}")
        stage = "finetune"
    set_trainable(model, regime)
    loss_mode = "combined" if regime == "whole" else "mi"
    budget = RunBudget(stage=stage, iterations=manifest.iterations_for(stage),
                       batch_size=manifest.batch_size,
                       chunk_seconds=manifest.chunk_seconds)
    stage_dir = Path(manifest.output_dir) / (
        stage if stage == "baseline" else f"finetune_{regime}")
    _write_stage_log(stage_dir, model, stage, loss_mode, init)
    return _run_stage(model, manifest, budget, loss_mode, stage_dir, on_step)


def _init_seed(manifest: ExperimentManifest) -> int:
    return int(substream(manifest.seed, "init").integers(2**31 - 1))
