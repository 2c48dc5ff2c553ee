"""Training objectives: deep clustering, mask inference, and their
weighted combination.

The deep clustering loss is evaluated in the expanded form
``||Vw' Vw||_F^2 - 2 ||Vw' Yw||_F^2 + ||Yw' Yw||_F^2`` with the weighted
embeddings Vw = diag(w)^(1/2) V (and likewise Yw), so the TFxTF affinity
matrix is never materialized. It is normalized by (sum w)^2 to make the
value independent of sequence length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node

__all__ = [
    "MixtureTargets",
    "deep_clustering_loss",
    "mask_inference_loss",
    "combined_loss",
    "deep_clustering_loss_naive",
    "MI_ALPHA",
]

# weight of the deep clustering term in the combined fine-tuning loss
MI_ALPHA = 0.01


@dataclass
class MixtureTargets:
    """Per-example training targets.

    mix_mag: (time, freq) mixture magnitudes.
    source_mags: (time, freq) magnitudes per source.
    assignment: (n_bins, n_sources) one-hot, time-major bin order.
    weights: (n_bins,) nonnegative, summing to 1.
    """

    mix_mag: np.ndarray
    source_mags: list[np.ndarray]
    assignment: np.ndarray
    weights: np.ndarray


def deep_clustering_loss(v: Node, assignment: np.ndarray, weights: np.ndarray) -> Node:
    """Weighted affinity-matching loss between embeddings and assignment.

    Args:
        v: (n_bins, D) embedding node, unit-norm rows.
        assignment: (n_bins, n_sources) one-hot array.
        weights: (n_bins,) nonnegative array.
    """
    n_bins = v.shape[0]
    if assignment.shape[0] != n_bins or weights.shape != (n_bins,):
        raise ValueError(
            f"inconsistent shapes: V {v.shape}, Y {assignment.shape}, W {weights.shape}")
    dtype = v.dtype
    w_sqrt = np.sqrt(weights).astype(dtype)[:, None]
    y_w = (assignment * w_sqrt).astype(dtype)
    v_w = v * ad.constant(w_sqrt)

    vv = ad.frob_norm_sq(ad.transpose(v_w) @ v_w)
    vy = ad.frob_norm_sq(ad.transpose(v_w) @ ad.constant(y_w))
    yy = float(np.sum(np.square(y_w.T @ y_w)))
    total_w = float(weights.sum())
    return (vv - 2.0 * vy + yy) / (total_w * total_w)


def deep_clustering_loss_naive(v: np.ndarray, assignment: np.ndarray,
                               weights: np.ndarray) -> float:
    """Direct O(bins^2) evaluation via the full affinity matrices.

    Reference implementation used to validate the expanded form; not for
    training.
    """
    w_sqrt = np.sqrt(np.asarray(weights, dtype=np.float64))
    vw = np.asarray(v, dtype=np.float64) * w_sqrt[:, None]
    yw = np.asarray(assignment, dtype=np.float64) * w_sqrt[:, None]
    diff = vw @ vw.T - yw @ yw.T
    return float(np.sum(diff**2) / weights.sum() ** 2)


def mask_inference_loss(masks: Node, mix_mag: np.ndarray,
                        source_mags: list[np.ndarray]) -> Node:
    """L1 magnitude-spectrum approximation, averaged over every
    (bin x source) term.

    Args:
        masks: (time, freq, n_sources) node, simplex over sources.
        mix_mag: (time, freq) mixture magnitudes.
        source_mags: per-source (time, freq) magnitudes.
    """
    t, f, n = masks.shape
    if mix_mag.shape != (t, f):
        raise ValueError(f"mixture magnitude shape {mix_mag.shape} does not match masks {masks.shape}")
    if len(source_mags) != n or any(s.shape != (t, f) for s in source_mags):
        raise ValueError("source magnitudes must match (time, freq) per source")
    dtype = masks.dtype
    targets = np.stack(source_mags, axis=-1).astype(dtype)
    mix = mix_mag.astype(dtype)[:, :, None]
    diff = masks * ad.constant(mix) - ad.constant(targets)
    return ad.sum_(ad.absolute(diff)) / float(t * f * n)


def combined_loss(dc: Node, mi: Node, alpha: float = MI_ALPHA) -> Node:
    """alpha * L_DC + (1 - alpha) * L_MI."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * dc + (1.0 - alpha) * mi
