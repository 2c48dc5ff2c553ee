"""Separation quality metrics and system comparison.

SI-SDR follows the optimal-scaling definition: means are removed, the
estimate is projected onto the reference, and the ratio of projected
energy to residual energy is reported in dB, capped at +-100 dB for the
degenerate perfect / orthogonal cases. A silent reference yields NaN
("undefined" rather than an exception, so batch evaluation can proceed).

System comparison uses a one-sided Wilcoxon signed-rank test (alternative:
median difference > 0) with an exact null distribution for n <= 25 pairs
and a continuity-corrected normal approximation above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datapipe import MixSpec, StemCorpus, draw_example
from .masking import Mask, ideal_binary_assignment, reconstruct_sources
from .network import ChimeraModel, forward, load_checkpoint, log_magnitude
from .seeding import substream
from .signal import AudioSignal, StftConfig, stft

__all__ = [
    "SiSdrResult",
    "ComparisonReport",
    "si_sdr",
    "evaluate_system",
    "mean_si_sdr",
    "wilcoxon_one_sided",
    "compare_systems",
    "write_results_csv",
    "write_comparison_csv",
]

SI_SDR_CAP_DB = 100.0
SIGNIFICANCE_LEVEL = 0.001
EXACT_WILCOXON_MAX_N = 25


def si_sdr(estimate: AudioSignal, reference: AudioSignal) -> float:
    """Scale-invariant source-to-distortion ratio in dB.

    Returns NaN for a silent reference. Raises on length mismatch.
    """
    if len(estimate) != len(reference):
        raise ValueError(
            f"length mismatch: estimate {len(estimate)} vs reference {len(reference)}")
    s = reference.samples.astype(np.float64)
    s_hat = estimate.samples.astype(np.float64)
    s = s - s.mean()
    s_hat = s_hat - s_hat.mean()
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0.0:
        return math.nan
    alpha = float(np.dot(s_hat, s)) / ref_energy
    target_energy = alpha * alpha * ref_energy
    residual = alpha * s - s_hat
    residual_energy = float(np.dot(residual, residual))
    if residual_energy == 0.0:
        return SI_SDR_CAP_DB
    if target_energy == 0.0:
        return -SI_SDR_CAP_DB
    value = 10.0 * math.log10(target_energy / residual_energy)
    return float(np.clip(value, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


@dataclass
class SiSdrResult:
    example_id: int
    per_source_db: list[float]

    @property
    def mean_db(self) -> float:
        return float(np.mean(self.per_source_db))


def mean_si_sdr(results: list[SiSdrResult]) -> float:
    """Mean over every (example, source) value."""
    return float(np.mean([db for r in results for db in r.per_source_db]))


def evaluate_system(
    system,
    corpus: StemCorpus,
    n_examples: int,
    seed: int,
    *,
    chunk_seconds: float,
    stft_config: StftConfig,
    mix_mode: str = "coherent",
    out_csv=None,
) -> list[SiSdrResult]:
    """Draw test mixtures deterministically and score separated sources.

    `system` is a :class:`ChimeraModel`, a checkpoint path, or one of the
    mask baselines "oracle" (ideal binary masks) and "ones" (identity
    masks). Estimates are matched to references by source index.
    """
    model = None
    if isinstance(system, ChimeraModel):
        model = system
    elif system not in ("oracle", "ones"):
        model = load_checkpoint(system)
    if model is not None and model.config.n_sources != corpus.n_sources:
        raise ValueError(
            f"model separates {model.config.n_sources} sources but corpus "
            f"{corpus.root} has {corpus.n_sources}")

    rng = substream(seed, "eval")
    spec = MixSpec(mode=mix_mode, chunk_seconds=chunk_seconds,
                   augmentations=(), seed=seed)
    results = []
    for index in range(n_examples):
        example = draw_example(corpus, spec, rng)
        masks = _masks_for(model, system, example, stft_config)
        estimates = reconstruct_sources(example.mixture, masks, stft_config)
        scores = [si_sdr(est, ref) for est, ref in zip(estimates, example.sources)]
        results.append(SiSdrResult(example_id=index, per_source_db=scores))
    if out_csv is not None:
        write_results_csv(results, out_csv)
    return results


def _masks_for(model, system, example, stft_config) -> list[Mask]:
    mix_spec = stft(example.mixture, stft_config)
    if model is not None:
        out = forward(model, log_magnitude(mix_spec))
        return [Mask(values=out.masks[:, :, c], source_index=c)
                for c in range(out.masks.shape[2])]
    if system == "oracle":
        mags = [stft(s, stft_config).magnitude() for s in example.sources]
        return ideal_binary_assignment(mags).to_masks()
    shape = mix_spec.bins.shape
    return [Mask(values=np.ones(shape), source_index=c)
            for c in range(len(example.sources))]


def write_results_csv(results: list[SiSdrResult], path) -> None:
    lines = ["example_id,source_index,si_sdr_db"]
    for r in results:
        for c, db in enumerate(r.per_source_db):
            lines.append(f"{r.example_id},{c},{db:.9g}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_results_csv(path) -> list[SiSdrResult]:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0] != "example_id,source_index,si_sdr_db":
        raise ValueError(f"{path}: not a results CSV")
    by_id: dict[int, list[float]] = {}
    for row in rows[1:]:
        example_id, _, db = row.split(",")
        by_id.setdefault(int(example_id), []).append(float(db))
    return [SiSdrResult(example_id=k, per_source_db=v) for k, v in sorted(by_id.items())]


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test (one-sided, median difference > 0)
# ---------------------------------------------------------------------------


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_tail_probability(two_ranks: np.ndarray, two_w: int) -> float:
    """P(W+ >= w) by expanding the generating polynomial of the null
    distribution over all 2^n sign assignments (ranks doubled so tied
    half-ranks stay integral)."""
    total = int(two_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in two_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    tail = counts[min(two_w, total):].sum() if two_w <= total else 0.0
    return float(tail / 2.0 ** len(two_ranks))


def wilcoxon_one_sided(diffs) -> tuple[float, float]:
    """Signed-rank statistic (sum of positive ranks) and one-sided p-value.

    Zero differences are dropped; ties get average ranks. Exact null
    enumeration for n <= 25, normal approximation with continuity and tie
    correction above. Raises if fewer than 5 nonzero differences remain.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0.0]
    n = d.size
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_MAX_N:
        two_ranks = np.round(2.0 * ranks).astype(np.int64)
        p = _exact_tail_probability(two_ranks, int(round(2.0 * w_plus)))
        return w_plus, p

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return w_plus, p


@dataclass
class ComparisonReport:
    """Paired comparison of two systems on the same evaluation examples."""

    example_ids: list[int]
    mean_a: float
    mean_b: float
    diffs: list[float]
    statistic: float | None
    p_value: float | None
    significant: bool

    def verdict(self, level: float = SIGNIFICANCE_LEVEL) -> str:
        if self.p_value is None:
            return "insufficient nonzero differences for a test"
        flag = "significant" if self.p_value < level else "not significant"
        return f"one-sided p = {self.p_value:.6g} ({flag} at p < {level})"


def compare_systems(results_a: list[SiSdrResult],
                    results_b: list[SiSdrResult]) -> ComparisonReport:
    """Pair per-example mean SI-SDR by example id and test whether system A
    beats system B."""
    a_by_id = {r.example_id: r.mean_db for r in results_a}
    b_by_id = {r.example_id: r.mean_db for r in results_b}
    if set(a_by_id) != set(b_by_id):
        raise ValueError("result sets cover different example ids")
    ids = sorted(a_by_id)
    diffs = [a_by_id[i] - b_by_id[i] for i in ids]
    try:
        statistic, p_value = wilcoxon_one_sided(diffs)
    except ValueError:
        statistic, p_value = None, None
    return ComparisonReport(
        example_ids=ids,
        mean_a=float(np.mean([a_by_id[i] for i in ids])),
        mean_b=float(np.mean([b_by_id[i] for i in ids])),
        diffs=diffs,
        statistic=statistic,
        p_value=p_value,
        significant=p_value is not None and p_value < SIGNIFICANCE_LEVEL,
    )


def write_comparison_csv(report: ComparisonReport, results_a, results_b, path) -> None:
    a_by_id = {r.example_id: r.mean_db for r in results_a}
    b_by_id = {r.example_id: r.mean_db for r in results_b}
    lines = ["example_id,si_sdr_a,si_sdr_b,diff"]
    for i in report.example_ids:
        lines.append(f"{i},{a_by_id[i]:.9g},{b_by_id[i]:.9g},{a_by_id[i] - b_by_id[i]:.9g}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")
