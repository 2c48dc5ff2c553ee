"""Experiment manifests: a line-based `key = value` file that binds
corpora, model configuration, budgets, and the seed into one reproducible
run description.

Lines starting with `#` and blank lines are ignored. List values are
comma-separated. Unknown keys are rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .network import ChimeraConfig
from .signal import StftConfig

__all__ = ["ExperimentManifest", "ManifestError", "parse_manifest", "format_manifest"]


class ManifestError(ValueError):
    """Manifest file problem, annotated with a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass
class ExperimentManifest:
    train_corpus: str
    val_corpus: str
    test_corpus: str
    output_dir: str
    seed: int = 0
    mix_mode: str = "coherent"
    augmentations: tuple[str, ...] = ()
    sample_rate: int = 16000
    window_length: int = 512
    hop_length: int = 128
    hidden_size: int = 500
    n_layers: int = 4
    embedding_dim: int = 20
    n_sources: int = 2
    pretrain_iterations: int = 10000
    finetune_iterations: int = 2000
    baseline_iterations: int = 12000
    batch_size: int = 24
    chunk_seconds: float = 10.0

    def __post_init__(self):
        if self.mix_mode not in ("coherent", "incoherent"):
            raise ManifestError(f"mix_mode must be coherent or incoherent, got {self.mix_mode!r}")
        for name in ("sample_rate", "window_length", "hop_length", "hidden_size",
                     "n_layers", "embedding_dim", "n_sources", "pretrain_iterations",
                     "finetune_iterations", "baseline_iterations", "batch_size"):
            if int(getattr(self, name)) <= 0:
                raise ManifestError(f"{name} must be positive")
        if self.chunk_seconds <= 0:
            raise ManifestError("chunk_seconds must be positive")

    @property
    def n_freq(self) -> int:
        return self.window_length // 2 + 1

    def model_config(self) -> ChimeraConfig:
        return ChimeraConfig(
            n_freq=self.n_freq,
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            embedding_dim=self.embedding_dim,
            n_sources=self.n_sources,
        )

    def stft_config(self) -> StftConfig:
        return StftConfig(window_length=self.window_length, hop_length=self.hop_length)

    def iterations_for(self, stage: str) -> int:
        return {
            "pretrain": self.pretrain_iterations,
            "finetune": self.finetune_iterations,
            "baseline": self.baseline_iterations,
        }[stage]


_REQUIRED = ("train_corpus", "val_corpus", "test_corpus", "output_dir")
_FIELDS = {f.name: f for f in fields(ExperimentManifest)}
_INT_KEYS = {name for name, f in _FIELDS.items() if f.type in ("int",)}
_FLOAT_KEYS = {"chunk_seconds"}


def parse_manifest(path) -> ExperimentManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    values: dict[str, object] = {}
    seen_lines: dict[str, int] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ManifestError(f"expected 'key = value', got {raw!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELDS:
            raise ManifestError(f"unknown key {key!r}", lineno)
        if key in seen_lines:
            raise ManifestError(f"duplicate key {key!r} (first set on line {seen_lines[key]})",
                                lineno)
        seen_lines[key] = lineno
        try:
            if key == "augmentations":
                values[key] = tuple(a.strip() for a in value.split(",") if a.strip())
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ManifestError(f"bad value for {key!r}: {exc}", lineno) from None
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ManifestError(f"missing required keys: {', '.join(missing)}")
    try:
        return ExperimentManifest(**values)
    except ManifestError:
        raise
    except (TypeError, ValueError) as exc:
        raise ManifestError(str(exc)) from None


def format_manifest(manifest: ExperimentManifest) -> str:
    """Canonical `key = value` echo; parsing it reproduces the manifest."""
    lines = []
    for f in fields(ExperimentManifest):
        value = getattr(manifest, f.name)
        if f.name == "augmentations":
            value = ",".join(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
