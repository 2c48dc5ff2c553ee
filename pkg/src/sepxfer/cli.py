"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or an
unparseable manifest).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, evaluation, training
from .datapipe import RECIPES, load_corpus, make_synthetic_corpus
from .manifest import ExperimentManifest, ManifestError, format_manifest, parse_manifest

__all__ = ["main"]


def _write_run_echo(manifest: ExperimentManifest) -> None:
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.txt").write_text(f"# sepxfer {__version__}\n" + format_manifest(manifest))


def _cmd_make_corpus(args) -> int:
    make_synthetic_corpus(args.recipe, args.songs, args.seconds, args.seed,
                          args.out, sample_rate=args.sample_rate)
    print(f"wrote {args.songs} songs x {args.seconds:g}s to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    manifest = parse_manifest(args.manifest)
    _write_run_echo(manifest)
    checkpoint = training.pretrain(manifest)
    print(f"pretraining done: {checkpoint}")
    return 0


def _cmd_finetune(args) -> int:
    manifest = parse_manifest(args.manifest)
    _write_run_echo(manifest)
    checkpoint = training.finetune(manifest, init=args.init, regime=args.regime)
    print(f"fine-tuning done: {checkpoint}")
    return 0


def _cmd_evaluate(args) -> int:
    manifest = parse_manifest(args.manifest)
    _write_run_echo(manifest)
    corpus = load_corpus(args.corpus if args.corpus else manifest.test_corpus)
    out_csv = args.out
    if out_csv is None:
        out_csv = Path(manifest.output_dir) / "results.csv"
    results = evaluation.evaluate_system(
        args.checkpoint, corpus, args.n, args.seed,
        chunk_seconds=manifest.chunk_seconds,
        stft_config=manifest.stft_config(),
        mix_mode=manifest.mix_mode,
        out_csv=out_csv,
    )
    print(f"mean SI-SDR over {args.n} examples: {evaluation.mean_si_sdr(results):.3f} dB")
    print(f"results written to {out_csv}")
    return 0


def _cmd_compare(args) -> int:
    results_a = evaluation.read_results_csv(args.results_a)
    results_b = evaluation.read_results_csv(args.results_b)
    report = evaluation.compare_systems(results_a, results_b)
    if args.out is not None:
        evaluation.write_comparison_csv(report, results_a, results_b, args.out)
    print(f"system A mean SI-SDR: {report.mean_a:.3f} dB")
    print(f"system B mean SI-SDR: {report.mean_b:.3f} dB")
    if report.statistic is not None:
        print(f"Wilcoxon signed-rank statistic: {report.statistic:g}")
    print(report.verdict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepxfer",
        description="Pretrain, fine-tune, and evaluate separation models.")
    parser.add_argument("--version", action="version", version=f"sepxfer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate a synthetic stem corpus")
    p.add_argument("--recipe", required=True, choices=sorted(RECIPES))
    p.add_argument("--songs", type=int, default=10)
    p.add_argument("--seconds", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_corpus)

    p = sub.add_parser("pretrain", help="pretrain with the deep clustering loss")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune from a checkpoint or from scratch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--init", required=True,
                   help="checkpoint path, or 'scratch' for the baseline condition")
    p.add_argument("--regime", choices=("whole", "mask_only"), default="whole")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate", help="score a system on a test corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint path, or 'oracle' / 'ones' mask baselines")
    p.add_argument("--corpus", default=None,
                   help="corpus root (defaults to the manifest's test corpus)")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="results CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="one-sided Wilcoxon comparison of two result files")
    p.add_argument("--results-a", required=True)
    p.add_argument("--results-b", required=True)
    p.add_argument("--out", default=None, help="comparison CSV path")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
