"""``fogfair`` command-line entry point."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .errors import DataError, FogFairError
from .experiment import STRATEGIES, ExperimentConfig, ExperimentRunner, MitigationConfig
from .ingest import convert_daphnet, load_dataset
from .report import PAIRINGS, FairnessReport, build_report, compare_reports, render_report
from .synth import BIASABLE, SynthSpec, write_fixture

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2


def _emit(data: bytes, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _load_config(args, mitigation=None) -> ExperimentConfig:
    cfg = ExperimentConfig.read(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.iterations is not None:
        changes["n_iterations"] = args.iterations
    if mitigation is not None:
        changes["mitigation"] = MitigationConfig(**{**cfg.mitigation.to_dict(), "strategy": mitigation})
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _run(cfg: ExperimentConfig, args) -> int:
    runner = ExperimentRunner(cfg)

    def progress(sample):
        if args.verbose:
            print(f"iteration {sample.iteration} fold {sample.fold}: F1 {sample.f1:.3f}", file=sys.stderr)

    samples = runner.run(progress=progress)
    report = build_report(samples, dataset=runner.dataset_id, model=cfg.model,
                          mitigation=cfg.mitigation.strategy, config_hash=cfg.config_hash(),
                          master_seed=cfg.seed)
    _emit(render_report(report, args.format), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    recordings, metadata = load_dataset(args.dataset)
    n = sum(r.n_samples for r in recordings)
    print(f"ok: {len(recordings)} recordings, {len(metadata)} subjects, {n} samples")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _load_config(args, mitigation="none")
    return _run(cfg, args)


def cmd_mitigate(args) -> int:
    cfg = _load_config(args, mitigation=args.mitigation)
    return _run(cfg, args)


def cmd_compare(args) -> int:
    report = compare_reports(FairnessReport.read(args.before), FairnessReport.read(args.after), args.pairing)
    _emit(render_report(report, args.format), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    _emit(render_report(FairnessReport.read(args.results), args.format), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(n_subjects=args.subjects, duration_s=args.duration, bias_attribute=args.bias_attribute,
                     bias_ratio=args.bias_ratio, tremulous_fraction=args.tremulous_fraction, seed=args.seed)
    path = write_fixture(args.out, spec)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_convert_daphnet(args) -> int:
    paths = convert_daphnet(args.raw_dir, args.out, args.metadata)
    print(f"wrote {len(paths)} recordings to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fogfair", description="Fairness audits for FOG detection models.")
    p.add_argument("--version", action="version", version=f"fogfair {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate-data", help="check a dataset directory against its manifest")
    s.add_argument("dataset")
    s.set_defaults(func=cmd_validate)

    def experiment_flags(s):
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--iterations", type=int)
        s.add_argument("--format", choices=["json", "text", "csv"], default="json")
        s.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("audit", help="cross-validated fairness audit without mitigation")
    experiment_flags(s)
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("mitigate", help="cross-validated audit with a mitigation strategy")
    experiment_flags(s)
    s.add_argument("--mitigation", choices=STRATEGIES, required=True)
    s.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("compare", help="paired Wilcoxon tests between two result files")
    s.add_argument("before")
    s.add_argument("after")
    s.add_argument("--pairing", choices=PAIRINGS, default="fold",
                   help="pair per (iteration, fold) or per dataset average")
    s.add_argument("--out")
    s.add_argument("--format", choices=["json", "text", "csv"], default="text")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", help="render a JSON result file as text or CSV")
    s.add_argument("results")
    s.add_argument("--out")
    s.add_argument("--format", choices=["json", "text", "csv"], default="text")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write a synthetic dataset and experiment config")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=24)
    s.add_argument("--duration", type=float, default=200.0)
    s.add_argument("--bias-attribute", choices=BIASABLE, default="Sex")
    s.add_argument("--bias-ratio", type=float, default=2.0)
    s.add_argument("--tremulous-fraction", type=float, default=0.7)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("convert-daphnet", help="convert the raw Daphnet text files to the CSV layout")
    s.add_argument("raw_dir")
    s.add_argument("--out", required=True)
    s.add_argument("--metadata", help="subject metadata CSV to copy alongside")
    s.set_defaults(func=cmd_convert_daphnet)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FogFairError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
