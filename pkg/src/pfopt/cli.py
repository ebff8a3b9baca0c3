"""Command-line entry point: ``pfopt generate|run|report``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import ExperimentKind, generate_samples
from .harness import (
    SCALES,
    ConfigError,
    atomic_write,
    dump_config,
    dump_targets,
    load_targets,
    parse_config,
    preset,
    report,
    run_campaign,
    write_outputs,
)
from .moment_match import compute_target_moments

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ALL_FAILED = 2

log = logging.getLogger("pfopt")


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfopt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_out=True):
        p.add_argument("--config", type=Path, help="JSON campaign config")
        p.add_argument("--scale", choices=sorted(SCALES), default="desk",
                       help="parameter preset used when no --config is given")
        p.add_argument("--kind", choices=[k.value for k in ExperimentKind], default=ExperimentKind.INDEP.value,
                       help="experiment used when no --config is given")
        p.add_argument("--seed", type=_seed, help="override the master seed")
        p.add_argument("--out", type=Path, required=need_out, help="output directory")

    gen = sub.add_parser("generate", help="draw source samples and write target moments")
    common(gen)
    gen.add_argument("--no-samples", action="store_true", help="skip writing samples.npy")

    run = sub.add_parser("run", help="run a campaign over all configured strategies")
    common(run, need_out=False)
    run.add_argument("--targets", type=Path, help="reuse a targets.txt written by 'generate'")

    rep = sub.add_parser("report", help="rebuild summary.csv and the plot from stored traces")
    rep.add_argument("--out", type=Path, required=True, help="directory of a finished run")
    return parser


def load_config(args):
    if args.config is not None:
        try:
            cfg = parse_config(args.config)
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from exc
        if args.seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, master_seed=args.seed))
    else:
        cfg = preset(args.kind, args.scale, master_seed=args.seed or 0)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_generate(args) -> int:
    cfg = load_config(args)
    samples = generate_samples(cfg.experiment)
    targets = compute_target_moments(samples)
    out = Path(cfg.output_dir)
    if not args.no_samples:
        buf = io.BytesIO()
        np.save(buf, samples)
        atomic_write(out / "samples.npy", buf.getvalue())
    atomic_write(out / "targets.txt", dump_targets(targets))
    atomic_write(out / "config.json", dump_config(cfg))
    print(f"wrote {len(samples)} samples and 24 target moments to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args)
    targets = None
    if args.targets is not None:
        try:
            targets = load_targets(args.targets.read_text())
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"{args.targets}: cannot read target moments ({exc})") from exc
    if targets is None:
        targets = compute_target_moments(generate_samples(cfg.experiment))
    summary = run_campaign(cfg, targets)
    write_outputs(summary, cfg.output_dir, targets)
    meta = json.loads((Path(cfg.output_dir) / "metadata.json").read_text())
    for s, e in meta["final_mean_error"].items():
        print(f"{s:<11} final mean error {e:.4g}  converged at {meta['convergence_iteration'].get(s)}")
    for line in summary.failures:
        print(f"failed: {line}", file=sys.stderr)
    return EXIT_ALL_FAILED if summary.all_failed else EXIT_OK


def cmd_report(args) -> int:
    summary = report(args.out)
    print(f"rebuilt summary for {len(summary.strategies)} strategies in {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"generate": cmd_generate, "run": cmd_run, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
