"""Run the four examples at a chosen preset and print the headline comparisons.

    python scripts/run_desk_campaigns.py --scale desk --out results/desk
"""

import argparse
import logging
from pathlib import Path

from pfopt.experiments import ExperimentKind
from pfopt.harness import convergence_iteration, prepare_targets, preset, run_campaign, write_outputs
from pfopt.pf_optimizer import Strategy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", choices=["desk", "paper"], default="desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--kinds", default=",".join(k.value for k in ExperimentKind))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    for kind in args.kinds.split(","):
        cfg = preset(kind, args.scale, master_seed=args.seed, output_dir=str(args.out / kind))
        targets = prepare_targets(cfg)
        summary = run_campaign(cfg, targets)
        write_outputs(summary, cfg.output_dir, targets)
        print(f"\n{kind}  (threshold {cfg.threshold:.4f})")
        for s in Strategy:
            st = summary.strategies[s]
            conv = convergence_iteration(st.mean_error, cfg.threshold)
            curve = " ".join(f"{v:.3f}" for v in st.mean_error)
            print(f"  {s.value:<11} conv {conv!s:>4}  final {st.mean_error[-1]:.4f}  "
                  f"time {st.wall_time:6.1f}s  | {curve}")


if __name__ == "__main__":
    main()
