"""Run the superposition learning-curve experiment and write its results.

    python3 scripts/superposition_experiment.py --out results/superposition
    python3 scripts/superposition_experiment.py --sizes 25 --models structured nhp structured_shared
"""

import argparse
import sys
from pathlib import Path

from ndtt.experiments import SuperpositionConfig, config_json, results_csv, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/superposition"))
    ap.add_argument("--sizes", type=int, nargs="+", help="training subset sizes")
    ap.add_argument("--models", nargs="+", help="superposition variants to train")
    ap.add_argument("--max-epochs", type=int)
    ap.add_argument("--data-seed", type=int)
    args = ap.parse_args(argv)

    cfg = SuperpositionConfig()
    if args.sizes:
        cfg.subset_sizes = tuple(args.sizes)
    if args.models:
        cfg.models = tuple(args.models)
    if args.max_epochs is not None:
        cfg.max_epochs = args.max_epochs
    if args.data_seed is not None:
        cfg.data_seed = args.data_seed

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(config_json(cfg) + "\n")
    results = run(cfg, log=lambda line: print(line, flush=True))
    (args.out / "results.csv").write_text(results_csv(results))
    print(f"wrote {args.out / 'results.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
