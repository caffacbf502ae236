"""Sample train/dev/test splits from a fixture program with seeded parameters.

    python3 scripts/make_toy_data.py human_activity --out data/human --length 20
"""

import argparse
import sys
from pathlib import Path

from ndtt.data import write_dataset
from ndtt.fixtures import fixture_names, load_fixture
from ndtt.generator import SamplerConfig, sample
from ndtt.params import ParameterStore
from ndtt.semantics import NeuralModel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("fixture", choices=fixture_names())
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--length", type=int, default=20, help="modeled events per sequence")
    ap.add_argument("--splits", type=int, nargs=3, default=(40, 10, 10), metavar=("TRAIN", "DEV", "TEST"))
    ap.add_argument("--param-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    model = NeuralModel(load_fixture(args.fixture), ParameterStore(args.param_seed))
    k = 0
    for split, count in zip(("train", "dev", "test"), args.splits):
        seqs = []
        for _ in range(count):
            seq = sample(model, SamplerConfig(max_events=args.length, seed=args.seed * 100_003 + k))
            seq.name = f"{split}{len(seqs):04d}"
            seqs.append(seq)
            k += 1
        write_dataset(args.out / split, seqs)
        print(f"{split}: {count} sequences -> {args.out / split}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
