"""Command-line interface: ``ndtt check|train|eval|sample|predict``.

Exit codes: 0 ok, 1 usage, 2 program validation, 3 data mismatch,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .data import DataFormatError, read_dataset, read_sequence, write_dataset
from .errors import DataError, NoPrediction, ProgramError
from .generator import BoundViolation, SamplerConfig, sample
from .likelihood import INIT, TrainConfig, TrainingError, evaluate, train
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .predictor import DEFAULT_TIME_SAMPLES, evaluate_predictions
from .program import CONTINUOUS, DISCRETE, load_program, resolve_parameters
from .semantics import NeuralModel

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    program: str
    train: str | None = None
    dev: str | None = None
    mode: str = CONTINUOUS
    lr: float = 1e-3
    seed: int = 0
    mc_multiplier: float = 1.0
    downsample: int = 10
    patience: int = 3
    max_epochs: int = 20
    use_memo: bool = True
    record_wallclock: bool = False
    out: str = "run"

    def __post_init__(self):
        for name in ("lr", "mc_multiplier"):
            if not getattr(self, name) > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        for name in ("downsample", "patience", "max_epochs"):
            if getattr(self, name) < 0:
                raise UsageError(f"--{name.replace('_', '-')} must not be negative")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            max_epochs=self.max_epochs,
            patience=self.patience,
            mc_multiplier=self.mc_multiplier,
            downsample=self.downsample,
            seed=self.seed,
            mode=self.mode,
            use_memo=self.use_memo,
            record_wallclock=self.record_wallclock,
        )


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_store(args, program) -> ParameterStore:
    if args.checkpoint is None:
        return ParameterStore(args.param_seed)
    store, _opt, doc = load_checkpoint(args.checkpoint)
    if doc.get("program_hash") and doc["program_hash"] != program.program_hash:
        print(f"warning: checkpoint was trained on a different program ({doc['program_hash'][:12]})", file=sys.stderr)
    return store


# ---------------------------------------------------------------------------
# commands


def cmd_check(args) -> int:
    program = load_program(args.program)
    sigs = resolve_parameters(program, args.mode)
    print(f"OK: {len(program.rules)} rules, {len(program.declarations)} declarations, "
          f"{len(program.strata)} functors in {max(program.strata.values(), default=-1) + 1} strata")
    total = 0
    for name, (role, shape) in sigs.items():
        size = int(np.prod(shape))
        total += size
        print(f"  {name:30s} {role:7s} {'x'.join(map(str, shape)) or 'scalar'}")
    print(f"{len(sigs)} parameter names, {total} scalars per ground instance")
    if args.trace:
        model = NeuralModel(program, ParameterStore(args.param_seed), args.mode)
        state = model.engine.init_state()
        if program.mentions_init:
            model.step(state, 0.0, [INIT])
        print(state.dump())
    return EXIT_OK


def _train_one(program, cfg: RunConfig, train_seqs, dev_seqs, out: Path, log) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    result = train(program, train_seqs, dev_seqs, cfg.train_config(), log=log)
    save_checkpoint(out / "checkpoint.json", result.store, program.program_hash, result.optimizer)
    (out / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
    best = result.metrics[result.best_epoch]
    return {"best_epoch": result.best_epoch, "dev_ll_per_event": best["dev_ll_per_event"],
            "train_ll_per_event": best["train_ll_per_event"]}


def cmd_train(args) -> int:
    cfg = RunConfig(
        program=args.program, train=args.train, dev=args.dev, mode=args.mode, lr=args.lr, seed=args.seed,
        mc_multiplier=args.mc_multiplier, downsample=args.downsample, patience=args.patience,
        max_epochs=args.max_epochs, use_memo=not args.no_memo, record_wallclock=args.record_wallclock,
        out=args.out,
    )
    program = load_program(cfg.program)
    train_seqs = read_dataset(cfg.train, cfg.mode)
    dev_seqs = read_dataset(cfg.dev, cfg.mode) if cfg.dev else []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    def log(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:3d}  train {row['train_ll_per_event']:.6f}  dev {row['dev_ll_per_event']:.6f}",
                  file=sys.stderr)

    manifest = {"config": asdict(cfg), "program_hash": program.program_hash, "git_describe": git_describe(),
                "num_train": len(train_seqs), "num_dev": len(dev_seqs)}
    if args.subset_sizes:
        sizes = [int(s) for s in args.subset_sizes.split(",")]
        if any(s <= 0 or s > len(train_seqs) for s in sizes):
            raise UsageError(f"--subset-sizes must lie in 1..{len(train_seqs)}")
        rows = ["train_size,best_epoch,train_ll_per_event,dev_ll_per_event"]
        for s in sizes:
            summary = _train_one(program, cfg, train_seqs[:s], dev_seqs, out / f"size{s}", log)
            rows.append(f"{s},{summary['best_epoch']},{summary['train_ll_per_event']!r},{summary['dev_ll_per_event']!r}")
        (out / "learning_curve.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        manifest["subset_sizes"] = sizes
    else:
        manifest.update(_train_one(program, cfg, train_seqs, dev_seqs, out, log))
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    program = load_program(args.program)
    store = _load_store(args, program)
    seqs = read_dataset(args.data, args.mode)
    cfg = TrainConfig(mc_multiplier=args.mc_multiplier, downsample=args.downsample, seed=args.seed, mode=args.mode)
    ll, reports = evaluate(program, store, seqs, cfg, stream=3)
    doc = {
        "num_sequences": len(seqs),
        "num_events": sum(r.num_events for r in reports),
        "ll_per_event": ll,
        "total_ll": sum(r.total for r in reports),
        "downsample": args.downsample,
        "sequences": [
            {"name": s.name, "num_events": r.num_events, "total_ll": r.total, "ll_per_event": r.per_event}
            for s, r in zip(seqs, reports)
        ],
    }
    _emit(doc, args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    if (args.length is None) == (args.horizon is None):
        raise UsageError("give exactly one of --length and --horizon")
    program = load_program(args.program)
    store = _load_store(args, program)
    model = NeuralModel(program, store, args.mode)
    exo = read_sequence(args.exogenous, args.mode).tokens if args.exogenous else None
    length, horizon = args.length, args.horizon
    if args.mode == DISCRETE and horizon is not None:
        length, horizon = int(horizon), None
    seqs = []
    for i in range(args.num_seqs):
        # one independent stream per sequence, split from the user seed
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        seqs.append(sample(model, SamplerConfig(max_events=length, horizon=horizon, seed=seed), exo))
    write_dataset(args.out, seqs)
    print(f"wrote {len(seqs)} sequences to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    program = load_program(args.program)
    store = _load_store(args, program)
    model = NeuralModel(program, store, args.mode)
    seqs = read_dataset(args.data, args.mode)
    tasks = ("time", "type") if args.task == "both" else (args.task,)
    rng = np.random.default_rng(args.seed)
    report = evaluate_predictions(model, seqs, args.n, rng, args.restrict, tasks)
    _emit(report, args.out)
    return EXIT_OK


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ndtt", description="Datalog-defined neural event models: check, train, evaluate, sample, predict.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, checkpoint=False):
        sp.add_argument("program", help="program file (.ndtt)")
        sp.add_argument("--mode", choices=[CONTINUOUS, DISCRETE], default=CONTINUOUS, help="time domain")
        sp.add_argument("--jobs", type=int, default=1, help="worker cap (work runs sequentially; kept for scripts)")
        if checkpoint:
            sp.add_argument("--checkpoint", help="checkpoint JSON; omitted means a fresh seeded initialization")
            sp.add_argument("--param-seed", type=int, default=0, help="initialization seed without a checkpoint")

    sp = sub.add_parser("check", help="validate a program and list its parameters")
    common(sp)
    sp.add_argument("--trace", action="store_true", help="also build the initial database and dump its facts")
    sp.add_argument("--param-seed", type=int, default=0, help="initialization seed used by --trace")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("train", help="maximum-likelihood training with early stopping")
    common(sp)
    sp.add_argument("--train", required=True, help="training data: a .jsonl file or a directory of them")
    sp.add_argument("--dev", help="dev data for early stopping")
    sp.add_argument("--out", default="run", help="output directory")
    sp.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    sp.add_argument("--seed", type=int, default=0, help="initialization and sampling seed")
    sp.add_argument("--mc-multiplier", type=float, default=1.0, help="integral samples per event")
    sp.add_argument("--downsample", type=int, default=10, help="events per integral sample; 0 sums all")
    sp.add_argument("--patience", type=int, default=3, help="epochs without dev improvement before stopping")
    sp.add_argument("--max-epochs", type=int, default=20, help="epoch limit; 0 writes the initialization")
    sp.add_argument("--subset-sizes", help="comma-separated training-set sizes for a learning curve")
    sp.add_argument("--no-memo", action="store_true", help="disable query memoization in the engine")
    sp.add_argument("--record-wallclock", action="store_true", help="fill the wallclock_s column")
    sp.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="held-out log-likelihood")
    common(sp, checkpoint=True)
    sp.add_argument("--data", required=True, help="a .jsonl file or a directory of them")
    sp.add_argument("--downsample", type=int, default=0, help="events per integral sample; 0 is exact")
    sp.add_argument("--mc-multiplier", type=float, default=1.0, help="integral samples per event")
    sp.add_argument("--seed", type=int, default=0, help="seed for integral sample times")
    sp.add_argument("--out", help="report JSON path (default stdout)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sample", help="draw sequences from a model")
    common(sp, checkpoint=True)
    sp.add_argument("--out", required=True, help="output directory for .jsonl files")
    sp.add_argument("--num-seqs", type=int, default=1, help="number of sequences")
    sp.add_argument("--length", type=int, help="stop after this many modeled events (or steps)")
    sp.add_argument("--horizon", type=float, help="stop at this time")
    sp.add_argument("--seed", type=int, default=0, help="sampling seed")
    sp.add_argument("--exogenous", help="a .jsonl file of exogenous events to interleave")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("predict", help="next-event time and type prediction")
    common(sp, checkpoint=True)
    sp.add_argument("--data", required=True, help="a .jsonl file or a directory of them")
    sp.add_argument("--task", choices=["time", "type", "both"], default="both", help="what to predict")
    sp.add_argument("--n", type=int, default=DEFAULT_TIME_SAMPLES, help="samples per time prediction")
    sp.add_argument("--restrict", help="predict types only among events of this functor")
    sp.add_argument("--seed", type=int, default=0, help="sampling seed")
    sp.add_argument("--out", help="report JSON path (default stdout)")
    sp.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ndtt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProgramError as exc:
        sep = ":" if exc.line is not None else ": "
        print(f"{args.program}{sep}{exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, DataFormatError, NoPrediction) as exc:
        print(f"ndtt: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, TrainingError, BoundViolation) as exc:
        print(f"ndtt: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"ndtt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
