"""Superposition learning-curve experiment: structured program versus a flat NHP."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .data import EventSequence
from .fixtures import superposition_program
from .generator import SamplerConfig, sample_continuous
from .likelihood import TrainConfig, evaluate, train
from .params import ParameterStore
from .program import compile_program
from .semantics import NeuralModel, ground_parameters


@dataclass
class SuperpositionConfig:
    processes: int = 4
    types: int = 4
    dim: int = 4
    length: int = 21
    num_train: int = 200
    num_dev: int = 50
    num_test: int = 50
    subset_sizes: tuple[int, ...] = (25, 50, 100, 200)
    data_seed: int = 11
    generator_gain: float = 3.0
    train_seed: int = 0
    lr: float = 0.02
    max_epochs: int = 8
    patience: int = 2
    test_mc_multiplier: float = 10.0
    permutations: int = 9999
    models: tuple[str, ...] = ("structured", "nhp")


@dataclass
class SizeResult:
    size: int
    test_ll: dict = field(default_factory=dict)  # model -> held-out ll per event
    best_epoch: dict = field(default_factory=dict)
    per_sequence: dict = field(default_factory=dict)  # model -> [ll per event per test sequence]
    p_value: float | None = None


def generating_store(cfg: SuperpositionConfig) -> ParameterStore:
    """The data-generating parameters: a seeded init scaled by ``generator_gain``."""
    prog = compile_program(superposition_program(cfg.processes, cfg.types, "structured", cfg.dim))
    store = ParameterStore(cfg.data_seed)
    for name, (role, shape) in ground_parameters(prog).items():
        t = store.get(name, shape, role)
        if role == "matrix":
            t.value = t.value * cfg.generator_gain
    return store


def make_data(cfg: SuperpositionConfig) -> tuple[list[EventSequence], list[EventSequence], list[EventSequence]]:
    prog = compile_program(superposition_program(cfg.processes, cfg.types, "structured", cfg.dim))
    model = NeuralModel(prog, generating_store(cfg))
    total = cfg.num_train + cfg.num_dev + cfg.num_test
    seqs = []
    for i in range(total):
        rng = np.random.default_rng([cfg.data_seed, 100, i])
        seq = sample_continuous(model, SamplerConfig(max_events=cfg.length), rng=rng)
        seq.name = f"seq{i:04d}"
        seqs.append(seq)
    a, b = cfg.num_train, cfg.num_train + cfg.num_dev
    return seqs[:a], seqs[a:b], seqs[b:]


def paired_permutation_p(diffs, permutations: int, seed: int) -> float:
    """One-sided sign-flip test of mean(diffs) > 0."""
    res = stats.permutation_test(
        (np.asarray(diffs, dtype=float),),
        np.mean,
        permutation_type="samples",
        n_resamples=permutations,
        alternative="greater",
        random_state=np.random.default_rng(seed),
    )
    return float(res.pvalue)


def run(cfg: SuperpositionConfig, log=None) -> list[SizeResult]:
    train_all, dev, test = make_data(cfg)
    programs = {
        m: compile_program(superposition_program(cfg.processes, cfg.types, m, cfg.dim)) for m in cfg.models
    }
    tcfg = TrainConfig(
        lr=cfg.lr, max_epochs=cfg.max_epochs, patience=cfg.patience, downsample=0, seed=cfg.train_seed
    )
    ecfg = TrainConfig(mc_multiplier=cfg.test_mc_multiplier, downsample=0, seed=cfg.train_seed)
    results = []
    for size in cfg.subset_sizes:
        res = SizeResult(size)
        for m, prog in programs.items():
            start = time.perf_counter()
            out = train(prog, train_all[:size], dev, tcfg)
            ll, reports = evaluate(prog, out.store, test, ecfg, stream=3)
            res.test_ll[m] = ll
            res.best_epoch[m] = out.best_epoch
            res.per_sequence[m] = [r.per_event for r in reports]
            if log:
                log(f"size {size:4d}  {m:18s} test ll/event {ll:.4f}  best epoch {out.best_epoch}"
                    f"  ({time.perf_counter() - start:.1f}s)")
        if "structured" in res.per_sequence and "nhp" in res.per_sequence:
            diffs = np.subtract(res.per_sequence["structured"], res.per_sequence["nhp"])
            res.p_value = paired_permutation_p(diffs, cfg.permutations, cfg.train_seed)
            if log:
                log(f"size {size:4d}  paired permutation p = {res.p_value:.4g}")
        results.append(res)
    return results


def results_csv(results: list[SizeResult]) -> str:
    models = sorted({m for r in results for m in r.test_ll})
    lines = ["train_size," + ",".join(f"{m}_test_ll_per_event" for m in models) + ",p_value"]
    for r in results:
        cells = [repr(r.test_ll[m]) for m in models]
        lines.append(f"{r.size}," + ",".join(cells) + "," + ("" if r.p_value is None else repr(r.p_value)))
    return "\n".join(lines) + "\n"


def config_json(cfg: SuperpositionConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)
