"""Log-likelihood of event sequences and maximum-likelihood training."""

from __future__ import annotations

import csv
import io
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor, constant, no_grad
from .data import EventSequence, Token
from .engine import DatabaseState
from .errors import DataError, NDTTError
from .params import Adam, ParameterStore
from .program import CONTINUOUS, DISCRETE, ValidatedProgram
from .semantics import NeuralModel
from .syntax import Atom

INIT = Atom("init")


@dataclass
class LogLikReport:
    event_term: float
    integral_term: float
    total: float
    num_events: int
    num_samples: int = 0
    downsample: int = 0
    loss: Tensor | None = field(default=None, repr=False)  # differentiable total

    @property
    def per_event(self) -> float:
        return self.total / self.num_events if self.num_events else 0.0


def with_init(program: ValidatedProgram, seq: EventSequence) -> list[tuple[float, list[Token]]]:
    """Event groups, with an exogenous ``init`` at time 0 when the program uses it."""
    groups = seq.groups()
    if program.mentions_init:
        has = any(tok.event == INIT for t, toks in groups if t == 0 for tok in toks)
        if not has:
            if groups and groups[0][0] == 0:
                groups[0] = (0.0, [Token(0.0, INIT, True)] + groups[0][1])
            else:
                groups.insert(0, (0.0, [Token(0.0, INIT, True)]))
    return groups


def start_state(model: NeuralModel) -> DatabaseState:
    return model.engine.init_state()


def _impossible(model, state, tok, t, idx, seq):
    possible = ", ".join(str(e) for e in model.engine.possible_events(state)) or "(none)"
    where = f"{seq.name or 'sequence'} token {idx}"
    return DataError(f"{where}: event {tok.event} is impossible at time {t}; E(t) = {{{possible}}}")


def downsampled_total(lams: list[Tensor], k: int, rng: np.random.Generator) -> Tensor:
    """(|E|/k) * sum of k intensities drawn uniformly with replacement."""
    n = len(lams)
    idx = rng.integers(0, n, size=k)
    return ad.scale(ad.sum_list([lams[i] for i in idx]), n / k)


def loglik_continuous(
    model: NeuralModel,
    seq: EventSequence,
    mc_multiplier: float = 1.0,
    downsample: int = 10,
    rng: np.random.Generator | None = None,
    sample_times=None,
) -> LogLikReport:
    """log L = sum_i log lambda_{e_i}(t_i) - int_0^T lambda(t) dt.

    The integral is a Monte Carlo average over ``ceil(mc_multiplier * I)``
    uniform times on [0, T] (or the given ``sample_times``).  With
    ``downsample > 0`` the sum over possible events at each sample time is
    replaced by the unbiased bag estimator.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    I = seq.num_events
    T = float(seq.horizon)
    if sample_times is None:
        K = max(1, math.ceil(mc_multiplier * I)) if T > 0 else 0
        sample_times = np.sort(rng.uniform(0.0, T, size=K))
    else:
        sample_times = np.sort(np.asarray(sample_times, dtype=float))
        K = len(sample_times)
    model.reset()
    state = start_state(model)
    groups = with_init(model.program, seq)
    event_terms: list[Tensor] = []
    integral_terms: list[Tensor] = []
    j = 0
    idx = 0

    def integrate_until(limit):
        nonlocal j
        while j < K and sample_times[j] < limit:
            u = float(sample_times[j])
            events = model.engine.possible_events(state)
            if events:
                lams = [model.intensity(state, e, u) for e in events]
                if downsample and downsample > 0:
                    integral_terms.append(downsampled_total(lams, downsample, rng))
                else:
                    integral_terms.append(ad.sum_list(lams))
            j += 1

    for t, toks in groups:
        integrate_until(t)
        for tok in toks:
            if not tok.exogenous:
                if tok.event not in state.facts or tok.event.functor not in model.program.event_functors:
                    raise _impossible(model, state, tok, t, idx, seq)
                event_terms.append(ad.log(model.intensity(state, tok.event, t)))
            idx += 1
        model.step(state, t, [tok.event for tok in toks])
    integrate_until(math.inf)
    ev = ad.sum_list(event_terms) if event_terms else constant(0.0)
    integral = ad.scale(ad.sum_list(integral_terms), T / K) if integral_terms else constant(0.0)
    loss = ad.sub(ev, integral)
    return LogLikReport(
        float(ev.value), float(integral.value), float(loss.value), I, K, downsample, loss
    )


def loglik_discrete(model: NeuralModel, seq: EventSequence) -> LogLikReport:
    """sum_t [score_{e_t}(t) - logsumexp over E(t)]: a softmax per step."""
    model.reset()
    state = start_state(model)
    groups = with_init(model.program, seq)
    ev_terms, norm_terms = [], []
    idx = 0
    for t, toks in groups:
        for tok in toks:
            if not tok.exogenous:
                events = model.engine.possible_events(state)
                if tok.event not in set(events):
                    raise _impossible(model, state, tok, t, idx, seq)
                scores = ad.concat([ad.reshape(model.score(state, e, t), (1,)) for e in events])
                ev_terms.append(model.score(state, tok.event, t))
                norm_terms.append(ad.logsumexp(scores))
            idx += 1
        model.step(state, t, [tok.event for tok in toks])
    ev = ad.sum_list(ev_terms) if ev_terms else constant(0.0)
    norm = ad.sum_list(norm_terms) if norm_terms else constant(0.0)
    loss = ad.sub(ev, norm)
    return LogLikReport(float(ev.value), float(norm.value), float(loss.value), seq.num_events, loss=loss)


def loglik(model: NeuralModel, seq: EventSequence, mc_multiplier=1.0, downsample=10, rng=None) -> LogLikReport:
    if model.mode == DISCRETE:
        return loglik_discrete(model, seq)
    return loglik_continuous(model, seq, mc_multiplier, downsample, rng)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    mc_multiplier: float = 1.0
    downsample: int = 10
    seed: int = 0
    mode: str = CONTINUOUS
    use_memo: bool = True
    record_wallclock: bool = False


class TrainingError(NDTTError):
    pass


@dataclass
class TrainResult:
    store: ParameterStore  # best parameters by dev ll/event
    optimizer: Adam
    metrics: list[dict]
    best_epoch: int

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_ll_per_event", "dev_ll_per_event", "wallclock_s", "learning_rate"])
        for row in self.metrics:
            w.writerow([
                row["epoch"],
                repr(row["train_ll_per_event"]),
                repr(row["dev_ll_per_event"]),
                "" if row["wallclock_s"] is None else f"{row['wallclock_s']:.3f}",
                repr(row["learning_rate"]),
            ])
        return buf.getvalue()


def evaluate(
    program: ValidatedProgram,
    store: ParameterStore,
    seqs: list[EventSequence],
    config: TrainConfig,
    stream: int = 1,
) -> tuple[float, list[LogLikReport]]:
    """Total ll per event over ``seqs`` without building a graph.

    MC draws use fixed per-sequence seeds, so repeated evaluations of
    different parameters share their random numbers.
    """
    model = NeuralModel(program, store, config.mode)
    model.engine.use_memo = config.use_memo
    reports = []
    with no_grad():
        for i, seq in enumerate(seqs):
            rng = np.random.default_rng([config.seed, stream, i])
            reports.append(loglik(model, seq, config.mc_multiplier, config.downsample, rng))
    n = sum(r.num_events for r in reports)
    return (sum(r.total for r in reports) / n if n else 0.0), reports


def train(
    program: ValidatedProgram,
    train_seqs: list[EventSequence],
    dev_seqs: list[EventSequence],
    config: TrainConfig,
    store: ParameterStore | None = None,
    log=None,
) -> TrainResult:
    """Adam with minibatch 1 and early stopping on dev ll per event."""
    store = store if store is not None else ParameterStore(config.seed)
    model = NeuralModel(program, store, config.mode)
    model.engine.use_memo = config.use_memo
    opt = Adam(lr=config.lr)
    start = _time.perf_counter()
    train_ll, _ = evaluate(program, store, train_seqs, config, stream=2)
    dev_ll, _ = evaluate(program, store, dev_seqs, config, stream=1)
    metrics = [_row(0, train_ll, dev_ll, start, config)]
    if log:
        log(metrics[-1])
    best, best_epoch, best_store, bad = dev_ll, 0, store.copy(), 0
    for epoch in range(1, config.max_epochs + 1):
        total, count = 0.0, 0
        for i, seq in enumerate(train_seqs):
            rng = np.random.default_rng([config.seed, 0, epoch, i])
            try:
                rep = loglik(model, seq, config.mc_multiplier, config.downsample, rng)
                if rep.loss.requires_grad:
                    ad.backward(ad.scale(rep.loss, -1.0))
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}, sequence {i} ({seq.name}): {exc}") from exc
            opt.step(store)
            total += rep.total
            count += rep.num_events
        train_ll = total / count if count else 0.0
        dev_ll, _ = evaluate(program, store, dev_seqs, config, stream=1)
        metrics.append(_row(epoch, train_ll, dev_ll, start, config))
        if log:
            log(metrics[-1])
        if dev_ll > best:
            best, best_epoch, best_store, bad = dev_ll, epoch, store.copy(), 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    return TrainResult(best_store, opt, metrics, best_epoch)


def _row(epoch, train_ll, dev_ll, start, config) -> dict:
    return {
        "epoch": epoch,
        "train_ll_per_event": train_ll,
        "dev_ll_per_event": dev_ll,
        "wallclock_s": (_time.perf_counter() - start) if config.record_wallclock else None,
        "learning_rate": config.lr,
    }
