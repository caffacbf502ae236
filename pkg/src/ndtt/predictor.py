"""Minimum-Bayes-risk prediction of the next event's time and type."""

from __future__ import annotations

import math
from collections.abc import Iterable

import numpy as np

from .autodiff import no_grad
from .data import EventSequence
from .engine import DatabaseState
from .errors import NoPrediction
from .generator import _first_event
from .likelihood import start_state, with_init
from .program import DISCRETE
from .semantics import NeuralModel
from .syntax import Atom

DEFAULT_TIME_SAMPLES = 100


def predict_time(model: NeuralModel, state: DatabaseState, t_prev: float, n: int = DEFAULT_TIME_SAMPLES, rng=None) -> float:
    """Mean of ``n`` next-event times drawn by thinning from ``t_prev``.

    The mean minimizes expected squared error.  Raises NoPrediction when
    no event is possible or every intensity bound is zero.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    draws = []
    with no_grad():
        for _ in range(n):
            got = _first_event(model, state, t_prev, math.inf, rng)
            if got is None:
                raise NoPrediction(f"no event can occur after time {t_prev}")
            draws.append(got[0])
    return float(np.mean(draws))


def candidates(model: NeuralModel, state: DatabaseState, restrict=None) -> list[Atom]:
    """E(t), optionally narrowed to a functor name or an explicit set of atoms."""
    events = model.engine.possible_events(state)
    if restrict is None:
        return events
    if isinstance(restrict, str):
        keep = [e for e in events if e.functor == restrict]
    else:
        wanted = set(restrict)
        keep = [e for e in events if e in wanted]
    if not keep:
        raise NoPrediction(f"restriction {restrict!r} leaves no possible event")
    return keep


def predict_type(model: NeuralModel, state: DatabaseState, t: float, restrict=None) -> Atom:
    """argmax of lambda_e(t) over the candidates; ties go to the first in canonical order."""
    events = candidates(model, state, restrict)
    if not events:
        raise NoPrediction(f"no possible event at time {t}")
    with no_grad():
        if model.mode == DISCRETE:
            vals = [model.score(state, e, t).item() for e in events]
        else:
            vals = [model.intensity(state, e, t).item() for e in events]
    return events[int(np.argmax(vals))]


def _summary(count: int, sq_errs: list[float], wrong: list[bool]) -> dict:
    return {
        "num_tokens": count,
        "time_rmse": math.sqrt(float(np.mean(sq_errs))) if sq_errs else None,
        "type_error_rate": float(np.mean(wrong)) if wrong else None,
    }


def evaluate_predictions(
    model: NeuralModel,
    seqs: Iterable[EventSequence],
    n: int = DEFAULT_TIME_SAMPLES,
    rng=None,
    restrict=None,
    tasks: Iterable[str] = ("time", "type"),
) -> dict:
    """Predict every modeled token of every sequence from its prefix.

    The time of token i is predicted from the state after the last token
    before it (modeled or exogenous), starting at that token's time.  The
    type is predicted at the true time.  Exogenous tokens are conditioned
    on and never predicted.  Discrete mode predicts types only.  With
    ``restrict`` (a functor name) types are predicted only for tokens of
    that functor, choosing among possible events of that functor.  The
    report lists every prediction under ``predictions``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tasks = set(tasks)
    if model.mode == DISCRETE:
        tasks.discard("time")
    by_functor: dict[str, tuple[list, list, list]] = {}
    rows = []
    with no_grad():
        for k, seq in enumerate(seqs):
            model.reset()
            state = start_state(model)
            prev = 0.0
            for t, toks in with_init(model.program, seq):
                for tok in toks:
                    if tok.exogenous:
                        continue
                    count, sq_errs, wrong = by_functor.setdefault(tok.event.functor, ([], [], []))
                    count.append(1)
                    row = {"sequence": seq.name or str(k), "time": t, "event": str(tok.event)}
                    if "time" in tasks:
                        row["predicted_time"] = predict_time(model, state, prev, n, rng)
                        sq_errs.append((row["predicted_time"] - t) ** 2)
                    if "type" in tasks and (restrict is None or tok.event.functor == restrict):
                        guess = predict_type(model, state, t, restrict)
                        row["predicted_type"] = str(guess)
                        wrong.append(guess != tok.event)
                    rows.append(row)
                model.step(state, t, [tok.event for tok in toks])
                prev = t
    buckets = by_functor.values()
    report = _summary(
        sum(len(b[0]) for b in buckets),
        [x for b in buckets for x in b[1]],
        [x for b in buckets for x in b[2]],
    )
    report["per_functor"] = {f: _summary(len(b[0]), b[1], b[2]) for f, b in sorted(by_functor.items())}
    report["predictions"] = rows
    return report
