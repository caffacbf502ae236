"""Sampling event sequences: thinning in continuous time, softmax draws in discrete time."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .data import EventSequence, Token
from .engine import DatabaseState
from .errors import NDTTError
from .likelihood import INIT, start_state
from .program import CONTINUOUS, DISCRETE
from .semantics import NeuralModel
from .syntax import Atom


class BoundViolation(NDTTError):
    """The thinning upper bound was exceeded; the bound computation is wrong."""


@dataclass
class SamplerConfig:
    max_events: int | None = None
    horizon: float | None = None
    seed: int = 0
    check_bound: bool = True

    def __post_init__(self):
        if (self.max_events is None) == (self.horizon is None):
            raise ValueError("exactly one of max_events and horizon must be set")


def _pool_np(Y: np.ndarray, beta: float) -> np.ndarray:
    d, M = Y.shape
    if M == 0:
        return np.zeros(d)
    if M == 1:
        return Y[:, 0].copy()
    if beta == 1.0:
        return Y.sum(axis=1)
    S = np.sum(np.sign(Y) * np.abs(Y) ** beta, axis=1)
    return np.sign(S) * np.abs(S) ** (1.0 / beta)


class IntensityBound:
    """Upper bounds on every intensity, valid for all t >= t0 until the state changes.

    Each cell coordinate moves monotonically from its value at t0 toward its
    asymptote, so it stays inside the interval spanned by the two.  Interval
    arithmetic then propagates through the affine maps, the pooling (which is
    monotone in each input for beta >= 1), tanh and softplus.
    """

    def __init__(self, model: NeuralModel, state: DatabaseState, t0: float):
        self.model = model
        self.state = state
        self.t0 = t0
        self.pre: dict[Atom, tuple[np.ndarray, np.ndarray]] = {}

    def preactivation(self, h: Atom) -> tuple[np.ndarray, np.ndarray]:
        got = self.pre.get(h)
        if got is not None:
            return got
        prog = self.model.program
        n = prog.dim_plus(h.functor)
        lo, hi = np.zeros(n), np.zeros(n)
        if n:
            block = self.state.adrift.get(h)
            if block is not None:
                c0 = block.value_at(self.t0).value
                cb = block.c_bar.value if block.c_bar is not None else c0
                lo += np.minimum(c0, cb)
                hi += np.maximum(c0, cb)
            for r, insts in self.state.proofs.get(h, {}).items():
                rl, rh = self._rule(r, insts)
                lo += rl
                hi += rh
        self.pre[h] = (lo, hi)
        return lo, hi

    def embedding(self, h: Atom) -> tuple[np.ndarray, np.ndarray]:
        d = self.model.program.dim(h.functor)
        if not d:
            return np.zeros(0), np.zeros(0)
        lo, hi = self.preactivation(h)
        return np.tanh(lo[:d]), np.tanh(hi[:d])

    def _rule(self, r: int, insts) -> tuple[np.ndarray, np.ndarray]:
        model = self.model
        rp = model.rparams[r]
        if not rp.rows:
            return np.zeros(0), np.zeros(0)
        full = rp.full is not None
        lo_cols, hi_cols = [], []
        for inst in insts:
            W, active = model.rule_matrix(r, inst.binding)
            xl, xh = [1.0], [1.0]
            for a, on, d in zip(inst.body_atoms, active, rp.slot_dims):
                if not d:
                    continue
                if on:
                    el, eh = self.embedding(a)
                    xl.extend(el)
                    xh.extend(eh)
                elif full:
                    xl.extend([0.0] * d)
                    xh.extend([0.0] * d)
            Wv = W.value
            Wp, Wn = np.maximum(Wv, 0.0), np.minimum(Wv, 0.0)
            xl, xh = np.array(xl), np.array(xh)
            lo_cols.append(Wp @ xl + Wn @ xh)
            hi_cols.append(Wp @ xh + Wn @ xl)
        beta = float(model.beta(r, insts[0].binding).value)
        return _pool_np(np.stack(lo_cols, axis=1), beta), _pool_np(np.stack(hi_cols, axis=1), beta)

    def event_bound(self, e: Atom) -> float:
        _, hi = self.preactivation(e)
        x = hi[self.model.program.dim(e.functor)]
        tau = float(self.model.tau(e.functor).value)
        return float(tau * np.logaddexp(0.0, x / tau))

    def total(self, events) -> float:
        return sum(self.event_bound(e) for e in events)


def _first_event(model: NeuralModel, state: DatabaseState, t: float, limit: float, rng) -> tuple[float, Atom] | None:
    """Thinning from ``t``: the next event before ``limit``, or None."""
    check = True
    while True:
        events = model.engine.possible_events(state)
        if not events:
            return None
        lam_star = IntensityBound(model, state, t).total(events)
        if lam_star <= 0.0:
            return None
        t = t + rng.exponential(1.0 / lam_star)
        if t >= limit:
            return None
        lams = np.array([model.intensity(state, e, t).item() for e in events])
        total = lams.sum()
        if check and total > lam_star * (1.0 + 1e-9) + 1e-12:
            raise BoundViolation(f"intensity {total} exceeds thinning bound {lam_star} at time {t}")
        if rng.uniform() * lam_star <= total:
            k = rng.choice(len(events), p=lams / total)
            return t, events[k]


def sample_continuous(
    model: NeuralModel,
    config: SamplerConfig,
    exogenous: list[Token] | None = None,
    rng: np.random.Generator | None = None,
) -> EventSequence:
    """Draw one sequence by thinning, interleaving an optional exogenous track."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    exo = sorted((x._replace(exogenous=True) for x in exogenous or []), key=lambda tok: tok.time)
    with no_grad():
        model.reset()
        state = start_state(model)
        tokens: list[Token] = []
        if model.program.mentions_init:
            init_toks = [Token(0.0, INIT, True)] + [x for x in exo if x.time == 0.0]
            exo = [x for x in exo if x.time != 0.0]
            tokens.extend(init_toks)
            model.step(state, 0.0, [x.event for x in init_toks])
        t = 0.0
        horizon = config.horizon if config.horizon is not None else math.inf
        count = 0
        while config.max_events is None or count < config.max_events:
            next_exo = exo[0].time if exo else math.inf
            limit = min(horizon, next_exo)
            got = _first_event(model, state, t, limit, rng)
            if got is None:
                if limit == math.inf:
                    break
                if exo and next_exo <= horizon:
                    t = next_exo
                    batch = [x for x in exo if x.time == t]
                    exo = exo[len(batch):]
                    tokens.extend(batch)
                    model.step(state, t, [x.event for x in batch])
                    continue
                break
            t, e = got
            tokens.append(Token(t, e, False))
            model.step(state, t, [e])
            count += 1
        if config.max_events is not None:
            T = tokens[-1].time if tokens else 0.0
        else:
            T = config.horizon
    return EventSequence(tokens, T, CONTINUOUS)


def sample_discrete(
    model: NeuralModel,
    steps: int,
    rng: np.random.Generator,
    exogenous: list[Token] | None = None,
) -> EventSequence:
    """One categorical draw per step 1..steps from the softmax over E(t)."""
    exo = {}
    for x in exogenous or []:
        exo.setdefault(int(x.time), []).append(x._replace(exogenous=True))
    with no_grad():
        model.reset()
        state = start_state(model)
        tokens: list[Token] = []
        if model.program.mentions_init:
            tokens.append(Token(0, INIT, True))
            tokens.extend(exo.get(0, []))
            model.step(state, 0, [INIT] + [x.event for x in exo.get(0, [])])
        for k in range(1, steps + 1):
            probs = model.probabilities(state, k)
            if not probs:
                raise NDTTError(f"no possible event at step {k}; add a `none` event to the program")
            events = list(probs)
            p = np.array([probs[e] for e in events])
            e = events[rng.choice(len(events), p=p / p.sum())]
            batch = [Token(k, e, False)] + exo.get(k, [])
            tokens.extend(batch)
            model.step(state, k, [x.event for x in batch])
    return EventSequence(tokens, steps, DISCRETE)


def sample(model: NeuralModel, config: SamplerConfig, exogenous=None) -> EventSequence:
    rng = np.random.default_rng(config.seed)
    if model.mode == DISCRETE:
        if config.max_events is None:
            raise ValueError("discrete sampling needs a number of steps")
        return sample_discrete(model, config.max_events, rng, exogenous)
    return sample_continuous(model, config, exogenous, rng)


def compensators(model: NeuralModel, seq: EventSequence) -> np.ndarray:
    """Integrated total intensity between consecutive modeled events.

    Under a correctly specified model these are i.i.d. Exp(1) (the
    time-rescaling theorem).  Integration uses adaptive quadrature.
    """
    from scipy.integrate import quad

    from .likelihood import with_init

    out = []
    acc = 0.0
    with no_grad():
        model.reset()
        state = start_state(model)
        prev = 0.0
        for t, toks in with_init(model.program, seq):
            if t > prev:
                def lam(u, state=state):
                    return sum(model.intensity(state, e, u).item() for e in model.engine.possible_events(state))

                val, _ = quad(lam, prev, t, limit=200, epsabs=1e-8, epsrel=1e-8)
                acc += val
            for tok in toks:
                if not tok.exogenous:
                    out.append(acc)
                    acc = 0.0
            model.step(state, t, [tok.event for tok in toks])
            prev = t
    return np.array(out)
