"""Numeric semantics over the symbolic state: embeddings, intensities, cells."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant
from .engine import ADD, DatabaseState, Engine, UpdateMatch
from .params import ZERO_NAME, ParameterStore
from .program import CONTINUOUS, DISCRETE, RuleParams, ValidatedProgram
from .syntax import Atom, Var


@dataclass
class CellBlock:
    """Memory of one adrift atom.

    Continuous mode uses all four fields; discrete mode stores its cell in
    ``c_start`` and leaves the others unset.
    """

    start_time: float
    c_start: Tensor
    c_bar: Tensor | None = None
    delta: Tensor | None = None

    def value_at(self, t: float) -> Tensor:
        if self.c_bar is None:
            return self.c_start
        if t < self.start_time:
            raise ValueError(f"cell block started at {self.start_time} evaluated at {t}")
        if t == self.start_time:
            return self.c_start
        return ad.drift(self.c_start, self.c_bar, self.delta, t - self.start_time)


def cell_value_at(block: CellBlock, t: float) -> Tensor:
    return block.value_at(t)


def pool(vectors, beta, dim: int | None = None) -> Tensor:
    """Signed-power pooling of a list of equal-length vectors.

    Pooling nothing gives the zero vector of length ``dim``.
    """
    vectors = [ad.as_tensor(v) for v in vectors]
    beta = ad.as_tensor(beta)
    if not vectors:
        if dim is None:
            raise ValueError("pool() of an empty list needs dim")
        return constant(np.zeros(dim))
    d = {v.shape for v in vectors}
    if len(d) != 1:
        raise ValueError(f"pool() dimension mismatch: {sorted(d)}")
    Y = ad.concat([ad.reshape(v, (-1, 1)) for v in vectors], axis=1)
    return ad.pool_columns(Y, beta)


def _ground(name: Atom | None, binding: tuple) -> str | None:
    if name is None:
        return None
    if not name.args:
        return name.functor
    b = {Var(v): c for v, c in binding}
    return str(name.substitute(b))


class NeuralModel:
    """Embeddings, intensities and cell updates for one program and store.

    Parameter tensors derived from the store (concatenated rule matrices,
    pooling exponents, softplus scales) are cached; call :meth:`reset` at
    the start of every sequence so that each sequence builds a fresh graph.
    """

    def __init__(
        self,
        program: ValidatedProgram,
        store: ParameterStore,
        mode: str = CONTINUOUS,
        engine: Engine | None = None,
        freeze_drift: bool = False,
    ):
        if mode not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown mode {mode!r}")
        self.program = program
        self.store = store
        self.mode = mode
        self.engine = engine or Engine(program)
        self.freeze_drift = freeze_drift
        self.rparams: dict[int, RuleParams] = program.params(mode)
        self.gates = 7 if mode == CONTINUOUS else 3
        self.reset()

    # -- caches -----------------------------------------------------------
    def reset(self):
        self._W: dict = {}
        self._beta: dict = {}
        self._tau: dict = {}
        self._cache_key = None
        self._cache: dict = {}
        self._cache_state = None

    def _frame(self, state: DatabaseState, t: float) -> dict:
        key = (id(state), state.version, t)
        if key != self._cache_key:
            self._cache_key = key
            self._cache = {}
            self._cache_state = state  # keep alive so id() stays unique
        return self._cache

    def rule_matrix(self, r: int, binding: tuple) -> tuple[Tensor, tuple[bool, ...]]:
        """W_r for one binding, plus which positive slots feed it.

        With per-slot names the matrix is [bias | W_1 | ...] over the slots
        not named ``0``; with a ``::`` name it spans every slot and zero
        slots are fed zero vectors instead.
        """
        rp = self.rparams[r]
        if rp.full is not None:
            name = _ground(rp.full, binding)
            key = (r, name)
            W = self._W.get(key)
            if W is None:
                W = self.store.get(name, (rp.rows, rp.cols))
                self._W[key] = W
            return W, tuple(True for _ in rp.slots)
        names = tuple(_ground(s, binding) for s in rp.slots)
        bias = _ground(rp.bias, binding)
        key = (r, bias, names)
        active = tuple(n != ZERO_NAME for n in names)
        W = self._W.get(key)
        if W is None:
            parts = [self.store.get(bias, (rp.rows, 1))]
            for n, d, a in zip(names, rp.slot_dims, active):
                if a and d:
                    parts.append(self.store.get(n, (rp.rows, d)))
            W = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
            self._W[key] = W
        return W, active

    def beta(self, r: int, binding: tuple) -> Tensor:
        name = _ground(self.rparams[r].beta, binding)
        b = self._beta.get(name)
        if b is None:
            b = self.store.beta(name)
            self._beta[name] = b
        return b

    def tau(self, functor: str) -> Tensor:
        t = self._tau.get(functor)
        if t is None:
            t = self.store.tau(str(self.program.tau_name(functor)))
            self._tau[functor] = t
        return t

    # -- embeddings -------------------------------------------------------
    def _inputs(self, state, t, r, body_atoms, active, full) -> list[Tensor]:
        out = []
        dims = self.rparams[r].slot_dims
        for a, on, d in zip(body_atoms, active, dims):
            if not d:
                continue
            if on:
                out.append(self.embedding(state, a, t))
            elif full:
                out.append(constant(np.zeros(d)))
        return out

    def _affine(self, state, t, r, items) -> Tensor:
        """Columns W_r[1; g...] for a list of (body_atoms, binding)."""
        full = self.rparams[r].full is not None
        groups: dict = {}
        order = []
        for body, binding in items:
            W, active = self.rule_matrix(r, binding)
            k = id(W)
            if k not in groups:
                groups[k] = (W, active, [])
                order.append(k)
            groups[k][2].append(self._inputs(state, t, r, body, active, full))
        cols = [ad.affine_columns(groups[k][0], groups[k][2]) for k in order]
        return cols[0] if len(cols) == 1 else ad.concat(cols, axis=1)

    def rule_contribution(self, state: DatabaseState, h: Atom, r: int, t: float) -> Tensor:
        rows = self.rparams[r].rows
        insts = state.proofs.get(h, {}).get(r, ())
        if not insts or not rows:
            return constant(np.zeros(self.program.dim_plus(h.functor)))
        Y = self._affine(state, t, r, [(i.body_atoms, i.binding) for i in insts])
        return ad.pool_columns(Y, self.beta(r, insts[0].binding))

    def preactivation(self, state: DatabaseState, h: Atom, t: float) -> Tensor | None:
        """cell(t) + sum_r contributions, length D+ ; None for non-facts."""
        if h not in state.facts:
            return None
        frame = self._frame(state, t)
        key = ("pre", h)
        if key in frame:
            return frame[key]
        n = self.program.dim_plus(h.functor)
        terms = []
        if n:
            block = state.adrift.get(h)
            if block is not None:
                terms.append(block.value_at(t))
            for r in state.proofs.get(h, {}):
                terms.append(self.rule_contribution(state, h, r, t))
        out = ad.sum_list(terms) if terms else constant(np.zeros(n))
        frame[key] = out
        return out

    def embedding(self, state: DatabaseState, h: Atom, t: float) -> Tensor | None:
        """First D coordinates of tanh(preactivation); None for non-facts."""
        frame = self._frame(state, t)
        key = ("emb", h)
        if key in frame:
            return frame[key]
        d = self.program.dim(h.functor)
        if h not in state.facts:
            return None
        if not d:
            out = constant(np.zeros(0))
        else:
            pre = self.preactivation(state, h, t)
            if self.program.is_event(h.functor):
                pre = ad.take(pre, slice(0, d))
            out = ad.tanh(pre)
        frame[key] = out
        return out

    def trigger_embedding(self, state: DatabaseState, e: Atom, t: float) -> Tensor:
        """Embedding of an event that occurred; zeros if it is not a fact."""
        emb = self.embedding(state, e, t)
        if emb is None:
            return constant(np.zeros(self.program.dim(e.functor)))
        return emb

    def score(self, state: DatabaseState, e: Atom, t: float) -> Tensor:
        """Raw intensity pre-activation (the extra coordinate)."""
        pre = self.preactivation(state, e, t)
        if pre is None:
            raise KeyError(f"{e} is not a possible event at time {t}")
        d = self.program.dim(e.functor)
        return ad.take(pre, d)

    def intensity(self, state: DatabaseState, e: Atom, t: float) -> Tensor:
        """lambda_e(t): softplus_tau (continuous) or exp (discrete weight)."""
        frame = self._frame(state, t)
        key = ("lam", e)
        if key in frame:
            return frame[key]
        x = self.score(state, e, t)
        if self.mode == CONTINUOUS:
            out = ad.softplus_scaled(x, self.tau(e.functor))
        else:
            out = ad.exp(x)
        frame[key] = out
        return out

    def intensities(self, state: DatabaseState, t: float, subset=None) -> dict[Atom, Tensor]:
        events = self.engine.possible_events(state)
        if subset is not None:
            possible = set(events)
            for e in subset:
                if e not in possible:
                    raise KeyError(f"{e} is not a possible event at time {t}")
            events = [e for e in events if e in set(subset)]
        return {e: self.intensity(state, e, t) for e in events}

    def intensity_vector(self, state: DatabaseState, t: float, events) -> Tensor:
        return ad.concat([ad.reshape(self.intensity(state, e, t), (1,)) for e in events])

    def probabilities(self, state: DatabaseState, t: float) -> dict[Atom, float]:
        """Discrete mode: softmax over possible events."""
        events = self.engine.possible_events(state)
        if not events:
            return {}
        x = np.array([self.score(state, e, t).item() for e in events])
        p = np.exp(x - x.max())
        p /= p.sum()
        return dict(zip(events, p))

    # -- updates ----------------------------------------------------------
    def _update_preacts(self, state, matches, s):
        """Per head: [(r, Y, beta)] with Y the (gates*D+, M) pre-activations."""
        grouped: dict[Atom, dict[int, list[UpdateMatch]]] = {}
        for mt in matches:
            if mt.polarity == ADD:
                grouped.setdefault(mt.head, {}).setdefault(mt.rule_index, []).append(mt)
        out = {}
        for h in sorted(grouped, key=str):
            rows = self.gates * self.program.dim_plus(h.functor)
            items = []
            for r in sorted(grouped[h]):
                ms = grouped[h][r]
                if rows:
                    cols = []
                    for mt in ms:
                        cols.append((mt.body_atoms, mt.binding))
                    Y = self._affine_updates(state, s, r, cols)
                    if Y.shape[0] != rows:
                        raise ValueError(f"rule {r}: update matrix has {Y.shape[0]} rows, expected {rows}")
                    items.append((r, Y, self.beta(r, ms[0].binding)))
            out[h] = items
        return out

    def _affine_updates(self, state, s, r, items):
        # the trigger is embedded specially: it need not be a fact
        full = self.rparams[r].full is not None
        dims = self.rparams[r].slot_dims
        groups: dict = {}
        order = []
        for body, binding in items:
            W, active = self.rule_matrix(r, binding)
            xs = []
            for j, (a, on, d) in enumerate(zip(body, active, dims)):
                if not d:
                    continue
                if on:
                    xs.append(self.trigger_embedding(state, a, s) if j == 0 else self.embedding(state, a, s))
                elif full:
                    xs.append(constant(np.zeros(d)))
            k = id(W)
            if k not in groups:
                groups[k] = (W, [])
                order.append(k)
            groups[k][1].append(xs)
        cols = [ad.affine_columns(groups[k][0], groups[k][1]) for k in order]
        return cols[0] if len(cols) == 1 else ad.concat(cols, axis=1)

    def step(self, state: DatabaseState, s: float, events) -> list[UpdateMatch]:
        """Apply the events occurring at time (or step) ``s`` to ``state``.

        All pre-activations are evaluated against the pre-update state; then
        removed heads are docked, cells of added heads are updated, and the
        fixpoint is recomputed.
        """
        events = list(events)
        matches = self.engine.match_updates(state, events)
        pre = self._update_preacts(state, matches, s)
        old = {}
        for h in pre:
            block = state.adrift.get(h)
            if block is not None:
                old[h] = (block, block.value_at(s))
        self.engine.apply_updates(state, matches)
        for h, items in pre.items():
            n = self.program.dim_plus(h.functor)
            prev = state.adrift.get(h)
            if prev is not None and h in old:
                block, c_s = old[h]
            else:
                block, c_s = None, constant(np.zeros(n))
            if self.mode == DISCRETE:
                state.adrift[h] = self._new_discrete(c_s, items, s, n)
            else:
                state.adrift[h] = self._new_continuous(block, c_s, items, s, n)
        state.time = s
        state.version += 1
        return matches

    def _new_discrete(self, c, items, s, n) -> CellBlock:
        incs = []
        for r, Y, beta in items:
            g = ad.sigmoid(Y)
            f, i, z = ad.take(g, slice(0, n)), ad.take(g, slice(n, 2 * n)), ad.take(g, slice(2 * n, 3 * n))
            u = (f - 1.0) * ad.reshape(c, (n, 1)) + i * (ad.scale(z, 2.0) - 1.0)
            incs.append(ad.pool_columns(u, beta))
        return CellBlock(s, ad.sum_list([c] + incs) if n else c)

    def _new_continuous(self, block, c_s, items, s, n) -> CellBlock:
        if block is None:
            c_bar_old = constant(np.zeros(n))
            delta_old = None
        else:
            c_bar_old, delta_old = block.c_bar, block.delta
        if not n or not items:
            return CellBlock(s, c_s, c_bar_old, delta_old if delta_old is not None else constant(np.ones(n)))
        col = lambda v: ad.reshape(v, (n, 1))  # noqa: E731
        starts, bars, parts = [], [], []
        for r, Y, beta in items:
            g = ad.sigmoid(ad.take(Y, slice(0, 6 * n)))
            sl = [ad.take(g, slice(k * n, (k + 1) * n)) for k in range(6)]
            f_, i_, z_, fb, ib, zb = sl
            u_start = (f_ - 1.0) * col(c_s) + i_ * (ad.scale(z_, 2.0) - 1.0)
            starts.append(ad.pool_columns(u_start, beta))
            if self.freeze_drift:
                continue
            u_bar = (fb - 1.0) * col(c_bar_old) + ib * (ad.scale(zb, 2.0) - 1.0)
            bars.append(ad.pool_columns(u_bar, beta))
            d_prop = ad.softplus(ad.take(Y, slice(6 * n, 7 * n)))
            parts.append((u_start, u_bar, d_prop, beta))
        c_start = ad.sum_list([c_s] + starts)
        if self.freeze_drift:
            return CellBlock(s, c_start, c_bar_old, constant(np.zeros(n)))
        c_bar = ad.sum_list([c_bar_old] + bars)
        gap = ad.absolute(c_bar - c_start)
        w_terms, wd_terms, inv_terms = [], [], []
        for u_start, u_bar, d_prop, beta in parts:
            w = _share(u_start, beta) + _share(u_bar, beta) + col(gap)
            w_terms.append(ad.sum_cols(w))
            wd_terms.append(ad.sum_cols(ad.div(w, d_prop)))
            inv_terms.append(ad.sum_cols(ad.reciprocal(d_prop)))
        sw = ad.sum_list(w_terms)
        swd = ad.sum_list(wd_terms)
        positive = sw.value > 0
        safe = ad.where(positive, swd, constant(np.ones(n)))
        weighted = ad.div(sw, safe)
        if delta_old is None:
            count = float(sum(p[2].shape[1] for p in parts))
            fallback = ad.div(constant(np.full(n, count)), ad.sum_list(inv_terms))
        else:
            fallback = delta_old
        delta = ad.where(positive, weighted, fallback)
        return CellBlock(s, c_start, c_bar, delta)

    # -- tracing ----------------------------------------------------------
    def trace_record(self, state: DatabaseState, t: float) -> dict:
        """Every fact's embedding and every possible event's intensity at t."""
        emb = {}
        for a in sorted(state.facts, key=str):
            if self.program.dim(a.functor):
                emb[str(a)] = [float(x) for x in self.embedding(state, a, t).value]
        lam = {str(e): float(v.value) for e, v in self.intensities(state, t).items()}
        return {"time": t, "embeddings": emb, "intensities": lam}

    def trace_line(self, state: DatabaseState, t: float) -> str:
        return json.dumps(self.trace_record(state, t), sort_keys=True)


def _share(u: Tensor, beta: Tensor) -> Tensor:
    """Pooled |u| split across columns in proportion to |u_m|^beta.

    Columns whose magnitudes are all zero get weight 0 (the 0/0 case).
    """
    a = ad.absolute(u)
    pooled = ad.pool_columns(a, beta)
    powed = ad.signed_pow(a, beta)
    denom = ad.sum_cols(powed)
    zero = denom.value == 0
    safe = ad.where(zero, constant(np.ones(denom.shape)), denom)
    n = u.shape[0]
    return ad.reshape(pooled, (n, 1)) * ad.div(powed, ad.reshape(safe, (n, 1)))


def ground_parameters(program: ValidatedProgram, mode: str = CONTINUOUS) -> dict[str, tuple[str, tuple]]:
    """Roles and shapes of the ground parameters a program instantiates.

    Collected from the proofs of the state after ``init`` and from the
    update matches of every event possible there.  This is what a model
    actually trains, as opposed to the name patterns in the source.
    """
    engine = Engine(program)
    rparams = program.params(mode)
    state = engine.init_state()
    out: dict[str, tuple[str, tuple]] = {}

    def collect(r: int, binding: tuple):
        rp = rparams.get(r)
        if rp is None:
            return
        for name, role, shape in rp.signatures():
            out[_ground(name, binding)] = (role, shape)

    if program.mentions_init:
        matches = engine.match_updates(state, [Atom("init")])
        for mt in matches:
            collect(mt.rule_index, mt.binding)
        engine.apply_updates(state, matches)

    for by_rule in state.proofs.values():
        for r, insts in by_rule.items():
            for inst in insts:
                collect(r, inst.binding)
    events = engine.possible_events(state)
    for e in events:
        for mt in engine.match_updates(state, [e]):
            collect(mt.rule_index, mt.binding)
    for f in sorted({e.functor for e in events}):
        out[str(program.tau_name(f))] = ("tau", ())
    return dict(sorted(out.items()))


def count_trainable(program: ValidatedProgram, mode: str = CONTINUOUS) -> int:
    return sum(int(np.prod(shape)) for _role, shape in ground_parameters(program, mode).values())
