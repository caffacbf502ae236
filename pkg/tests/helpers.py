"""Shared test utilities: symbolic replay against the oracle, small builders."""

from __future__ import annotations

import numpy as np

from naive_datalog import NaiveDatalog, _ground, engine_proofs, groundings
from ndtt.engine import Engine
from ndtt.syntax import Atom

INIT = Atom("init")


def exogenous_candidates(program, oracle: NaiveDatalog) -> list[Atom]:
    """Ground instances of every trigger pattern that is not a modeled event."""
    events = set(program.event_functors)
    out = set()
    for r in oracle.updates:
        trig = r.body[0].atom
        if trig.functor in events:
            continue
        for env in groundings(r, oracle.constants):
            out.add(_ground(trig, env))
    return sorted(out, key=str)


def replay_against_oracle(program, steps: int = 50, seed: int = 0, use_memo: bool = True) -> int:
    """Drive engine and oracle with the same random event stream.

    Each step picks a possible event (or, sometimes, an exogenous trigger)
    and asserts that facts, proof instantiations, adrift atoms and the
    docked/launched sets agree exactly.  Returns the number of steps run.
    """
    engine = Engine(program, use_memo=use_memo)
    oracle = NaiveDatalog(program)
    exo = exogenous_candidates(program, oracle)
    rng = np.random.default_rng(seed)
    state = engine.init_state()
    adrift: set = set()

    def compare(where):
        facts, proofs = oracle.fixpoint(adrift)
        assert set(state.adrift) == adrift, where
        assert state.facts == facts, f"{where}: {sorted(map(str, state.facts ^ facts))}"
        assert engine_proofs(state) == proofs, where

    compare("initial state")
    for k in range(steps):
        possible = engine.possible_events(state)
        if k == 0 and program.mentions_init:
            ev = INIT
        elif possible and (not exo or rng.uniform() < 0.8):
            ev = possible[rng.integers(len(possible))]
        elif exo:
            ev = exo[rng.integers(len(exo))]
        else:
            return k
        pre_facts = state.facts
        docked, launched = engine.apply_updates(state, engine.match_updates(state, [ev]))
        adrift, o_docked, o_launched = oracle.step(adrift, pre_facts, {ev})
        assert docked == o_docked, f"step {k} ({ev})"
        assert launched == o_launched, f"step {k} ({ev})"
        compare(f"step {k} after {ev}")
    return steps


TAU_ONE = float(np.log(np.e - 1.0))  # raw value whose softplus is exactly 1


def fixed_store(program, mode="continuous", values=None, fill=0.0):
    """A store holding every ground parameter of ``program``.

    Unlisted matrices and betas are filled with ``fill`` and every tau is
    set so that softplus_tau is the plain softplus.  Names in ``values``
    that the program only reaches through exogenous triggers are created
    with the given array's shape.
    """
    from ndtt.params import ParameterStore
    from ndtt.semantics import ground_parameters

    store = ParameterStore(0)
    values = values or {}
    for name, (role, shape) in ground_parameters(program, mode).items():
        t = store.get(name, shape, role)
        if name in values:
            t.value = np.array(values[name], dtype=float).reshape(shape)
        elif role == "tau":
            t.value = np.array(TAU_ONE)
        else:
            t.value = np.full(shape, fill, dtype=float)
    for name, v in values.items():
        if name not in store:
            v = np.array(v, dtype=float)
            store.get(name, v.shape, "beta" if "beta" in name else "matrix").value = v
    return store
