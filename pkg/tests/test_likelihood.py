import math

import numpy as np
import pytest
from scipy.special import expit

from helpers import fixed_store
from ndtt import autodiff as ad
from ndtt.autodiff import constant
from ndtt.data import EventSequence, Token
from ndtt.errors import DataError
from ndtt.fixtures import load_fixture
from ndtt.generator import SamplerConfig, sample
from ndtt.likelihood import TrainConfig, downsampled_total, loglik, loglik_continuous, loglik_discrete, train
from ndtt.params import ParameterStore, init_parameter
from ndtt.program import CONTINUOUS, DISCRETE, compile_program
from ndtt.semantics import NeuralModel
from ndtt.syntax import parse_atom

A = parse_atom


def softplus(x):
    return math.log1p(math.exp(x))


def homogeneous(rate=0.3):
    prog = load_fixture("homogeneous")
    return NeuralModel(prog, fixed_store(prog, values={"rate": [[rate]]}))


def seq_of(times, horizon, event="e", mode=CONTINUOUS, exo=()):
    toks = [Token(t, A(event)) for t in times] + [Token(t, A(x), True) for t, x in exo]
    return EventSequence(sorted(toks, key=lambda k: k.time), horizon, mode)


# -- continuous time ---------------------------------------------------------------


def test_constant_intensity_closed_form():
    model = homogeneous(0.3)
    lam = softplus(0.3)
    rep = loglik_continuous(model, seq_of([0.4], 2.5), downsample=0)
    assert rep.total == pytest.approx(math.log(lam) - lam * 2.5, rel=1e-13)
    assert rep.total == rep.event_term - rep.integral_term


def test_constant_intensity_mc_estimate_over_seeds():
    model = homogeneous(-0.4)
    lam = softplus(-0.4)
    want = 3 * math.log(lam) - lam * 4.0
    seq = seq_of([0.5, 1.2, 3.9], 4.0)
    totals = [loglik_continuous(model, seq, 2.0, 10, np.random.default_rng(s)).total for s in range(50)]
    se = np.std(totals) / math.sqrt(50)
    assert abs(np.mean(totals) - want) <= 3 * se + 1e-12


def test_empty_sequence_is_minus_integral():
    model = homogeneous(0.1)
    rep = loglik_continuous(model, seq_of([], 3.0), downsample=0)
    assert rep.event_term == 0 and rep.total == pytest.approx(-softplus(0.1) * 3.0, rel=1e-13)
    assert rep.total <= 0


def test_zero_horizon_empty_sequence():
    rep = loglik_continuous(homogeneous(), seq_of([], 0.0), downsample=0)
    assert rep.total == 0 and rep.num_samples == 0


def test_downsampled_sum_is_unbiased():
    lam_values = np.random.default_rng(0).gamma(2.0, 1.0, size=20)
    lams = [constant(v) for v in lam_values]
    rng = np.random.default_rng(1)
    draws = np.array([downsampled_total(lams, 10, rng).item() for _ in range(10_000)])
    exact = lam_values.sum()
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - exact) < 3 * se
    assert abs(draws.mean() - exact) / exact < 0.01


def test_mc_integral_error_shrinks_like_inverse_root():
    prog = load_fixture("two_phase")
    store = fixed_store(prog, values={"slow": [[-1.0]], "fast": [[1.5]]})
    model = NeuralModel(prog, store)
    seq = seq_of([1.3, 2.0, 2.2, 4.1], 5.0)
    exact = softplus(-1.0) * 1.3 + softplus(1.5) * (5.0 - 1.3)

    def rmse(mult):
        errs = [
            loglik_continuous(model, seq, mult, 0, np.random.default_rng(s)).integral_term - exact
            for s in range(150)
        ]
        return math.sqrt(np.mean(np.square(errs)))

    small, big = rmse(2.0), rmse(32.0)  # 8 vs 128 samples
    ratio = small / big
    assert 4 / 3 < ratio < 12


def test_gradient_matches_finite_differences_with_frozen_times():
    prog = load_fixture("two_phase")
    store = ParameterStore(2)
    model = NeuralModel(prog, store)
    seq = seq_of([0.7, 1.1, 2.9], 3.5)
    times = np.random.default_rng(0).uniform(0, 3.5, size=7)

    def total():
        return loglik_continuous(model, seq, downsample=0, sample_times=times)

    rep = total()
    store.zero_grad()
    ad.backward(rep.loss)
    for name in store.names():
        t = store.tensors[name]
        g = np.zeros_like(t.value) if t.grad is None else t.grad.copy()
        h = 1e-6
        old = t.value.copy()
        t.value = old + h
        up = total().total
        t.value = old - h
        down = total().total
        t.value = old
        fd = (up - down) / (2 * h)
        assert abs(g.sum() - fd) <= 1e-4 * max(abs(fd), 1e-8), name


def test_exogenous_tokens_are_conditioned_on():
    model = homogeneous(0.2)
    plain = loglik_continuous(model, seq_of([1.0], 2.0), downsample=0)
    with_exo = loglik_continuous(model, seq_of([1.0], 2.0, exo=[(0.5, "poke(x)")]), downsample=0)
    assert with_exo.total == plain.total and with_exo.num_events == 1


def test_exogenous_token_changes_state():
    prog = load_fixture("two_phase")
    store = fixed_store(prog, values={"slow": [[-1.0]], "fast": [[1.5]]})
    model = NeuralModel(prog, store)
    # `init` is inserted automatically; giving it explicitly changes nothing
    a = loglik_continuous(model, seq_of([1.0], 2.0), downsample=0)
    b = loglik_continuous(model, seq_of([1.0], 2.0, exo=[(0.0, "init")]), downsample=0)
    assert a.total == b.total
    assert a.event_term == pytest.approx(math.log(softplus(-1.0)), rel=1e-13)


def test_impossible_modeled_event_is_reported():
    prog = load_fixture("human_activity")
    model = NeuralModel(prog, ParameterStore(0))
    seq = EventSequence([Token(1.0, A("harm(eve,adam)"))], 2.0)
    with pytest.raises(DataError) as info:
        loglik_continuous(model, seq)
    msg = str(info.value)
    assert "harm(eve,adam)" in msg and "1.0" in msg and "help(eve,adam)" in msg


# -- discrete time -----------------------------------------------------------------


def test_equal_scores_give_log_half_per_step():
    prog = compile_program(":- event(e, 0).\ne(a).\ne(b).")
    model = NeuralModel(prog, fixed_store(prog, DISCRETE), DISCRETE)
    seq = EventSequence([Token(1, A("e(a)")), Token(2, A("e(b)")), Token(3, A("e(a)"))], 3, DISCRETE)
    assert loglik_discrete(model, seq).total == pytest.approx(3 * math.log(0.5), rel=1e-14)


def test_forced_choice_has_zero_loglik():
    prog = compile_program(":- event(e, 0).\ne(a).")
    model = NeuralModel(prog, ParameterStore(5), DISCRETE)
    seq = EventSequence([Token(t, A("e(a)")) for t in (1, 2, 3, 4)], 4, DISCRETE)
    assert loglik(model, seq).total == 0.0


CHAIN = """
:- embed(s, 1).
:- event(e, 0).
s.
e(a) :- s.
e(b).
s <- e(a).
"""


def test_three_step_softmax_chain_by_hand():
    prog = compile_program(CHAIN)
    bs, b2, w2, b3 = 0.3, -0.2, 1.7, 0.4
    B4 = np.array([0.9, -0.5, 1.2])
    vals = {"params(1,bias)": [[bs]], "params(2,bias)": [[b2]], "params(2,1)": [[w2]], "params(3,bias)": [[b3]]}
    vals.update({"params(4,bias)": B4.reshape(3, 1), "params(4,0)": np.zeros((3, 0))})
    model = NeuralModel(prog, fixed_store(prog, DISCRETE, vals), DISCRETE)
    f, i, z = expit(B4)
    c, want = None, 0.0
    for ev in ("e(a)", "e(b)", "e(a)"):
        pre = bs + (c if c is not None else 0.0)
        sa, sb = b2 + w2 * math.tanh(pre), b3
        chosen = sa if ev == "e(a)" else sb
        want += chosen - math.log(math.exp(sa) + math.exp(sb))
        if ev == "e(a)":
            c = 0.0 if c is None else c
            c = c + (f - 1) * c + i * (2 * z - 1)
    seq = EventSequence([Token(k + 1, A(e)) for k, e in enumerate(("e(a)", "e(b)", "e(a)"))], 3, DISCRETE)
    assert loglik_discrete(model, seq).total == pytest.approx(want, rel=1e-13)


# -- training ----------------------------------------------------------------------


def _homogeneous_data(n, rate, horizon, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = rng.poisson(rate * horizon)
        out.append(seq_of(np.sort(rng.uniform(0, horizon, size=max(k, 1))).tolist(), horizon))
    return out


def test_zero_epochs_returns_initialization():
    prog = load_fixture("human_activity")
    model = NeuralModel(prog, ParameterStore(0))
    seqs = [sample(model, SamplerConfig(max_events=6, seed=s)) for s in range(2)]
    res = train(prog, seqs, seqs, TrainConfig(max_epochs=0, seed=7))
    assert res.best_epoch == 0 and len(res.metrics) == 1
    for name, v in res.store.values().items():
        want = init_parameter(name, v.shape, 7, res.store.roles[name])
        assert np.array_equal(v, want), name


def test_homogeneous_rate_moves_toward_mle():
    prog = load_fixture("homogeneous")
    data = _homogeneous_data(8, 2.0, 5.0, 0)
    mle = sum(s.num_events for s in data) / sum(s.horizon for s in data)
    cfg = TrainConfig(lr=0.05, max_epochs=6, patience=6, downsample=0, seed=1)
    res = train(prog, data, data, cfg)
    devs = [row["dev_ll_per_event"] for row in res.metrics]
    assert all(b >= a for a, b in zip(devs[:4], devs[1:4]))
    start = softplus(init_parameter("rate", (1, 1), 1).item())  # tau is initialized to 1
    model = NeuralModel(prog, res.store)
    end = model.intensity(model.engine.init_state(), A("e"), 0.0).item()
    assert abs(end - mle) < abs(start - mle)


def test_training_is_deterministic():
    prog = load_fixture("two_phase")
    data = _homogeneous_data(4, 1.0, 3.0, 2)
    cfg = TrainConfig(lr=0.01, max_epochs=2, seed=3)
    a = train(prog, data, data[:2], cfg)
    b = train(prog, data, data[:2], cfg)
    assert a.metrics_csv() == b.metrics_csv()
    assert a.metrics_csv().splitlines()[0] == "epoch,train_ll_per_event,dev_ll_per_event,wallclock_s,learning_rate"
