import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from cobotsafe import mc
from cobotsafe.pgcl import from_arrays


def build(m, labels):
    choices = [[(f"a{j}", {int(s): float(p) for s, p in enumerate(row) if p > 0}, {"r": rw})
                for j, (row, rw) in enumerate(acts)] for acts in m]
    return from_arrays("mdp", choices, {k: np.flatnonzero(v) for k, v in labels.items()})


def fixture(seed):
    rng = np.random.default_rng(seed)
    m = oracles.random_mdp(rng, max_states=8, max_policies=80)
    n = len(m)
    labels = {k: rng.random(n) < 0.4 for k in ("t", "a", "b")}
    return m, labels, build(m, labels)


seeds = st.integers(0, 10_000)


@given(seeds)
def test_min_below_max(seed):
    _, _, x = fixture(seed)
    lo = mc.values(x, mc.parse_pctl('Pmin=? [ F "t" ]'))
    hi = mc.values(x, mc.parse_pctl('Pmax=? [ F "t" ]'))
    assert np.all(lo <= hi + 1e-9)
    assert np.all((lo >= -1e-12) & (hi <= 1 + 1e-12))


@given(seeds)
def test_weak_until_matches_policy_enumeration(seed):
    m, lab, x = fixture(seed)
    got = mc.values(x, mc.parse_pctl('Pmax=? [ "a" W "b" ]'))
    want = oracles.optimum(m, lambda p, r: oracles.weak_until_prob(p, lab["a"], lab["b"]), "max")
    assert np.allclose(got, want, atol=1e-6)


@given(seeds)
def test_bounded_until_approaches_unbounded(seed):
    _, _, x = fixture(seed)
    ones = np.ones(x.n_states, dtype=bool)
    t = x.sat('"t"')
    b = mc.prob_until(x, ones, t, bound=2000, mode="max")
    u = mc.prob_until(x, ones, t, mode="max")
    # unbounded values come from value iteration stopped at the engine tolerance
    assert np.all(b <= u + 10 * mc.EPSILON)
    assert np.allclose(b, u, atol=1e-5)


@given(seeds)
def test_qualitative_quantifiers_agree_with_graph(seed):
    m, lab, x = fixture(seed)
    # E F t holds exactly where some policy gives positive probability
    ef = mc.sat_states(x, mc.parse_pctl('E F "t"'))
    assert np.array_equal(ef, mc.values(x, mc.parse_pctl('Pmax=? [ F "t" ]')) > 0)
    # A G !t is the complement of E F t
    ag = mc.sat_states(x, mc.parse_pctl('A G !"t"'))
    assert np.array_equal(ag, ~ef)


def test_dtmc_reward_and_steady_state():
    # two-state chain with a self loop: stationary (2/3, 1/3)
    x = from_arrays("dtmc", [[("s", {0: 0.5, 1: 0.5}, {"r": 1.0})], [("s", {0: 1.0}, {"r": 0.0})]],
                    {"one": [1]})
    assert mc.check(x, 'S=? [ "one" ]') == pytest.approx(1 / 3)
    assert mc.check(x, 'R{"r"}=? [ C<=3 ]') == pytest.approx(1 + 0.5 * 0 + 0.5 + (0.75 * 1))
    assert mc.check(x, 'R{"r"}=? [ F "one" ]') == pytest.approx(2.0)
    with pytest.raises(mc.CheckError):
        mc.check(x, 'Pmax=? [ F "missing" ]')


def test_total_reward_infinite_on_rewarding_loop():
    x = from_arrays("dtmc", [[("s", {0: 1.0}, {"r": 1.0})]])
    assert np.isinf(mc.check(x, 'R{"r"}=? [ C ]'))


def test_filters_and_bounds():
    x = from_arrays("dtmc", [[("s", {1: 0.3, 2: 0.7}, {})], [("s", {1: 1.0}, {})], [("s", {2: 1.0}, {})]],
                    {"goal": [1], "start": [0, 2]})
    assert mc.check(x, 'P>=0.3 [ F "goal" ]') is True
    assert mc.check(x, 'P>0.3 [ F "goal" ]') is False
    assert mc.check(x, 'filter(max, P=? [ F "goal" ], "start")') == pytest.approx(0.3)
    assert mc.check(x, 'filter(min, P=? [ F "goal" ], "start")') == pytest.approx(0.0)


def test_accident_freedom_bounds():
    x = from_arrays("dtmc", [[("s", {1: 0.2, 2: 0.8}, {})], [("s", {1: 1.0}, {})], [("s", {2: 1.0}, {})]],
                    {"unsafe": [0], "mishap": [1], "safe": [2]})
    lo, mu, hi = mc.accident_freedom(x, '"unsafe"', '"mishap"', '"safe"')
    assert lo == mu == hi == pytest.approx(0.8)


@pytest.mark.parametrize("bad", ['P=? [ "a" ]', 'Pmax=? F "a"', 'R{"r"}=? [ G "a" ]', 'filter(sum, P=? [F "a"], "a")'])
def test_parse_errors(bad):
    with pytest.raises(ValueError):
        mc.parse_pctl(bad)


def test_parse_properties_skips_comments():
    props = mc.parse_properties('// c\n\nE F "a"  // trailing\n# other\nP=? [ F "a" ]\n')
    assert [t for t, _ in props] == ['E F "a"', 'P=? [ F "a" ]']
