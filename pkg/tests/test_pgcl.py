import numpy as np
import pytest

from cobotsafe import mc
from cobotsafe.pgcl import (ModelError, Policy, deadlock_states, expand, format_model, induced_dtmc,
                            parse_model)

COIN = """
mdp
const double p;
const int N = 3;
formula done = x = N;
label "done" = done;

module walker
  x : [0..N] init 0;
  c : bool init false;
  [flip] !done -> p : (x'=x+1) + 1-p : (c'=!c);
  [jump] !done & c -> (x'=N);
endmodule

rewards "steps"
  [flip] true : 1;
  [jump] true : 2;
endrewards
"""


def test_parse_and_expand():
    m = parse_model(COIN)
    assert m.kind == "mdp"
    assert m.parameters == ["p"]
    x = expand(m, {"p": 0.5})
    # x in 0..3, c in {false, true}
    assert x.n_states == 8
    assert x.sat('"done"').sum() == 2
    fin, early = deadlock_states(x, '"done"')
    assert len(fin) == 2 and not early


def test_unbound_parameter():
    with pytest.raises(ModelError):
        expand(parse_model(COIN))


def test_format_round_trip():
    m = parse_model(COIN)
    again = parse_model(format_model(m))
    a, b = expand(m, {"p": 0.3}), expand(again, {"p": 0.3})
    assert a.states == b.states
    assert a.choice_labels == b.choice_labels
    assert (a.trans != b.trans).nnz == 0


def test_bad_distribution():
    bad = COIN.replace("1-p : (c'=!c)", "0.2 : (c'=!c)")
    with pytest.raises(ModelError):
        expand(parse_model(bad), {"p": 0.5})


def test_assignment_out_of_range():
    bad = COIN.replace("(x'=N);", "(x'=N+1);")
    with pytest.raises(ModelError):
        expand(parse_model(bad), {"p": 0.5})


def test_rewards_and_reachability():
    x = expand(parse_model(COIN), {"p": 0.5})
    done = x.sat('"done"')
    # always flipping: expected steps to gain 3 heads at p=1/2 is 6
    pi = {s: min(x.choices(s), key=lambda c: x.choice_labels[c]) for s in range(x.n_states) if len(x.choices(s))}
    d = induced_dtmc(x, Policy(pi))
    assert all(lab == "flip" for lab in d.choice_labels)
    v = mc.expected_reward(d, "steps", d.sat('"done"'))
    assert v[d.initial] == pytest.approx(6.0, abs=1e-6)
    # jumping as soon as possible is cheaper: min expected steps
    best = mc.expected_reward(x, "steps", done, mode="min")
    assert best[x.initial] < 6.0


def test_induced_dtmc_rejects_foreign_choice():
    x = expand(parse_model(COIN), {"p": 0.5})
    with pytest.raises(ModelError):
        induced_dtmc(x, {x.initial: x.n_choices + 5})


def test_probabilities_sum_to_one():
    x = expand(parse_model(COIN), {"p": 0.7})
    sums = np.asarray(x.trans.sum(axis=1)).ravel()
    assert np.allclose(sums, 1.0)
