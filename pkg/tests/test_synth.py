from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from cobotsafe import synth
from cobotsafe.design import generate, pdtmc_transform
from cobotsafe.pgcl import expand, parse_model
from cobotsafe.risk import parse_risk_model
from cobotsafe.synth import (Objective, SolutionPoint, SynthesisError, SynthesisQuery, dominates,
                             format_query, front_csv, pareto_filter, parse_query)
from cobotsafe.workcell import read

DATA = Path(__file__).parent / "data"


def test_bundled_query_round_trip():
    q = parse_query(read("query.txt"))
    assert q.setting == "pdtmc"
    assert [o.name for o in q.objectives] == ["productivity", "nuisance", "risk"]
    assert q.domains["dpHCmit"] == [0, 1, 2]
    assert len(q.domains["alarmIntensity1"]) == 5
    again = parse_query(format_query(q))
    assert again == q


@pytest.mark.parametrize("text", [
    "setting pdtmc\nobjective risk sideways",
    "setting pdtmc\nobjective risk min -1",
    "setting pdtmc\nobjective risk min\nconstraint P<=0 [ F",
    "setting pdtmc\nobjective risk min\nfrobnicate 3",
    "setting pdtmc",
    "setting pdtmc\nobjective risk min\ndomain dpX",
])
def test_query_errors(text):
    with pytest.raises(SynthesisError):
        parse_query(text)


vectors = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=30)
dirs = st.lists(st.sampled_from(["min", "max"]), min_size=3, max_size=3)


@given(vectors, dirs)
def test_pareto_filter_properties(vs, d):
    front = pareto_filter(vs, d)
    assert front
    # kept points are mutually nondominated, dropped ones are dominated by a kept one
    assert not any(dominates(a, b, d) for a in front for b in front)
    for v in vs:
        if v not in front:
            assert any(dominates(f, v, d) for f in front)


@given(vectors, dirs)
def test_pareto_filter_ignores_input_order(vs, d):
    assert pareto_filter(vs, d) == pareto_filter(list(reversed(vs)), d)


def test_dominates_is_strict():
    assert not dominates((1, 1), (1, 1), ["max", "min"])
    assert dominates((2, 1), (1, 1), ["max", "min"])
    assert not dominates((2, 2), (1, 1), ["max", "min"])


# decision parameters of the one-factor chain, fixed so only a and b are searched
FIXED = {"dpHTmit": 0, "dpHTres": 0}


def _fake_evaluate(params):
    a, b = params["a"], params["b"]
    return SolutionPoint(tuple(sorted(params.items())), (("gain", a + b), ("cost", a * a + (9 - b))),
                         (("ok", a != 3),))


def test_search_respects_budget_and_feasibility():
    q = SynthesisQuery(objectives=[Objective("gain", "max"), Objective("cost", "min")],
                       domains={"a": list(range(10)), "b": list(range(10))}, budget=40, seed=3,
                       constants=FIXED)
    calls = []

    def evaluate(params):
        calls.append(params)
        return _fake_evaluate(params)

    front = synth.synth_pdtmc(_chain(), q, evaluate=evaluate)
    assert len(calls) == 40
    assert all(dict(p.params)["a"] != 3 for p in front)
    # same seed, same result
    again = synth.synth_pdtmc(_chain(), q, evaluate=_fake_evaluate)
    assert [p.params for p in again] == [p.params for p in front]


def test_exhaustive_when_space_fits_budget():
    q = SynthesisQuery(objectives=[Objective("gain", "max"), Objective("cost", "min")],
                       domains={"a": list(range(4)), "b": list(range(4))}, budget=100,
                       constants=FIXED)
    front = synth.synth_pdtmc(_chain(), q, evaluate=_fake_evaluate)
    everything = [_fake_evaluate({"a": a, "b": b}) for a in range(4) for b in range(4) if a != 3]
    assert sorted(p.params for p in front) == sorted(p.params for p in pareto_filter(everything, ["max", "min"]))


def test_no_feasible_candidate():
    q = SynthesisQuery(objectives=[Objective("gain", "max")], domains={"a": [3], "b": [0]}, constants=FIXED)
    with pytest.raises(SynthesisError, match="no feasible"):
        synth.synth_pdtmc(_chain(), q, evaluate=_fake_evaluate)


def _mini():
    rm = parse_risk_model((DATA / "mini.rm").read_text())
    return parse_model(generate((DATA / "mini.pm").read_text(), rm)), rm


def _chain():
    m, rm = _mini()
    return pdtmc_transform(m, rm)


def test_real_candidate_evaluation():
    q = parse_query("setting pdtmc\nhorizon 20\nobjective productivity max\nobjective risk min\n"
                    "domain dpHTmit 0\ndomain dpHTres 0\n")
    pts = synth.synth_pdtmc(_chain(), q)
    assert len(pts) == 1 and pts[0].feasible
    assert pts[0].objective("risk") == 0.0
    csv = front_csv(pts)
    assert csv.splitlines()[0] == "risk,productivity,dpHTmit,dpHTres,flags"


def test_mdp_setting_single_objective():
    m, _ = _mini()
    x = expand(m)
    q = parse_query('setting mdp\nobjective p max : Pmax=? [ F "final" ]\nconstraint P>=1 [ F "final" ]')
    pt = synth.synth_mdp(x, q)
    assert pt.objective("p") == pytest.approx(1.0)
    assert pt.feasible
    assert pt.policy is not None


def test_mdp_scalarisation_needs_rewards():
    m, _ = _mini()
    q = parse_query('setting mdp\nobjective a max : Pmax=? [ F "final" ]\n'
                    'objective b min : R{"prod"}min=? [ F "final" ]')
    with pytest.raises(SynthesisError, match="scalarisation"):
        synth.synth_mdp(expand(m), q)
