from pathlib import Path

import pytest

from cobotsafe.controller import (ControllerError, ControllerTable, Livelock, Rule, RuntimeState,
                                  bisimulation_check, extract_controller, format_table, overhead_estimate,
                                  parse_table, step)
from cobotsafe.design import generate, pdtmc_transform
from cobotsafe.pgcl import expand, parse_model
from cobotsafe.risk import parse_risk_model

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def mini():
    rm = parse_risk_model((DATA / "mini.rm").read_text())
    pd = pdtmc_transform(parse_model(generate((DATA / "mini.pm").read_text(), rm)), rm)
    d = expand(pd, {"dpHTmit": 0, "dpHTres": 0})
    return d, pd, rm


def test_extract_and_replay(mini):
    d, pd, rm = mini
    t = extract_controller(d, pd, rm)
    assert t.rules
    assert t.phases == ("HTp",)
    assert "safmod" in t.controlled
    ok, why, explored = bisimulation_check(d, t, 40)
    assert ok, why
    assert explored > 0


def test_table_file_round_trip(mini):
    d, pd, rm = mini
    t = extract_controller(d, pd, rm)
    again = parse_table(format_table(t))
    assert again.rules == t.rules
    assert (again.monitored, again.controlled, again.phases) == (t.monitored, t.controlled, t.phases)
    assert again.categories == t.categories


def test_tampered_table_fails_replay(mini):
    d, pd, rm = mini
    t = extract_controller(d, pd, rm)
    # make every stopping rule stop somewhere else
    bad = [Rule(r.label, r.process, r.risk,
                tuple((v, 1 - k if v == "safmod" else k) for v, k in r.update), r.passes) for r in t.rules]
    ok, why, _ = bisimulation_check(d, ControllerTable(t.monitored, t.controlled, t.phases, bad, t.categories), 40)
    assert not ok and why


def _toy():
    return ControllerTable(
        monitored=("near",), controlled=("mode",), phases=("p",),
        rules=[Rule("detect", (("near", 1),), (("p", 0),), (("p", 1),)),
               Rule("stop", (("near", 1), ("mode", 0)), (("p", 1),), (("mode", 1), ("p", 4)), True),
               Rule("resume", (("near", 0), ("mode", 1)), (("p", 4),), (("mode", 0), ("p", 0)), True)])


def test_step_fires_chain_and_settles():
    t = _toy()
    rt = RuntimeState.initial(t)
    fired, rt = step(t, rt, {"near": 1, "mode": 0})
    assert [f for f, _ in fired] == ["detect", "stop"]
    assert dict(rt.phases) == {"p": 4}
    # same snapshot again: nothing to do
    fired, rt2 = step(t, rt, {"near": 1, "mode": 1})
    assert fired == []
    fired, rt = step(t, rt2, {"near": 0, "mode": 1})
    assert [f for f, _ in fired] == ["resume"]
    assert dict(rt.phases) == {"p": 0}


def test_step_requires_monitored_values():
    with pytest.raises(ControllerError):
        step(_toy(), RuntimeState.initial(_toy()), {"mode": 0})


def test_overlapping_rules_are_rejected():
    t = _toy()
    t.rules.append(Rule("twin", (("near", 1),), (("p", 0),), (("p", 2),)))
    with pytest.raises(ControllerError, match="together"):
        step(t, RuntimeState.initial(t), {"near": 1, "mode": 0})


def test_livelock_is_detected():
    t = ControllerTable(("s",), ("m",), ("p",), [
        Rule("a", (("s", 1),), (("p", 0),), (("p", 1),)),
        Rule("b", (("s", 1),), (("p", 1),), (("p", 0),)),
    ])
    with pytest.raises(Livelock) as err:
        step(t, RuntimeState.initial(t), {"s": 1, "m": 0})
    assert [f for f, _ in err.value.fired] == ["a", "b"]


@pytest.mark.parametrize("text", ["", "rules\n", "controller\nrule a | x=1 | true | -\n", "controller\nbogus x\n"])
def test_malformed_tables(text):
    with pytest.raises(ControllerError):
        parse_table(text)


def test_overhead_bounds():
    dur = {"mit_sm": 0.1, "mit_a": 0.2, "mit": 0.05, "res_sm": 0.1, "res_a": 0.2, "mit_sf": 0.5, "res_sf": 0.3,
           "end": 0.01}
    o = overhead_estimate(["A", "B"], dur, x=1.0)
    assert o.d_min["A"] == pytest.approx(0.65)
    assert o.d_max["A"] == pytest.approx(0.65 + 0.5 + 0.3)
    assert o.sequential_slot == pytest.approx(0.02)
    assert o.parallel_rate == pytest.approx(100.0)
    with pytest.raises(ControllerError):
        overhead_estimate(["A"], {"mit": -1})
