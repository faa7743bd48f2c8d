import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cobotsafe import mtl, twin
from cobotsafe.expr import evaluate
from cobotsafe.twin import (Scenario, TimedTrace, TwinError, Workcell, gen_test_vectors, parse_scenario_file,
                            parse_trace, run_scenario, situation_coverage, unmitigated_causes, with_waits)
from cobotsafe.workcell import bundled, read


@pytest.fixture(scope="module")
def setup():
    p = bundled()
    table, _ = p.table()
    spec = parse_scenario_file(read("scenario.txt"))
    cell = Workcell(p.pdtmc, p.rm, p.controller_params(spec.get("config")))
    return p, table, spec, cell


# test vectors

@given(st.integers(1, 20), st.integers(0, 1000))
def test_vectors_lie_on_the_simplex(n, seed):
    vs = gen_test_vectors(n, 20.0, seed=seed)
    assert len(vs) == n
    for v in vs:
        assert len(v) == 4 and min(v) >= 0
        assert sum(v) == pytest.approx(20.0)


def test_vectors_respect_caps_and_seed():
    caps = (10.0, 0.0, 8.0, 6.0)
    vs = gen_test_vectors(200, 20.0, caps, seed=4)
    assert all(v[1] == 0.0 and all(x <= c + 1e-12 for x, c in zip(v, caps)) for v in vs)
    assert gen_test_vectors(5, seed=9) == gen_test_vectors(5, seed=9)
    assert gen_test_vectors(5, seed=9) != gen_test_vectors(5, seed=10)


def test_vectors_are_uniform_on_average():
    vs = np.array(gen_test_vectors(4000, 20.0, seed=1))
    assert np.allclose(vs.mean(axis=0), 5.0, atol=0.3)


@pytest.mark.parametrize("bounds", [(1, 1, 1, 1), (30, 30, -1, 0), (20, 20)])
def test_infeasible_bounds(bounds):
    with pytest.raises(TwinError):
        gen_test_vectors(3, 20.0, bounds)


# traces

def test_trace_text_round_trip():
    tr = TimedTrace()
    tr.add(0, "operator", "h_reach", {"hstep": 1, "HCp": 0})
    tr.add(0.25, "controller", "si_HCdet", {"hstep": 1, "HCp": 1})
    tr.add(50, "robot", "r_return", {})
    again = parse_trace(tr.text())
    assert again.records == tr.records
    assert again.events("si_HCdet") == [1]


def test_malformed_trace_line():
    with pytest.raises(TwinError):
        parse_trace("0 | robot | r_return\n")


# scenarios

def test_scenario_validation(setup):
    _, table, _, cell = setup
    with pytest.raises(TwinError, match="slots"):
        Scenario(cell, table, waits=(10.0, 10.0))
    with pytest.raises(TwinError, match="sum"):
        Scenario(cell, table, waits=(1.0, 1.0, 1.0, 1.0))
    with pytest.raises(TwinError, match="nonnegative"):
        Scenario(cell, table, waits=(25.0, -5.0, 0.0, 0.0))


def test_run_is_deterministic_and_safe(setup):
    p, table, spec, cell = setup
    s = twin.scenario_from(spec, cell, table, seed=3)
    s = with_waits(s, (2.0, 8.0, 4.0, 6.0))
    assert s.second_operator is not None
    s = dataclasses.replace(s, second_operator=None)
    a, b = run_scenario(s), run_scenario(s)
    assert a.text() == b.text()
    assert len(a) > 0 and not a.events("mishap")
    times = [r.timestamp for r in a.records]
    assert times == sorted(times)
    # the configured controller meets the detection deadline on this run
    for _, f in mtl.parse_mtl_file(read("validation.mtl")):
        assert mtl.check_trace(a, f, cell.env()), f


def test_coverage_counts_interferences():
    tr = TimedTrace()
    tr.add(0, "robot", "r_moveToTable", {"rstep": 1, "HCp": 0})
    tr.add(1, "operator", "h_reach", {"rstep": 1, "HCp": 1})
    rep = situation_coverage([tr], ["HCp"])
    assert rep.cells[("robot:r_moveToTable", "reaching at workbench")]
    assert rep.cells[("arm:atTable", "reaching at workbench")]
    assert not rep.cells[("robot:r_moveToTable", "entering cell")]
    assert rep.phases["HC"] == {"inact", "act"}
    assert not rep.full and 0 < rep.situation_ratio < 1
    assert "HC:mit" in rep.missing()
    assert situation_coverage([]).situation_ratio == 0.0


def test_unmitigated_cause_is_reported(setup):
    _, _, _, cell = setup
    cause = cell.expr("RCE_HC")
    # search operator position and robot activity for a state where the cause holds
    base = cell.initial()
    hits = [(h, a) for h in range(8) for a in range(8)
            if evaluate(cause, {**cell.env(), **base, "hstep": h, "cact": a})]
    assert hits
    hit, busy = hits[0]
    base["cact"] = busy
    inact, act = cell.const("inact"), cell.const("act")
    snap = {**base, "hpos1": hit, "HCp": inact}
    tr = TimedTrace()
    tr.add(0, "operator", "h_reach", snap)
    tr.add(1, "robot", "r_return", snap)
    assert unmitigated_causes(tr, cell, "HC", ["hpos1"]) == [0, 1]
    ok = TimedTrace()
    ok.add(0, "operator", "h_reach", snap)
    ok.add(0.25, "controller", "si_HCdet", {**snap, "HCp": act})
    assert unmitigated_causes(ok, cell, "HC", ["hpos1"]) == []


def test_scenario_file():
    spec = parse_scenario_file(read("scenario.txt"))
    assert spec["vectors"] == 100 and spec["rates"]["sensor_failure"] == 0
    assert spec["second_operator"] == 5.0
    for bad in ("rate nonsense 0.1", "vectors many", "colour blue", "seed"):
        with pytest.raises(TwinError):
            parse_scenario_file(bad)
