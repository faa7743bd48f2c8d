import itertools

import pytest
from hypothesis import given, strategies as st

from cobotsafe.expr import TRUE
from cobotsafe.risk import (DistanceMatrix, Factor, format_risk_model, mitigation_target,
                            parse_risk_model, resumption_target, risk_scale, risk_space)
from cobotsafe.workcell import read

SMALL = """
A desc "first" guard "true" detectedBy (.Adet) mitigatedBy (.Astop) resumedBy (.Ares);
B desc "second" requiresOcc (A) guard "true" mitigatedBy (.Bstop);
mode Adet guard "true";
mode Astop cf "true" target (act=off) disruption=2;
mode Ares cf "true" target (act=busy);
mode Bstop cf "true" target (act=off);
distances act {
 off: 0;
 busy: 3 0;
}
"""


def test_bundled_model_parses():
    rm = parse_risk_model(read("risk.rm"))
    assert [f.id for f in rm.factors] == ["HC", "HRW", "HS"]
    hc = rm.factor("HC")
    assert hc.requires_occ == ("HS",) and hc.prevents == ("HRW",)
    assert len(rm.mitigations(hc)) == 3 and len(rm.resumptions(hc)) == 2
    assert set(rm.distances) == {"act", "safmod"}


def test_format_round_trip():
    rm = parse_risk_model(read("risk.rm"))
    again = parse_risk_model(format_risk_model(rm))
    assert again.factors == rm.factors
    assert again.modes == rm.modes
    assert again.distances == rm.distances
    key = lambda e: (e.label, e.column)  # noqa: E731
    assert sorted(again.profile, key=key) == sorted(rm.profile, key=key)


def test_small_model_and_space():
    rm = parse_risk_model(SMALL)
    space = risk_space(rm.factors)
    # B may leave inact only once A has
    assert {"A": "inact", "B": "activ"} not in space
    assert len(space) == 1 + 2 * 3


@pytest.mark.parametrize("text, msg", [
    ("A desc \"\" guard \"true\" mitigatedBy (.Nope);", "Nope"),
    ("A desc \"\" requiresOcc (B) guard \"true\";\nB desc \"\" requiresOcc (A) guard \"true\";", "cycl"),
    ("A desc \"\" mitigatedBy (.M);", "guard"),
    ("distances act {\n off: 0;\n on: 1;\n}", "entries"),
])
def test_errors(text, msg):
    # syntax errors surface as the parser's error type, semantic ones as RiskModelError; both are ValueErrors
    with pytest.raises(ValueError, match=msg):
        parse_risk_model(text)


def test_single_factor_space_has_three_states():
    assert len(risk_space([Factor("X", "", TRUE)])) == 3


def test_restrict_drops_dangling_dependencies():
    rm = parse_risk_model(read("risk.rm")).restrict(["HC"])
    assert [f.id for f in rm.factors] == ["HC"]
    assert rm.factor("HC").requires_occ == ()
    assert all(not e.column.startswith("risk_") or e.column == "risk_HC" for e in rm.profile)


# distance matrices

@st.composite
def matrices(draw):
    k = draw(st.integers(1, 5))
    cats = tuple(f"c{i}" for i in range(k))
    rows = tuple(tuple(draw(st.integers(-5, 5)) for _ in range(i)) + (0,) for i in range(k))
    return DistanceMatrix("m", cats, rows)


@given(matrices())
def test_gradient_is_skew_symmetric(m):
    for a, b in itertools.product(m.categories, repeat=2):
        assert m.grad(a, b) == -m.grad(b, a)


@given(matrices(), st.data())
def test_mitigation_never_increases_risk(m, data):
    cur = data.draw(st.sampled_from(m.categories))
    tgt = data.draw(st.sampled_from(m.categories))
    assert m.grad(cur, mitigation_target(cur, tgt, m)) >= 0


@given(matrices())
def test_risk_scale_range(m):
    scale = risk_scale(m)
    assert all(0.0 <= v <= 1.0 for v in scale.values())
    assert scale[m.most_permissive()] == 1.0


def test_resumption_takes_most_restrictive():
    rm = parse_risk_model(read("risk.rm"))
    sm = rm.distances["safmod"]
    got = resumption_target([{"safmod": "normal"}, {"safmod": "pflim"}, None], {"safmod": "stopped"},
                            {"safmod": sm})
    assert got == {"safmod": "pflim"}
    # unconstrained axis keeps its value
    assert resumption_target([None], {"safmod": "ssmon"}, {"safmod": sm}) == {"safmod": "ssmon"}
