import itertools
from pathlib import Path

import numpy as np
import pytest

from cobotsafe import mc
from cobotsafe.design import (GenerationError, decision_parameters, generate, pdtmc_transform,
                              unsafe_region)
from cobotsafe.pgcl import expand, parse_model
from cobotsafe.risk import PHASES, parse_risk_model
from cobotsafe.workcell import read

RM = parse_risk_model(read("risk.rm"))
SKELETON = read("process.pm")


@pytest.fixture(scope="module")
def mdp():
    return parse_model(generate(SKELETON, RM))


def test_generated_model_declares_risk_structure(mdp):
    for f in ("HC", "HRW", "HS"):
        assert f"{f}p" in {v.name for v in mdp.variables}
        for name in (f"CE_{f}", f"RCE_{f}", f"KAPPA_{f}"):
            assert name in mdp.formulas
        assert f"act_{f}" in mdp.labels
    for label in ("mishap", "unsafe", "safe", "final"):
        assert label in mdp.labels
    assert {"prod", "risk_HC", "risk_HRW", "risk_HS"} <= set(mdp.reward_names())


def test_controller_commands_only_in_controlled_model(mdp):
    ctrl = [c for c in mdp.commands if c.label.startswith(("si_", "s_"))]
    assert ctrl
    base = parse_model(generate(SKELETON, RM, controller=False))
    assert not [c for c in base.commands if c.label.startswith(("si_", "s_"))]
    assert [c.label for c in base.commands].count("idle") == 1


def test_missing_anchor():
    with pytest.raises(GenerationError):
        generate(SKELETON.replace("//@controller", ""), RM)


def test_decision_parameters_follow_option_lists():
    dp = decision_parameters(RM)
    assert dp["dpHCmit"] == [0, 1, 2] and dp["dpHCres"] == [0, 1]
    assert dp["dpHSmit"] == [0, 1, 2] and dp["dpHRWres"] == [0]


def test_pdtmc_instances_are_deterministic_per_decision(mdp):
    pd = pdtmc_transform(mdp, RM)
    assert pd.kind == "dtmc"
    assert set(decision_parameters(RM)) <= set(pd.parameters)
    x = expand(pd, {"alarmIntensity1": 0.5, "dpHCmit": 1, "dpHCres": 0, "dpHRWmit": 1, "dpHRWres": 0,
                    "dpHSmit": 2, "dpHSres": 0})
    sums = np.asarray(x.trans.sum(axis=1)).ravel()
    assert np.allclose(sums, 1.0)
    # mitigation commands of unselected options never fire
    used = set(x.choice_labels) | {lab for parts in x.parts.values() for lab, _ in parts}
    assert not any(lab.startswith(("si_HCSrmstIdleVis", "si_HCHguidAud")) for lab in used)


def test_transform_rejects_double_application(mdp):
    with pytest.raises(GenerationError):
        pdtmc_transform(pdtmc_transform(mdp, RM), RM)


def test_unsafe_region_definition():
    # a cause present or a factor between activation and mitigation, and no mishap yet
    e = unsafe_region(RM)
    from cobotsafe.expr import evaluate
    consts = {p: i for i, p in enumerate(PHASES)}
    for combo in itertools.product(range(len(PHASES)), repeat=3):
        for causes in itertools.product((False, True), repeat=3):
            env = dict(zip(("HCp", "HRWp", "HSp"), combo), **consts)
            env.update(zip(("RCE_HC", "RCE_HRW", "RCE_HS"), causes))
            phases = [PHASES[c] for c in combo]
            want = (any(causes) or any(p in ("act", "mit1", "mit2") for p in phases)) and "mis" not in phases
            assert bool(evaluate(e, env)) == want


DATA = Path(__file__).parent / "data"


def test_generator_on_a_one_factor_skeleton():
    rm = parse_risk_model((DATA / "mini.rm").read_text())
    skel = (DATA / "mini.pm").read_text()
    x = expand(parse_model(generate(skel, rm)))
    assert mc.check(x, 'E F "final"')
    assert not mc.check(x, 'E F ("deadlock" & !"final")')
    assert mc.check(x, 'E F ("act_HT" & !"final")')
    # the controller moves before the robot, so the cause is always handled in time
    assert mc.check(x, 'Pmax=? [ F "mishap" ]') == 0.0
    base = parse_model(generate(skel, rm, controller=False))
    base.kind = "dtmc"
    assert mc.check(expand(base), 'P=? [ F "mishap" ]') > 0.0
