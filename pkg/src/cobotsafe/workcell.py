"""The bundled work-cell case study: inputs, derived models and the analysis tables."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

from . import mc, mtl, twin
from .controller import ControllerTable, extract_controller
from .design import generate, pdtmc_transform
from .pgcl import ExplicitModel, ProcessModel, expand, parse_model
from .risk import RiskModel, parse_risk_model

DEFAULT_HORIZON = 150
FACTORS = ("HC", "HRW", "HS")

# controller configurations compared in the productivity/risk table; resumption
# options stay at the first one so only the mitigation choice varies
TABLE_CONFIGS = {
    "all-stop": dict(dpHCmit=1, dpHRWmit=0, dpHSmit=0),
    "monitored-stop": dict(dpHCmit=0, dpHRWmit=0, dpHSmit=0),
    "pflim": dict(dpHCmit=0, dpHRWmit=1, dpHSmit=1),
    "ssmon": dict(dpHCmit=0, dpHRWmit=1, dpHSmit=2),
    "hguid-ssmon": dict(dpHCmit=2, dpHRWmit=1, dpHSmit=2),
}
NO_CONTROLLER = "no-controller"


def data_dir() -> Path:
    return Path(str(resources.files("cobotsafe") / "data" / "workcell"))


def read(name: str) -> str:
    return (data_dir() / name).read_text()


@dataclass
class ProjectConfig:
    root: Path
    risk: str = "risk.rm"
    skeleton: str = "process.pm"
    properties: str = "wellformed.props"
    query: str = "query.txt"
    scenario: str = "scenario.txt"
    out: str = "out"
    seed: int = 7
    epsilon: float = mc.EPSILON
    budget: int = 10_000
    horizon: int = DEFAULT_HORIZON
    params: dict = field(default_factory=lambda: {"alarmIntensity1": 0.5})
    controller: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else self.root / p

    def text(self, name: str) -> str:
        p = self.path(name)
        if not p.is_file():
            raise FileNotFoundError(f"{name} file {p} does not exist")
        return p.read_text()


def _value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config(path: str | Path | None = None) -> ProjectConfig:
    """Read an INI project file; without a path, the bundled project."""
    path = Path(path) if path is not None else data_dir() / "project.ini"
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read(path)
    cfg = ProjectConfig(path.parent.resolve())
    if cp.has_section("project"):
        sec = cp["project"]
        for k in ("risk", "skeleton", "properties", "query", "scenario", "out"):
            if k in sec:
                setattr(cfg, k, sec[k])
        if "seed" in sec:
            cfg.seed = int(sec["seed"])
    if cp.has_section("engine"):
        sec = cp["engine"]
        cfg.epsilon = float(sec.get("epsilon", cfg.epsilon))
        cfg.budget = int(sec.get("budget", cfg.budget))
        cfg.horizon = int(sec.get("horizon", cfg.horizon))
    if cp.has_section("params"):
        cfg.params = {k: _value(v) for k, v in cp["params"].items()}
    if cp.has_section("controller"):
        cfg.controller = {k: _value(v) for k, v in cp["controller"].items()}
    for name in ("risk", "skeleton"):
        if not cfg.path(name).is_file():
            raise FileNotFoundError(f"{name} file {cfg.path(name)} does not exist")
    return cfg


# ---------------------------------------------------------------- models


class Project:
    """Parsed inputs and lazily built models of one project."""

    def __init__(self, cfg: ProjectConfig | None = None):
        self.cfg = cfg or load_config()
        self.rm: RiskModel = parse_risk_model(self.cfg.text("risk"))
        self.skeleton = self.cfg.text("skeleton")
        self._mdp: ProcessModel | None = None
        self._pdtmc: ProcessModel | None = None

    @property
    def mdp_text(self) -> str:
        return generate(self.skeleton, self.rm)

    @property
    def mdp(self) -> ProcessModel:
        if self._mdp is None:
            self._mdp = parse_model(self.mdp_text)
        return self._mdp

    @property
    def pdtmc(self) -> ProcessModel:
        if self._pdtmc is None:
            self._pdtmc = pdtmc_transform(self.mdp, self.rm)
        return self._pdtmc

    def baseline(self) -> ProcessModel:
        m = parse_model(generate(self.skeleton, self.rm, controller=False))
        m.kind = "dtmc"
        return m

    def controller_params(self, overrides: Mapping | None = None) -> dict:
        """Full parameter binding of the parametric chain (unset decisions default to option 0)."""
        params = {p: 0 for p in self.pdtmc.parameters if p.startswith("dp")}
        params.update(self.cfg.params)
        params.update(self.cfg.controller)
        params.update(overrides or {})
        return {k: v for k, v in params.items() if k in self.pdtmc.parameters}

    def expand_mdp(self) -> ExplicitModel:
        return expand(self.mdp, {k: v for k, v in self.cfg.params.items() if k in self.mdp.parameters})

    def expand_baseline(self) -> ExplicitModel:
        m = self.baseline()
        return expand(m, {k: v for k, v in self.cfg.params.items() if k in m.parameters})

    def expand_controller(self, overrides: Mapping | None = None) -> ExplicitModel:
        return expand(self.pdtmc, self.controller_params(overrides))

    def table(self, overrides: Mapping | None = None) -> tuple[ControllerTable, ExplicitModel]:
        d = self.expand_controller(overrides)
        return extract_controller(d, self.pdtmc, self.rm), d


@lru_cache(maxsize=1)
def bundled() -> Project:
    return Project()


# ---------------------------------------------------------------- analysis tables


def productivity_risk(x: ExplicitModel, horizon: int = DEFAULT_HORIZON, eps: float = mc.EPSILON) -> tuple[float, float]:
    """(expected productive reward, summed factor risk) accumulated over ``horizon`` steps."""
    prod = float(mc.expected_reward(x, "prod", mc.Cumulative(horizon), eps=eps)[x.initial])
    risk = sum(float(mc.expected_reward(x, f"risk_{f}", mc.Cumulative(horizon), eps=eps)[x.initial])
               for f in FACTORS if f"risk_{f}" in x.rewards)
    return prod, risk


def utility_table(project: Project | None = None, horizon: int = DEFAULT_HORIZON,
                  configs: Mapping[str, Mapping] = TABLE_CONFIGS) -> dict[str, tuple[float, float]]:
    """Productivity and risk of each controller configuration and of the uncontrolled process."""
    project = project or bundled()
    out = {}
    for name, cfg in configs.items():
        out[name] = productivity_risk(project.expand_controller(cfg), horizon, project.cfg.epsilon)
    out[NO_CONTROLLER] = productivity_risk(project.expand_baseline(), horizon, project.cfg.epsilon)
    return out


def accident_freedom(x: ExplicitModel, eps: float = mc.EPSILON) -> tuple[float, float, float]:
    return mc.accident_freedom(x, '"unsafe"', '"mishap"', '"safe"', eps=eps)


def format_utility_table(rows: Mapping[str, tuple[float, float]]) -> str:
    lines = ["configuration,productivity,risk"]
    for name, (prod, risk) in rows.items():
        lines.append(f"{name},{prod:.17g},{risk:.17g}")
    return "\n".join(lines) + "\n"


def format_accident_freedom(rows: Mapping[str, tuple[float, float, float]]) -> str:
    lines = ["model,min,mu,max"]
    for name, (lo, mu, hi) in rows.items():
        lines.append(f"{name},{lo:.17g},{mu:.17g},{hi:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- validation campaign


@dataclass
class Campaign:
    vectors: list
    traces: list
    verdicts: list  # (trace index, property index, Verdict)
    coverage: "twin.CoverageReport"
    misuse: list = field(default_factory=list)  # (trace index, factor, record indices)

    @property
    def failures(self) -> list:
        return [(k, i, v) for k, i, v in self.verdicts if not v.ok]

    @property
    def mishap_traces(self) -> int:
        return sum(bool(t.events("mishap")) for t in self.traces)


def validation_campaign(project: Project, table: ControllerTable, n: int | None = None,
                        seed: int | None = None, properties: str | None = None,
                        misuse: bool = True) -> Campaign:
    """Run the seeded test vectors through the twin and check the MTL properties.

    With ``misuse`` and a ``second_operator`` entry in the scenario file, every
    vector is replayed with the second operator and causes that are never
    activated within one controller cycle are collected.
    """
    spec = twin.parse_scenario_file(project.cfg.text("scenario"))
    cell = twin.Workcell(project.pdtmc, project.rm, project.controller_params(spec.get("config")))
    base = twin.scenario_from({k: v for k, v in spec.items() if k != "second_operator"}, cell, table)
    n = n if n is not None else spec.get("vectors", 100)
    seed = seed if seed is not None else spec.get("seed", 0)
    vectors = twin.gen_test_vectors(n, spec.get("total", 20.0), spec.get("bounds"), seed=seed)
    text = properties if properties is not None else (project.cfg.root / "validation.mtl").read_text()
    props = mtl.parse_mtl_file(text)
    env = cell.env()
    traces, verdicts = [], []
    for k, w in enumerate(vectors):
        tr = twin.run_scenario(twin.with_waits(base, w, seed=seed + k))
        traces.append(tr)
        for i, (_, f) in enumerate(props):
            verdicts.append((k, i, mtl.check_trace(tr, f, env)))
    cov = twin.situation_coverage(traces, cell.phase_vars)
    out = Campaign(vectors, traces, verdicts, cov)
    if misuse and "second_operator" in spec:
        two = twin.scenario_from(spec, cell, table)
        for k, w in enumerate(vectors):
            tr = twin.run_scenario(twin.with_waits(two, w, seed=seed + k))
            for f in project.rm.factors:
                idx = twin.unmitigated_causes(tr, cell, f.id, ["hpos1", "hpos2"], two.cycle_ms)
                if idx:
                    out.misuse.append((k, f.id, idx))
    return out
