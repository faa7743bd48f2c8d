"""Constrained controller synthesis.

Two settings are supported.  On an MDP, objectives are combined by a weighted
sum, an optimal memoryless policy is computed and every constraint is then
verified on the induced chain.  On a parametric chain, candidate parameter
assignments are enumerated (or sampled and mutated when the space exceeds the
budget), instantiated, checked against the hard constraints and scored; the
result is the set of nondominated feasible candidates.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import mc
from .pgcl import ExplicitModel, Policy, ProcessModel, expand, induced_dtmc

DEFAULT_BUDGET = 10_000
DEFAULT_GRID = 5
EARLY_DEADLOCK = 'P<=0 [ F ("deadlock" & !"final") ]'


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class Objective:
    name: str
    direction: str
    weight: float = 1.0
    query: str | None = None

    def __post_init__(self):
        if self.direction not in ("min", "max"):
            raise SynthesisError(f"objective {self.name}: direction must be min or max")
        if not self.weight > 0:
            raise SynthesisError(f"objective {self.name}: weight must be positive")


@dataclass
class SynthesisQuery:
    setting: str = "pdtmc"
    objectives: list[Objective] = field(default_factory=list)
    constraints: list[str] = field(default_factory=list)
    domains: dict[str, list] = field(default_factory=dict)
    constants: dict[str, float] = field(default_factory=dict)
    horizon: int = 30
    scales: dict[str, float] = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET
    seed: int = 0
    rewards: dict[str, str] = field(default_factory=lambda: {
        "prod": "prod", "disruption": "disruption", "effort": "effort", "nuisance": "nuisance"})

    def check(self) -> None:
        if self.setting not in ("mdp", "pdtmc"):
            raise SynthesisError(f"unknown setting {self.setting}")
        for name, dom in self.domains.items():
            if not dom:
                raise SynthesisError(f"parameter {name} has an empty domain")
        if not self.objectives:
            raise SynthesisError("query has no objectives")


@dataclass(frozen=True)
class SolutionPoint:
    params: tuple[tuple[str, object], ...]
    objectives: tuple[tuple[str, float], ...]
    verdicts: tuple[tuple[str, bool], ...] = ()
    flags: tuple[str, ...] = ()
    policy: Policy | None = None

    @property
    def feasible(self) -> bool:
        return all(v for _, v in self.verdicts)

    def objective(self, name: str) -> float:
        return dict(self.objectives)[name]

    def vector(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.objectives)


# ---------------------------------------------------------------- query files


def parse_query(text: str) -> SynthesisQuery:
    """Line-oriented query file; see the bundled ``query.txt`` for every directive."""
    q = SynthesisQuery()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if head == "setting":
                q.setting = rest
            elif head == "horizon":
                q.horizon = int(rest)
            elif head == "seed":
                q.seed = int(rest)
            elif head == "budget":
                q.budget = int(rest)
            elif head == "objective":
                spec, _, query = rest.partition(":")
                name, direction, *w = spec.split()
                q.objectives.append(Objective(name, direction, float(w[0]) if w else 1.0,
                                              query.strip() or None))
            elif head == "constraint":
                mc.parse_pctl(rest)
                q.constraints.append(rest)
            elif head == "domain":
                name, *vals = rest.split()
                q.domains[name] = [_number(v) for v in vals]
            elif head == "grid":
                name, lo, hi, *n = rest.split()
                k = int(n[0]) if n else DEFAULT_GRID
                q.domains[name] = [float(v) for v in np.linspace(float(lo), float(hi), k)]
            elif head == "const":
                name, _, value = rest.partition("=")
                q.constants[name.strip()] = _number(value.strip())
            elif head == "scale":
                fid, value = rest.split()
                q.scales[fid] = float(value)
            elif head == "reward":
                role, name = rest.split()
                q.rewards[role] = name
            else:
                raise SynthesisError(f"unknown directive {head!r}")
        except (ValueError, mc.CheckError) as err:
            raise SynthesisError(f"query line {lineno}: {err}") from None
    q.check()
    return q


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def format_query(q: SynthesisQuery) -> str:
    lines = [f"setting {q.setting}", f"horizon {q.horizon}", f"seed {q.seed}", f"budget {q.budget}"]
    for o in q.objectives:
        tail = f" : {o.query}" if o.query else ""
        lines.append(f"objective {o.name} {o.direction} {o.weight!r}{tail}")
    lines += [f"constraint {c}" for c in q.constraints]
    for name, dom in q.domains.items():
        lines.append(f"domain {name} " + " ".join(repr(v) for v in dom))
    for name, v in q.constants.items():
        lines.append(f"const {name} = {v!r}")
    for fid, s in q.scales.items():
        lines.append(f"scale {fid} {s!r}")
    for role, name in q.rewards.items():
        lines.append(f"reward {role} {name}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- Pareto filtering


def dominates(a: Sequence[float], b: Sequence[float], directions: Sequence[str]) -> bool:
    better = False
    for x, y, d in zip(a, b, directions):
        if d == "min":
            x, y = -x, -y
        if x < y:
            return False
        if x > y:
            better = True
    return better


def pareto_filter(points: Iterable, directions: Sequence[str], key: Callable = None) -> list:
    """Nondominated subset, in a canonical order independent of the input order."""
    key = key or (lambda p: p.vector() if isinstance(p, SolutionPoint) else tuple(p))
    pts = sorted(points, key=lambda p: (tuple(key(p)), repr(p)))
    vecs = [tuple(key(p)) for p in pts]
    if any(len(v) != len(directions) for v in vecs):
        raise SynthesisError("objective arity does not match the directions")
    return [p for p, v in zip(pts, vecs) if not any(dominates(w, v, directions) for w in vecs)]


# ---------------------------------------------------------------- MDP setting


def _plain(f):
    """Drop min/max from a query so it can be evaluated on a chain."""
    if isinstance(f, (mc.Prob, mc.Reward)):
        return replace(f, bound=replace(f.bound, opt=None))
    return f


def synth_mdp(x: ExplicitModel, q: SynthesisQuery) -> SolutionPoint:
    q.check()
    if x.kind != "mdp":
        raise SynthesisError("MDP synthesis needs an MDP")
    parsed = []
    for o in q.objectives:
        if o.query is None:
            raise SynthesisError(f"objective {o.name} needs a query in the MDP setting")
        parsed.append(mc.parse_pctl(o.query))
    if len(parsed) == 1:
        target = parsed[0]
        direction = q.objectives[0].direction
    else:
        target, direction = _scalarise(x, q.objectives, parsed)
    try:
        policy, _ = mc.synth_optimal_policy(x, target, direction)
    except mc.InfiniteReward as err:
        raise SynthesisError(f"scalarisation infeasible: {err}") from None
    d = induced_dtmc(x, policy)
    values = tuple((o.name, float(mc.check(d, _plain(f)))) for o, f in zip(q.objectives, parsed))
    verdicts = tuple((c, bool(mc.check(d, _plain(mc.parse_pctl(c))))) for c in q.constraints)
    return SolutionPoint((), values, verdicts, policy=policy)


def _scalarise(x: ExplicitModel, objectives: Sequence[Objective], parsed):
    """Weighted sum of reward objectives sharing one objective kind and one direction."""
    if not all(isinstance(f, mc.Reward) for f in parsed):
        raise SynthesisError("scalarisation infeasible: only reward objectives can be combined")
    kinds = {f.objective for f in parsed}
    if len(kinds) != 1:
        raise SynthesisError("scalarisation infeasible: combined rewards need the same objective")
    dirs = {o.direction for o in objectives}
    if len(dirs) != 1:
        raise SynthesisError("scalarisation infeasible: combined rewards need the same direction")
    name = "__weighted"
    total = np.zeros(x.n_choices)
    for o, f in zip(objectives, parsed):
        struct = f.struct or next(iter(x.rewards))
        total += o.weight * x.rewards[struct]
    x.rewards[name] = total
    x._cache.clear()
    f0 = parsed[0]
    return mc.Reward(name, mc.Bound(dirs.pop(), None, None), f0.objective), objectives[0].direction


# ---------------------------------------------------------------- parametric setting


def candidate_space(q: SynthesisQuery) -> list[tuple[str, list]]:
    return sorted(q.domains.items())


def _space_size(space) -> int:
    n = 1
    for _, dom in space:
        n *= len(dom)
    return n


def evaluate_candidate(m: ProcessModel, params: Mapping[str, object], q: SynthesisQuery,
                       risk_structs: Sequence[str] | None = None) -> SolutionPoint:
    """Instantiate, expand, check constraints and compute the objective vector."""
    x = expand(m, {**q.constants, **params})
    constraints = [EARLY_DEADLOCK] + [c for c in q.constraints if c != EARLY_DEADLOCK]
    verdicts = tuple((c, bool(mc.check(x, mc.parse_pctl(c)))) for c in constraints)
    flags = []
    t = q.horizon
    if risk_structs is None:
        risk_structs = sorted(k for k in x.rewards if k.startswith("risk_"))

    def cum(struct: str) -> float:
        if struct not in x.rewards:
            raise SynthesisError(f"model lacks the reward structure {struct!r}")
        return float(mc.expected_reward(x, struct, mc.Cumulative(t))[x.initial])

    values = {}
    for o in q.objectives:
        if o.query is not None:
            values[o.name] = float(mc.check(x, mc.parse_pctl(o.query)))
        elif o.name == "productivity":
            den = cum(q.rewards["disruption"]) + cum(q.rewards["effort"])
            prod = cum(q.rewards["prod"])
            if den == 0:
                flags.append("zero-denominator")
                values[o.name] = prod
            else:
                values[o.name] = prod / den
        elif o.name == "nuisance":
            values[o.name] = cum(q.rewards["nuisance"])
        elif o.name == "risk":
            values[o.name] = sum(q.scales.get(s[5:], 1.0) * cum(s) for s in risk_structs)
        else:
            raise SynthesisError(f"objective {o.name} needs a query")
    objs = tuple((o.name, values[o.name]) for o in q.objectives)
    return SolutionPoint(tuple(sorted(params.items())), objs, verdicts, tuple(flags))


def synth_pdtmc(m: ProcessModel, q: SynthesisQuery, evaluate: Callable | None = None,
                progress: Callable[[int, SolutionPoint], None] | None = None) -> list[SolutionPoint]:
    """Nondominated feasible candidates of a parametric chain."""
    q.check()
    if q.setting != "pdtmc":
        raise SynthesisError("parametric synthesis needs setting pdtmc")
    if m.kind != "dtmc":
        raise SynthesisError("parametric synthesis needs a dtmc model")
    missing = [p for p in m.parameters if p not in q.domains and p not in q.constants]
    if missing:
        raise SynthesisError(f"no domain for parameter(s) {', '.join(missing)}")
    evaluate = evaluate or (lambda params: evaluate_candidate(m, params, q))
    space = candidate_space(q)
    names = [n for n, _ in space]
    cache: dict[tuple, SolutionPoint] = {}

    def run(combo: tuple) -> SolutionPoint:
        if combo not in cache:
            cache[combo] = evaluate(dict(zip(names, combo)))
            if progress is not None:
                progress(len(cache), cache[combo])
        return cache[combo]

    if _space_size(space) <= q.budget:
        for combo in itertools.product(*(dom for _, dom in space)):
            run(combo)
    else:
        _evolve(space, q, run, cache)
    directions = [o.direction for o in q.objectives]
    feasible = [p for p in cache.values() if p.feasible]
    if not feasible:
        last = next(iter(reversed(list(cache.values()))), None)
        failed = [c for c, ok in (last.verdicts if last else ()) if not ok]
        raise SynthesisError("no feasible candidate" + (f"; excluded by {failed[0]}" if failed else ""))
    return pareto_filter(feasible, directions)


def _evolve(space, q: SynthesisQuery, run, cache) -> None:
    """Seeded random sampling followed by (mu+lambda) mutation of the current front."""
    rng = np.random.default_rng(q.seed)
    sizes = [len(dom) for _, dom in space]
    directions = [o.direction for o in q.objectives]

    def combo_of(idx):
        return tuple(dom[i] for (_, dom), i in zip(space, idx))

    initial = max(1, q.budget // 2)
    while len(cache) < initial:
        run(combo_of([int(rng.integers(k)) for k in sizes]))
    stale = 0
    while len(cache) < q.budget and stale < 50 * q.budget:
        front = pareto_filter([p for p in cache.values() if p.feasible] or list(cache.values()), directions)
        parent = front[int(rng.integers(len(front)))]
        idx = [list(dom).index(dict(parent.params)[n]) for n, dom in space]
        j = int(rng.integers(len(sizes)))
        if sizes[j] > 1:
            idx[j] = (idx[j] + 1 + int(rng.integers(sizes[j] - 1))) % sizes[j]
        before = len(cache)
        run(combo_of(idx))
        stale = stale + 1 if len(cache) == before else 0


# ---------------------------------------------------------------- reports


def front_csv(points: Sequence[SolutionPoint]) -> str:
    """Front table: objective columns (risk, nuisance, productivity first when present) then parameters."""
    if not points:
        return ""
    names = [n for n, _ in points[0].objectives]
    order = [n for n in ("risk", "nuisance", "productivity") if n in names] + \
        [n for n in names if n not in ("risk", "nuisance", "productivity")]
    params = [n for n, _ in points[0].params]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(order + params + ["flags"])
    for p in points:
        obj = dict(p.objectives)
        par = dict(p.params)
        w.writerow([f"{obj[n]:.17g}" for n in order] + [_fmt(par[n]) for n in params] + [";".join(p.flags)])
    return buf.getvalue()


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def front_report(points: Sequence[SolutionPoint]) -> str:
    """Human-readable summary with the risk/productivity and nuisance/productivity projections."""
    lines = [f"{len(points)} nondominated feasible point(s)"]
    for title, a, b in (("risk vs productivity", "risk", "productivity"),
                        ("nuisance vs productivity", "nuisance", "productivity")):
        if not points or a not in dict(points[0].objectives) or b not in dict(points[0].objectives):
            continue
        lines.append("")
        lines.append(f"# projection: {title}")
        lines.append(f"{a},{b}")
        for p in sorted(points, key=lambda p: (p.objective(a), p.objective(b))):
            lines.append(f"{p.objective(a):.17g},{p.objective(b):.17g}")
    return "\n".join(lines) + "\n"
