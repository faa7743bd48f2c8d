"""Discrete-event surrogate of the work-cell twin.

Actors execute the process commands of the generated model (operator ``h_*``,
robot arm ``r_*``, spot welder ``w_*``) in token order, the operator following
a waypoint script with four wait slots.  After every actor action the
controller table is run through :func:`cobotsafe.controller.step`.  Random
branches (sensor misses, ignored notifications, mishaps) are drawn from a
seeded generator with rates that override the model constants.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .controller import ControllerTable, Livelock, RuntimeState, step
from .expr import Expr, Ident, LabelRef, evaluate, substitute
from .pgcl import ProcessModel
from .risk import PHASES, RiskModel


class TwinError(ValueError):
    pass


ACTORS = (("operator", "h_", 1), ("robot", "r_", 2), ("welder", "w_", 3))
RATE_CONSTANTS = {"mishap": "pr_mishap", "human_error": "pr_he", "sensor_failure": "pr_s"}
DEFAULT_RATES = {"mishap": 0.2, "human_error": 0.1, "sensor_failure": 0.05}

# operator waypoints; "wait" marks one of the four wait slots
DEFAULT_SCRIPT = ("wait", "h_reach", "wait", "h_withdraw", "wait", "h_enter", "wait", "h_toWelder", "h_exit")
# where each scripted move starts from
MOVE_SOURCES = {
    "h_reach": ("atTable",),
    "h_withdraw": ("sharedTbl",),
    "h_enter": ("between",),
    "h_toWelder": ("inCell",),
    "h_exit": ("inCell", "atWeldSpot"),
}
# with two operators the sensors follow the one ranked highest here; the
# sensor station sits at the shared workbench
DEFAULT_TRACKING = ("sharedTbl", "atWeldSpot", "inCell", "between", "atTable", "outside")

ROBOT_ACTIONS = ("r_moveToTable", "r_grabLeftWorkpiece", "r_moveToWelder", "r_placeWorkpieceRight", "r_return")
WELDER_ACTIONS = ("w_start", "w_weld", "w_finish")
ARM_POSITIONS = ("home", "atTable", "holding", "atWelder", "placed")
INTERFERENCES = ("reaching at workbench", "entering cell")
COVERED_PHASES = ("inact", "act", "mit1", "mit2", "mit", "res")


# ---------------------------------------------------------------- test vectors


def gen_test_vectors(n: int, total: float = 20.0, bounds: Sequence[float] | None = None,
                     seed: int = 0, slots: int = 4, max_tries: int = 100_000) -> list[tuple[float, ...]]:
    """``n`` wait vectors uniform on the simplex {w >= 0, sum w = total}, optionally capped per slot.

    Sorted uniform spacings give the uniform simplex; vectors breaking a cap are
    redrawn.  Slots capped at 0 are pinned to 0.
    """
    if total <= 0:
        raise TwinError("total must be positive")
    if bounds is not None:
        if len(bounds) != slots:
            raise TwinError(f"need {slots} bounds, got {len(bounds)}")
        if any(b < 0 for b in bounds) or sum(bounds) < total:
            raise TwinError("infeasible bounds: caps must be nonnegative and sum to at least the total")
    rng = np.random.default_rng(seed)
    free = [k for k in range(slots) if bounds is None or bounds[k] > 0]
    caps = None if bounds is None else np.array([bounds[k] for k in free], dtype=float)
    out = []
    for _ in range(n):
        for _ in range(max_tries):
            cuts = np.sort(rng.uniform(0.0, total, len(free) - 1))
            w = np.diff(np.concatenate(([0.0], cuts, [total])))
            if caps is None or np.all(w <= caps):
                break
        else:
            raise TwinError("bounds reject nearly every sample; giving up")
        vec = [0.0] * slots
        for k, v in zip(free, w):
            vec[k] = float(v)
        out.append(tuple(vec))
    return out


# ---------------------------------------------------------------- work cell


class Workcell:
    """The generated model's actors, formulas and constants, resolved for simulation."""

    def __init__(self, model: ProcessModel, rm: RiskModel, params: Mapping[str, object] | None = None):
        self.model = model
        self.rm = rm
        self.params = dict(params or {})
        self.base = model.constant_values(self.params)
        self.phase_vars = tuple(f.phase_var for f in rm.factors)
        self.var_names = tuple(v.name for v in model.variables if v.name not in ("turn", "token"))
        self.decls = {v.name: v for v in model.variables}
        self._compiled: dict[tuple, dict] = {}

    def values(self, rates: Mapping[str, float]) -> dict:
        vals = dict(self.base)
        for k, v in rates.items():
            name = RATE_CONSTANTS.get(k)
            if name is None:
                raise TwinError(f"unknown rate {k}")
            if name not in vals:
                raise TwinError(f"model has no constant {name} for rate {k}")
            vals[name] = float(v)
        return vals

    def actors(self, rates: Mapping[str, float]) -> dict:
        key = tuple(sorted(rates.items()))
        if key not in self._compiled:
            vals = self.values(rates)
            res = lambda e: self.model.resolve(e, vals)
            acts = {}
            for actor, prefix, turn in ACTORS:
                cmds = []
                for c in self.model.commands:
                    if c.label.startswith(prefix):
                        cmds.append((c.label, res(c.guard),
                                     [(res(u.prob), [(n, res(e)) for n, e in u.assigns if n not in ("turn", "token")])
                                      for u in c.updates]))
                acts[actor] = (turn, cmds)
            self._compiled[key] = acts
        return self._compiled[key]

    def expr(self, e: Expr | str, rates: Mapping[str, float] | None = None) -> Expr:
        if isinstance(e, str):
            e = Ident(e)
        return self.model.resolve(e, self.values(rates or {}))

    def env(self) -> dict:
        """Constants, formulas and labels for evaluating atoms on trace snapshots."""
        env: dict = dict(self.base)
        for name in self.model.formulas:
            env[name] = self.model.resolve(Ident(name), self.base)
        for name in self.model.labels:
            env[f'"{name}"'] = self.model.resolve(LabelRef(name), self.base)
        return env

    def initial(self) -> dict:
        return {v: self.decls[v].init for v in self.var_names}

    def const(self, name: str) -> int:
        return int(self.base[name])


# ---------------------------------------------------------------- scenarios and traces


@dataclass(frozen=True)
class Record:
    timestamp: float
    actor: str
    event: str
    snapshot: tuple[tuple[str, int], ...]

    def get(self, name: str):
        return dict(self.snapshot)[name]

    def line(self) -> str:
        snap = ",".join(f"{k}={int(v)}" for k, v in self.snapshot)
        return f"{_fmt_ms(self.timestamp)} | {self.actor} | {self.event} | {snap}"


def _fmt_ms(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


@dataclass
class TimedTrace:
    records: list[Record] = field(default_factory=list)

    def add(self, t: float, actor: str, event: str, state: Mapping[str, int]) -> None:
        snap = tuple((k, int(v)) for k, v in state.items())
        self.records.append(Record(float(t), actor, event, snap))

    def text(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)

    def events(self, name: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.event == name]

    def __len__(self) -> int:
        return len(self.records)


def parse_trace(text: str) -> TimedTrace:
    tr = TimedTrace()
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 4:
            raise TwinError(f"line {n}: expected 'timestamp_ms | actor | event | var=value,...'")
        snap = []
        if parts[3]:
            for item in parts[3].split(","):
                k, _, v = item.partition("=")
                snap.append((k.strip(), int(v)))
        tr.records.append(Record(float(parts[0]), parts[1], parts[2], tuple(snap)))
    return tr


@dataclass(frozen=True)
class Scenario:
    cell: Workcell
    table: ControllerTable
    waits: tuple[float, ...] = (5.0, 5.0, 5.0, 5.0)
    seed: int = 0
    step_ms: float = 50.0
    cycle_ms: float = 0.25
    horizon_ms: float = 60_000.0
    budget_s: float = 20.0
    rates: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    script: tuple[str, ...] = DEFAULT_SCRIPT
    second_operator: float | None = None  # offset in seconds
    tracking: tuple[str, ...] = DEFAULT_TRACKING
    null_operator: bool = False

    def __post_init__(self):
        if len(self.waits) != self.script.count("wait"):
            raise TwinError(f"wait vector has {len(self.waits)} slots, script has {self.script.count('wait')}")
        if any(w < 0 for w in self.waits):
            raise TwinError("waits must be nonnegative")
        if abs(sum(self.waits) - self.budget_s) > 1e-6:
            raise TwinError(f"waits sum to {sum(self.waits)}, expected {self.budget_s}")
        unknown = [v for v in self.table.monitored + self.table.controlled + self.table.phases
                   if v not in self.cell.var_names]
        if unknown:
            raise TwinError("controller table references unknown variable(s) " + ", ".join(unknown))


class _Operator:
    def __init__(self, script: Sequence[str], waits: Sequence[float], start_ms: float, pos: int):
        self.script = list(script)
        self.waits = list(waits)
        self.pc = 0
        self.slot = 0
        self.wait_until: float | None = None
        self.start_ms = start_ms
        self.pos = pos
        self.rng_det = 0

    def move(self, now: float) -> str | None:
        """Scripted move due now, or None to wait."""
        if now < self.start_ms:
            return None
        while self.pc < len(self.script) and self.script[self.pc] == "wait":
            if self.wait_until is None:
                self.wait_until = now + 1000.0 * self.waits[self.slot]
            if now < self.wait_until:
                return None
            self.wait_until = None
            self.slot += 1
            self.pc += 1
        return self.script[self.pc] if self.pc < len(self.script) else None

    def resync(self, pos_name: str) -> None:
        """After an unscripted move, skip to the next step that starts from the new position."""
        k = self.pc
        while k < len(self.script):
            step_ = self.script[k]
            if step_ != "wait" and pos_name in MOVE_SOURCES.get(step_, ()):
                break
            k += 1
        skipped = self.script[self.pc:k].count("wait")
        self.slot += skipped
        self.wait_until = None
        self.pc = k


def _draw(rng: np.random.Generator, probs: Sequence[float]) -> int:
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def run_scenario(s: Scenario) -> TimedTrace:
    """Simulate until the process is final (with the controller settled) or the horizon passes."""
    cell = s.cell
    acts = cell.actors(s.rates)
    rng = np.random.default_rng(s.seed)
    state = cell.initial()
    env_consts = cell.values(s.rates)
    final = cell.expr("final", s.rates)
    pos_names = {cell.const(p): p for p in ("atTable", "sharedTbl", "between", "inCell", "atWeldSpot", "outside")}
    outside = cell.const("outside")
    rank = {cell.const(p): i for i, p in enumerate(s.tracking)}
    ops = []
    if s.null_operator:
        state["hstep"] = outside
    else:
        ops.append(_Operator(s.script, s.waits, 0.0, state["hstep"]))
        if s.second_operator is not None:
            ops.append(_Operator(s.script, s.waits, 1000.0 * s.second_operator, state["hstep"]))
    for op in ops:
        op.rng_det = state["rngDet"]
    mis = cell.const("mis")
    trace = TimedTrace()
    rt = RuntimeState.initial(s.table, {p: state[p] for p in s.table.phases})
    now = 0.0

    def snapshot() -> dict:
        snap = dict(state)
        if len(ops) > 1:
            for k, op in enumerate(ops, 1):
                snap[f"hpos{k}"] = op.pos
        return snap

    busy = False

    def control(t: float) -> bool:
        nonlocal rt, busy
        try:
            fired, rt = step(s.table, rt, state)
        except Livelock as e:
            for label, upd in e.fired:
                state.update(dict(upd))
                trace.add(t + s.cycle_ms, "controller", label, snapshot())
            trace.add(t + s.cycle_ms, "controller", "livelock", snapshot())
            return False
        for label, upd in fired:
            state.update(dict(upd))
            trace.add(t + s.cycle_ms, "controller", label, snapshot())
        busy = bool(fired)
        return True

    def run_command(turn: int, cmds, label: str | None, view: dict) -> tuple[str, dict] | None:
        env = {**view, "turn": turn}
        enabled = [c for c in cmds if (label is None or c[0] == label) and evaluate(c[1], env)]
        if not enabled:
            return None
        name, _, updates = enabled[0]
        probs = [float(evaluate(p, env)) for p, _ in updates]
        _, assigns = updates[_draw(rng, probs)]
        return name, {n: int(evaluate(e, env)) for n, e in assigns}

    def sense() -> None:
        if ops:
            tracked = max(ops, key=lambda o: -rank.get(o.pos, len(rank)))
            state["hstep"] = tracked.pos
            state["rngDet"] = tracked.rng_det

    trace.add(0.0, "twin", "start", snapshot())
    if not control(0.0):
        return trace
    for token in itertools.cycle(range(3)):
        # stop once the process is final and the controller has settled
        if now >= s.horizon_ms or (not busy and evaluate(final, state)):
            break
        actor, _, turn = ACTORS[token]
        _, cmds = acts[actor]
        now += s.step_ms
        if actor == "operator":
            if not ops:
                continue
            for op in ops:
                view = {**state, "hstep": op.pos, "rngDet": op.rng_det}
                leave = run_command(turn, cmds, "h_leave", view)
                if leave is not None:
                    name, upd = leave
                else:
                    due = op.move(now)
                    step_ = run_command(turn, cmds, due, view) if due else None
                    if step_ is None:
                        step_ = run_command(turn, cmds, "h_wait", view)
                    if step_ is None:
                        continue
                    name, upd = step_
                before = op.pos
                op.pos = upd.get("hstep", op.pos)
                op.rng_det = upd.get("rngDet", op.rng_det)
                if name == "h_leave" and op.pos != before:
                    op.resync(pos_names[op.pos])
                elif name not in ("h_wait", "h_leave"):
                    op.pc += 1
                sense()
                trace.add(now, actor, name, snapshot())
        else:
            # with several operators every one of them can be hurt
            views = [{**state, "hstep": op.pos} for op in ops] if len(ops) > 1 else [state]
            result = None
            for view in views:
                result = run_command(turn, cmds, None, view)
                if result is None or any(result[1].get(p) == mis for p in cell.phase_vars):
                    break
            if result is None:
                continue
            name, upd = result
            state.update(upd)
            hit = [p for p in cell.phase_vars if upd.get(p) == mis]
            trace.add(now, actor, name, snapshot())
            if hit:
                trace.add(now, actor, "mishap", snapshot())
        if not control(now):
            break
    return trace


# ---------------------------------------------------------------- coverage


@dataclass
class CoverageReport:
    cells: dict[tuple[str, str], bool]
    phases: dict[str, set[str]]

    @property
    def situation_ratio(self) -> float:
        return sum(self.cells.values()) / len(self.cells) if self.cells else 0.0

    @property
    def phase_ratio(self) -> float:
        need = len(COVERED_PHASES) * len(self.phases)
        got = sum(len(set(COVERED_PHASES) & v) for v in self.phases.values())
        return got / need if need else 0.0

    @property
    def full(self) -> bool:
        return bool(self.cells) and all(self.cells.values()) and self.phase_ratio == 1.0

    def missing(self) -> list[str]:
        out = [f"{r} x {i}" for (r, i), v in self.cells.items() if not v]
        for f, seen in self.phases.items():
            out += [f"{f}:{p}" for p in COVERED_PHASES if p not in seen]
        return out


def situation_rows() -> list[str]:
    return ([f"robot:{a}" for a in ROBOT_ACTIONS] + [f"welder:{a}" for a in WELDER_ACTIONS]
            + [f"arm:{p}" for p in ARM_POSITIONS])


def situation_coverage(traces: Sequence[TimedTrace], phase_vars: Sequence[str] = ("HCp", "HRWp", "HSp")) -> CoverageReport:
    """Which (machine situation, operator interference) pairs the traces exercise.

    A situation is the last robot action, the last welder action or the arm
    position at the moment the operator reaches onto the workbench or enters
    the cell.  Phase coverage records the refined phases each factor visited.
    """
    cells = {(r, i): False for r in situation_rows() for i in INTERFERENCES}
    phases = {p[:-1] if p.endswith("p") else p: set() for p in phase_vars}
    interference = {"h_reach": INTERFERENCES[0], "h_enter": INTERFERENCES[1]}
    for tr in traces:
        robot = welder = None
        for r in tr.records:
            snap = dict(r.snapshot)
            for p in phase_vars:
                if p in snap and 0 <= snap[p] < len(PHASES):
                    phases[p[:-1] if p.endswith("p") else p].add(PHASES[snap[p]])
            if r.actor == "robot" and r.event in ROBOT_ACTIONS:
                robot = r.event
            elif r.actor == "welder" and r.event in WELDER_ACTIONS:
                welder = r.event
            elif r.actor == "operator" and r.event in interference:
                kind = interference[r.event]
                if robot is not None:
                    cells[(f"robot:{robot}", kind)] = True
                if welder is not None:
                    cells[(f"welder:{welder}", kind)] = True
                rs = snap.get("rstep")
                if rs is not None and 0 <= rs < len(ARM_POSITIONS):
                    cells[(f"arm:{ARM_POSITIONS[rs]}", kind)] = True
    if not traces:
        phases = {k: set() for k in phases}
    return CoverageReport(cells, phases)


# ---------------------------------------------------------------- misuse analysis


def unmitigated_causes(trace: TimedTrace, cell: Workcell, factor: str, position_vars: Sequence[str],
                       d: float = 0.25) -> list[int]:
    """Indices where ``factor``'s cause holds for some operator, the factor is
    inactive, and it is not activated within ``d`` ms.

    ``position_vars`` name the true operator positions in the snapshots.
    """
    cause = cell.expr(f"RCE_{factor}")
    per_op = [substitute(cause, {"hstep": Ident(pv)}) for pv in position_vars]
    phase = f"{factor}p"
    inact, act = cell.const("inact"), cell.const("act")
    recs = trace.records
    out = []
    for i, r in enumerate(recs):
        snap = dict(r.snapshot)
        if snap.get(phase) != inact:
            continue
        if not any(pv in snap and evaluate(c, snap) for pv, c in zip(position_vars, per_op)):
            continue
        j = i
        while j < len(recs) and recs[j].timestamp - r.timestamp <= d and recs[j].get(phase) != act:
            j += 1
        if j == len(recs) or recs[j].timestamp - r.timestamp > d:
            out.append(i)
    return out


# ---------------------------------------------------------------- scenario files


def parse_scenario_file(text: str) -> dict:
    """Key/value scenario description; see the bundled ``workcell/scenario.txt``."""
    out: dict = {"rates": dict(DEFAULT_RATES), "config": {}}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, *args = body.split()
        try:
            if key in ("model", "risk"):
                out[key] = args[0]
            elif key in ("seed", "vectors"):
                out[key] = int(args[0])
            elif key in ("step_ms", "cycle_ms", "horizon_ms", "total", "second_operator"):
                out[key] = float(args[0])
            elif key == "waits":
                out[key] = tuple(float(a) for a in args)
            elif key == "bounds":
                out[key] = tuple(float(a) for a in args)
            elif key == "script":
                out[key] = tuple(args)
            elif key == "tracking":
                out[key] = tuple(args)
            elif key == "rate":
                if args[0] not in RATE_CONSTANTS:
                    raise TwinError(f"unknown rate {args[0]}")
                out["rates"][args[0]] = float(args[1])
            elif key == "config":
                for a in args:
                    k, _, v = a.partition("=")
                    out["config"][k] = float(v) if "." in v else int(v)
            else:
                raise TwinError(f"unknown key {key}")
        except (IndexError, ValueError) as e:
            raise TwinError(f"line {n}: {e}") from None
    return out


def scenario_from(spec: Mapping, cell: Workcell, table: ControllerTable, waits=None, seed=None) -> Scenario:
    kw = {}
    for k in ("step_ms", "cycle_ms", "horizon_ms", "script", "second_operator", "tracking"):
        if k in spec:
            kw[k] = spec[k]
    if "total" in spec:
        kw["budget_s"] = spec["total"]
    w = waits if waits is not None else spec.get("waits", (5.0, 5.0, 5.0, 5.0))
    return Scenario(cell, table, tuple(w), seed if seed is not None else spec.get("seed", 0),
                    rates=dict(spec.get("rates", DEFAULT_RATES)), **kw)


def with_waits(s: Scenario, waits: Sequence[float], seed: int | None = None) -> Scenario:
    return replace(s, waits=tuple(waits), seed=s.seed if seed is None else seed)
