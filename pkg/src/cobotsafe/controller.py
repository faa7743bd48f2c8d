"""Executable controller tables extracted from a resolved (chain) model.

A rule says: in this process situation and this risk state, emit these
assignments to controlled variables and move the risk phases.  ``step`` runs
the rules the way the controller runs in the model: repeatedly, until it
passes the turn back to the process or nothing applies.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .expr import Binary, Ident, Lit, conj, identifiers, to_text
from .pgcl import ExplicitModel, ProcessModel
from .risk import PHASES, RiskModel

CONTROLLER_PREFIXES = ("si_", "s_")
MAX_RULES_PER_STEP = 1000


class ControllerError(ValueError):
    pass


class Livelock(ControllerError):
    """The rules cycle without passing the turn (e.g. on a stale sensor reading)."""

    def __init__(self, fired):
        super().__init__("controller livelock: rules cycle without passing the turn")
        self.fired = fired


@dataclass(frozen=True)
class Rule:
    label: str
    process: tuple[tuple[str, int], ...]
    risk: tuple[tuple[str, int], ...]
    update: tuple[tuple[str, int], ...]
    passes: bool = False

    def enabled(self, values: Mapping[str, int]) -> bool:
        return all(values.get(v) == k for v, k in self.process) and all(values.get(v) == k for v, k in self.risk)


@dataclass
class ControllerTable:
    monitored: tuple[str, ...]
    controlled: tuple[str, ...]
    phases: tuple[str, ...]
    rules: list[Rule] = field(default_factory=list)
    categories: dict[str, tuple[tuple[str, int], ...]] = field(default_factory=dict)

    def matching(self, values: Mapping[str, int]) -> list[Rule]:
        return [r for r in self.rules if r.enabled(values)]


@dataclass(frozen=True)
class RuntimeState:
    """Last quiescent (monitored snapshot, risk state) pair and the current risk phases."""

    phases: tuple[tuple[str, int], ...]
    last: tuple | None = None

    @staticmethod
    def initial(table: ControllerTable, phases: Mapping[str, int] | None = None) -> "RuntimeState":
        phases = phases or {}
        return RuntimeState(tuple((p, int(phases.get(p, 0))) for p in table.phases))


def _is_controller(label: str) -> bool:
    return label.startswith(CONTROLLER_PREFIXES)


def _guard_vars(m: ProcessModel, label: str, values: Mapping, cache: dict) -> set[str]:
    if label not in cache:
        names = set()
        var_names = {v.name for v in m.variables}
        for c in m.commands:
            if c.label == label:
                names |= identifiers(m.resolve(c.guard, values)) & var_names
        cache[label] = names
    return cache[label]


def _assigned_vars(m: ProcessModel, label: str, cache: dict) -> set[str]:
    key = ("assigned", label)
    if key not in cache:
        cache[key] = {n for c in m.commands if c.label == label for u in c.updates for n, _ in u.assigns}
    return cache[key]


def extract_controller(d: ExplicitModel, m: ProcessModel, rm: RiskModel,
                       turn_var: str = "turn", token_var: str = "token") -> ControllerTable:
    """Controller rules from the controller transitions of a chain over the generated model."""
    if d.kind != "dtmc":
        raise ControllerError("extraction needs a chain (resolved model)")
    phases = tuple(f.phase_var for f in rm.factors)
    skip = {turn_var, token_var, *phases}
    var_names = list(d.var_names)
    index = {v: i for i, v in enumerate(var_names)}
    ctrl_cmds = [c for c in m.commands if _is_controller(c.label)]
    controlled = []
    for c in ctrl_cmds:
        for u in c.updates:
            for n, _ in u.assigns:
                if n not in skip and n not in controlled:
                    controlled.append(n)
    monitored_set = set()
    for c in ctrl_cmds:
        monitored_set |= identifiers(m.resolve(c.guard, d.values)) & set(var_names)
    monitored = tuple(v for v in var_names if v in monitored_set and v not in skip)
    controlled_t = tuple(v for v in var_names if v in controlled)
    guard_cache: dict[str, set[str]] = {}
    seen: dict[tuple, Rule] = {}
    rules: list[Rule] = []
    for s in range(d.n_states):
        lo, hi = d.choice_start[s], d.choice_start[s + 1]
        for c in range(lo, hi):
            label = d.choice_labels[c]
            if "|" in label and any(_is_controller(p) for p in label.split("|")):
                raise ControllerError(f"state {s} has unresolved controller choice {label}")
            if not _is_controller(label):
                continue
            succ = d.successors(c)
            if len(succ) != 1:
                raise ControllerError(f"controller transition [{label}] in state {s} branches probabilistically")
            src = d.states[s]
            dst = d.states[succ[0][0]]
            read = _guard_vars(m, label, d.values, guard_cache)
            proc = tuple((v, int(src[index[v]])) for v in monitored if v in read)
            risk = tuple((v, int(src[index[v]])) for v in phases if v in read)
            written = _assigned_vars(m, label, guard_cache)
            upd = tuple((v, int(dst[index[v]])) for v in controlled_t + phases if v in written)
            passes = turn_var in index and dst[index[turn_var]] != src[index[turn_var]]
            rule = Rule(label, proc, risk, upd, bool(passes))
            key = (proc, risk)
            prev = seen.get(key)
            if prev is not None:
                if prev != rule:
                    raise ControllerError(f"conflicting rules [{prev.label}] and [{label}] for one situation")
                continue
            seen[key] = rule
            rules.append(rule)
    cats = {}
    for axis, mat in rm.distances.items():
        consts = d.values if d.values else {}
        pairs = tuple((c, int(consts[c])) for c in mat.categories if c in consts)
        if pairs:
            cats[axis] = pairs
    cats["phase"] = tuple((p, i) for i, p in enumerate(PHASES))
    return ControllerTable(monitored, controlled_t, phases, rules, cats)


def step(t: ControllerTable, rt: RuntimeState, snapshot: Mapping[str, int]) -> tuple[list[tuple[str, tuple]], RuntimeState]:
    """Run the controller on one process snapshot.

    Returns the fired rules as (label, assignments) pairs and the new runtime
    state.  Nothing fires when the snapshot and risk state equal the last
    quiescent pair.
    """
    missing = [v for v in t.monitored if v not in snapshot]
    if missing:
        raise ControllerError(f"snapshot lacks monitored variable(s) {', '.join(missing)}")
    values = {v: int(snapshot[v]) for v in t.monitored}
    for v in t.controlled:
        if v in snapshot:
            values[v] = int(snapshot[v])
    values.update(dict(rt.phases))
    key = (tuple(values[v] for v in t.monitored), rt.phases)
    if rt.last is not None and rt.last == key:
        return [], rt
    fired: list[tuple[str, tuple]] = []
    quiescent = True
    visited = set()
    for _ in range(MAX_RULES_PER_STEP):
        rules = t.matching(values)
        if not rules:
            break
        here = tuple(sorted(values.items()))
        if here in visited:
            raise Livelock(fired)
        visited.add(here)
        if len(rules) > 1:
            raise ControllerError("rules " + ", ".join(f"[{r.label}]" for r in rules) + " are enabled together")
        r = rules[0]
        changed = any(values.get(v) != k for v, k in r.update)
        fired.append((r.label, r.update))
        values.update(dict(r.update))
        if r.passes:
            quiescent = not changed
            break
    else:
        raise ControllerError("controller did not settle")
    phases = tuple((p, values[p]) for p, _ in rt.phases)
    last = (tuple(values[v] for v in t.monitored), phases) if quiescent else None
    return fired, RuntimeState(phases, last)


# ---------------------------------------------------------------- bisimulation replay


def _episode(d: ExplicitModel, s: int, turn_i: int, watched: Sequence[int]) -> tuple[list[tuple], int, bool]:
    """Controlled values along the model's controller run from ``s``.

    Returns (sequence, end state, livelocked).
    """
    seq = []
    cur = s
    seen = {s}
    for _ in range(MAX_RULES_PER_STEP):
        c = d.choice_start[cur]
        if d.choice_start[cur + 1] == c or d.states[cur][turn_i] != 0:
            break
        label = d.choice_labels[c]
        nxt = d.successors(c)
        if not _is_controller(label) or len(nxt) != 1:
            break
        t = nxt[0][0]
        seq.append(tuple(d.states[t][i] for i in watched))
        if t in seen:
            return seq, cur, True
        seen.add(t)
        cur = t
        if d.states[t][turn_i] != 0:
            break
    return seq, cur, False


def _compress(seq: Sequence[tuple], start: tuple) -> list[tuple]:
    out = []
    prev = start
    for v in seq:
        if v != prev:
            out.append(v)
        prev = v
    return out


def bisimulation_check(d: ExplicitModel, t: ControllerTable, max_len: int = 40,
                       turn_var: str = "turn") -> tuple[bool, str | None, int]:
    """Replay all controller-relevant paths up to ``max_len`` transitions through ``step``.

    Returns (ok, first mismatch description, number of explored (state, runtime) pairs).
    """
    idx = {v: i for i, v in enumerate(d.var_names)}
    turn_i = idx[turn_var]
    watched = [idx[v] for v in t.controlled + t.phases]
    rt0 = RuntimeState.initial(t, {p: d.states[d.initial][idx[p]] for p in t.phases})
    frontier = deque([(d.initial, rt0, 0)])
    visited = {(d.initial, rt0)}
    while frontier:
        s, rt, depth = frontier.popleft()
        if depth >= max_len:
            continue
        state = d.states[s]
        if state[turn_i] == 0:
            model_seq, end, stuck = _episode(d, s, turn_i, watched)
            snap = {v: state[idx[v]] for v in t.monitored + t.controlled}
            rt_in = RuntimeState(tuple((p, state[idx[p]]) for p in t.phases), rt.last)
            try:
                fired, rt_out = step(t, rt_in, snap)
                looped = False
            except Livelock as e:
                fired, rt_out, looped = e.fired, rt_in, True
            if looped != stuck:
                return False, f"state {s}: livelock in {'model' if stuck else 'table'} only", len(visited)
            vals = {**snap, **dict(rt_in.phases)}
            table_seq = []
            for _, upd in fired:
                vals.update(dict(upd))
                table_seq.append(tuple(vals[v] for v in t.controlled + t.phases))
            start = tuple(state[i] for i in watched)
            if _compress(model_seq, start) != _compress(table_seq, start):
                return False, f"state {s}: model {model_seq} vs table {table_seq}", len(visited)
            if stuck:
                continue
            # follow the model through the controller run, then branch on the process
            if model_seq:
                nexts = [(end, len(model_seq))]
            else:
                nexts = [(tt, 1) for c in range(d.choice_start[s], d.choice_start[s + 1]) for tt, _ in d.successors(c)]
            for nt, k in nexts:
                item = (nt, rt_out)
                if item not in visited:
                    visited.add(item)
                    frontier.append((nt, rt_out, depth + k))
        else:
            for c in range(d.choice_start[s], d.choice_start[s + 1]):
                for nt, _ in d.successors(c):
                    item = (nt, rt)
                    if item not in visited:
                        visited.add(item)
                        frontier.append((nt, rt, depth + 1))
    return True, None, len(visited)


# ---------------------------------------------------------------- overhead


@dataclass(frozen=True)
class Overhead:
    d_min: dict[str, float]
    d_max: dict[str, float]
    sequential_slot: float
    parallel_rate: float


def overhead_estimate(factors: Sequence, durations: Mapping, x: float = 0.0) -> Overhead:
    """Controller timing bounds from per-action durations.

    ``durations`` maps action kinds (mit_sm, mit_a, mit, res_sm, res_a, mit_sf,
    res_sf, end) to seconds, either once for all factors or per factor id.
    ``end`` is the detection duration.
    """
    ids = [getattr(f, "id", f) for f in factors]

    def dur(fid: str, kind: str) -> float:
        table = durations.get(fid, durations) if isinstance(durations.get(fid), Mapping) else durations
        v = float(table.get(kind, 0.0))
        if v < 0:
            raise ControllerError("durations must be nonnegative")
        return v

    d_min = {f: sum(dur(f, k) for k in ("mit_sm", "mit_a", "mit", "res_sm", "res_a")) for f in ids}
    d_max = {f: d_min[f] + x * dur(f, "mit_sf") + dur(f, "res_sf") for f in ids}
    ends = [dur(f, "end") for f in ids]
    seq = float(sum(ends))
    slowest = max(ends) if ends else 0.0
    rate = 1.0 / slowest if slowest > 0 else float("inf")
    return Overhead(d_min, d_max, seq, rate)


# ---------------------------------------------------------------- table files


def _eqs(pairs) -> str:
    if not pairs:
        return "true"
    return to_text(conj(*(Binary("=", Ident(v), Lit(k)) for v, k in pairs)))


def format_table(t: ControllerTable) -> str:
    lines = ["controller",
             "monitored " + " ".join(t.monitored),
             "controlled " + " ".join(t.controlled),
             "phases " + " ".join(t.phases)]
    for axis, pairs in t.categories.items():
        lines.append(f"category {axis} " + " ".join(f"{c}={v}" for c, v in pairs))
    for r in t.rules:
        upd = " & ".join(f"{v}'={k}" for v, k in r.update) or "-"
        lines.append(f"rule {r.label} | {_eqs(r.process)} | {_eqs(r.risk)} | {upd} | {'pass' if r.passes else 'stay'}")
    return "\n".join(lines) + "\n"


def _parse_eqs(text: str) -> tuple[tuple[str, int], ...]:
    text = text.strip()
    if text == "true":
        return ()
    out = []
    for part in text.split("&"):
        name, _, value = part.partition("=")
        if not _ or not name.strip().isidentifier():
            raise ControllerError(f"malformed equality {part.strip()!r}")
        out.append((name.strip(), int(value)))
    return tuple(out)


def parse_table(text: str) -> ControllerTable:
    header: dict[str, tuple[str, ...]] = {}
    cats = {}
    rules = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "controller":
        raise ControllerError("controller table must start with 'controller'")
    for ln in lines[1:]:
        head, _, rest = ln.partition(" ")
        if head in ("monitored", "controlled", "phases"):
            header[head] = tuple(rest.split())
        elif head == "category":
            axis, *pairs = rest.split()
            cats[axis] = tuple((c, int(v)) for c, v in (p.split("=") for p in pairs))
        elif head == "rule":
            fields = [f.strip() for f in rest.split("|")]
            if len(fields) != 5:
                raise ControllerError(f"malformed rule line: {ln}")
            label, proc, risk, upd, mode = fields
            upd_pairs = () if upd == "-" else tuple(
                (a.strip().rstrip("'"), int(b)) for a, b in (u.split("'=") for u in upd.split("&")))
            rules.append(Rule(label, _parse_eqs(proc), _parse_eqs(risk), upd_pairs, mode == "pass"))
        else:
            raise ControllerError(f"unknown table line: {ln}")
    return ControllerTable(header.get("monitored", ()), header.get("controlled", ()), header.get("phases", ()),
                           rules, cats)
