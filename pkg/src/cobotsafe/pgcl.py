"""Guarded-command process models and their explicit-state expansion.

A model is a flat list of declarations and commands::

    const int far = 0;
    const double alarm;              // undefined: a parameter
    x : [0..3] init 0;
    formula busy = x>0;
    label "done" = x=3;
    [step] x<3 -> 0.5:(x'=x+1) + 0.5:true;
    rewards "cost" [step] true : 1; endrewards

``expand`` turns a model plus parameter values into an ``ExplicitModel``
(an MDP, or a DTMC for models declared with the ``dtmc`` keyword, where
simultaneously enabled commands are resolved by uniform random choice).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .expr import (
    BOOL, COMPILE_NAMESPACE, DOUBLE, FALSE, INT, TRUE, Binary, Call, Expr, ExprError, Ident, LabelRef,
    Ite, Lit, Parser, Unary, Value, VarDecl, conj, disj, evaluate, identifiers, simplify, substitute,
    to_python, to_text, tokenize, type_of,
)

DEFAULT_STATE_CAP = 5_000_000
PROB_TOL = 1e-9


class ModelError(ValueError):
    """Structural or semantic error in a process model or during expansion."""


@dataclass(frozen=True)
class Const:
    name: str
    type: str
    value: Expr | None = None


@dataclass(frozen=True)
class Update:
    prob: Expr
    assigns: tuple[tuple[str, Expr], ...]


@dataclass(frozen=True)
class Command:
    label: str
    guard: Expr
    updates: tuple[Update, ...]


@dataclass(frozen=True)
class RewardItem:
    label: str | None
    guard: Expr
    value: Expr


@dataclass(frozen=True)
class RewardStruct:
    name: str
    items: tuple[RewardItem, ...]


@dataclass
class ProcessModel:
    kind: str = "mdp"
    constants: list[Const] = field(default_factory=list)
    variables: list[VarDecl] = field(default_factory=list)
    formulas: dict[str, Expr] = field(default_factory=dict)
    labels: dict[str, Expr] = field(default_factory=dict)
    commands: list[Command] = field(default_factory=list)
    rewards: list[RewardStruct] = field(default_factory=list)

    @property
    def parameters(self) -> list[str]:
        return [c.name for c in self.constants if c.value is None]

    def var_index(self) -> dict[str, int]:
        return {v.name: i for i, v in enumerate(self.variables)}

    def decls(self) -> dict[str, str]:
        """Identifier (and quoted label) types, for expression type checking."""
        table = {c.name: c.type for c in self.constants}
        table.update({v.name: v.kind for v in self.variables})
        for name in self.formulas:
            table[name] = self._formula_type(name, table, ())
        for name in self.labels:
            table[f'"{name}"'] = BOOL
        table['"deadlock"'] = BOOL
        table['"init"'] = BOOL
        return table

    def _formula_type(self, name: str, table: dict, stack: tuple) -> str:
        if name in stack:
            raise ModelError(f"cyclic formula definition: {' -> '.join(stack + (name,))}")
        body = self.formulas[name]
        for dep in identifiers(body):
            if dep in self.formulas and dep not in table:
                table[dep] = self._formula_type(dep, table, stack + (name,))
        return type_of(body, table)

    def reward_names(self) -> list[str]:
        return [r.name for r in self.rewards]

    def resolve(self, e: Expr, values: Mapping[str, Value]) -> Expr:
        """Inline formulas and labels and substitute constant values, then fold."""
        binding: dict[str, Expr] = {k: Lit(v) for k, v in values.items()}
        seen: set[str] = set()

        def expand_formula(name: str) -> Expr:
            if name in seen:
                raise ModelError(f"cyclic formula definition involving {name}")
            seen.add(name)
            out = go(self.formulas[name])
            seen.discard(name)
            return out

        def go(x: Expr) -> Expr:
            ids = identifiers(x)
            local = {}
            for name in ids:
                if name in binding:
                    local[name] = binding[name]
                elif name in self.formulas:
                    local[name] = expand_formula(name)
            labels = _label_refs(x)
            for name in labels:
                if name in self.labels:
                    local[f'"{name}"'] = go(self.labels[name])
            return substitute(x, local) if local else x

        return simplify(go(e))

    def constant_values(self, params: Mapping[str, Value] | None = None) -> dict[str, Value]:
        """Evaluate all constants in declaration order with parameters bound."""
        params = dict(params or {})
        values: dict[str, Value] = {}
        for c in self.constants:
            if c.value is None:
                if c.name not in params:
                    raise ModelError(f"parameter {c.name} is not bound")
                raw = params.pop(c.name)
            else:
                raw = evaluate(self.resolve(c.value, values), {})
            values[c.name] = _coerce(raw, c.type, c.name)
        if params:
            raise ModelError(f"unknown parameters: {', '.join(sorted(params))}")
        return values


def _label_refs(e: Expr) -> set[str]:
    if isinstance(e, LabelRef):
        return {e.name}
    if isinstance(e, Unary):
        return _label_refs(e.arg)
    if isinstance(e, Binary):
        return _label_refs(e.lhs) | _label_refs(e.rhs)
    if isinstance(e, Ite):
        return _label_refs(e.cond) | _label_refs(e.then) | _label_refs(e.other)
    if isinstance(e, Call):
        return set().union(*(_label_refs(a) for a in e.args))
    return set()


def _defined(m: ProcessModel) -> dict[str, Value]:
    """Values of the constants of ``m`` that do not depend on parameters."""
    values: dict[str, Value] = {}
    for c in m.constants:
        if c.value is None:
            continue
        try:
            values[c.name] = _coerce(evaluate(m.resolve(c.value, values), {}), c.type, c.name)
        except (ExprError, ModelError, KeyError):
            pass
    return values


def _coerce(value: Value, type_: str, name: str) -> Value:
    if type_ == BOOL:
        if not isinstance(value, bool):
            raise ModelError(f"constant {name} must be bool")
        return value
    if type_ == INT:
        if isinstance(value, bool) or float(value) != int(value):
            raise ModelError(f"constant {name} must be an integer, got {value}")
        return int(value)
    if isinstance(value, bool):
        raise ModelError(f"constant {name} must be numeric")
    return float(value)


# ---------------------------------------------------------------- parsing


class _ModelParser(Parser):
    def literal(self, m: ProcessModel) -> Value:
        """A constant expression over the constants defined so far."""
        tok = self.tok
        e = self.additive() if tok.text not in ("true", "false") else self.primary()
        try:
            folded = simplify(substitute(e, {k: Lit(v) for k, v in _defined(m).items()}))
        except (ModelError, ExprError) as err:
            raise self.error(str(err), tok) from None
        if not isinstance(folded, Lit):
            raise self.error("expected a constant expression", tok)
        return folded.value

    def assignments(self) -> tuple[tuple[str, Expr], ...]:
        if self.accept("true"):
            return ()
        out = []
        while True:
            self.expect("(")
            name = self.expect_kind("id").text
            self.expect("'")
            self.expect("=")
            out.append((name, self.expression()))
            self.expect(")")
            if not self.accept("&"):
                return tuple(out)

    def updates(self) -> tuple[Update, ...]:
        # a lone assignment list has implicit probability 1
        start = self.i
        if self.at("(", "true"):
            try:
                assigns = self.assignments()
                if self.at(";"):
                    return (Update(Lit(1), assigns),)
            except ExprError:
                pass
            self.i = start
        out = []
        while True:
            prob = self.expression()
            self.expect(":")
            out.append(Update(prob, self.assignments()))
            if not self.accept("+"):
                return tuple(out)


def parse_model(text: str) -> ProcessModel:
    """Parse a model file; undefined constants are recorded as parameters."""
    p = _ModelParser(text)
    m = ProcessModel()
    names: set[str] = set()

    def declare(name: str, tok) -> None:
        if name in names:
            raise p.error(f"duplicate declaration of {name}", tok)
        names.add(name)

    while p.tok.kind != "eof":
        tok = p.tok
        if p.accept("mdp"):
            m.kind = "mdp"
        elif p.accept("dtmc"):
            m.kind = "dtmc"
        elif p.accept("module"):
            p.expect_kind("id")
        elif p.accept("endmodule"):
            pass
        elif p.accept("const"):
            type_ = INT
            if p.at("int", "double", "bool"):
                type_ = p.tok.text
                p.i += 1
            name_tok = p.expect_kind("id")
            declare(name_tok.text, name_tok)
            value = p.expression() if p.accept("=") else None
            p.expect(";")
            m.constants.append(Const(name_tok.text, type_, value))
        elif p.accept("formula"):
            name_tok = p.expect_kind("id")
            declare(name_tok.text, name_tok)
            p.expect("=")
            m.formulas[name_tok.text] = p.expression()
            p.expect(";")
        elif p.accept("label"):
            name_tok = p.expect_kind("str")
            name = name_tok.text[1:-1]
            if name in m.labels:
                raise p.error(f"duplicate label {name}", name_tok)
            p.expect("=")
            m.labels[name] = p.expression()
            p.expect(";")
        elif p.accept("rewards"):
            name = p.expect_kind("str").text[1:-1]
            items = []
            while not p.accept("endrewards"):
                label = None
                if p.accept("["):
                    label = p.expect_kind("id").text if p.tok.kind == "id" else ""
                    p.expect("]")
                guard = p.expression()
                p.expect(":")
                value = p.expression()
                p.expect(";")
                items.append(RewardItem(label, guard, value))
            m.rewards.append(RewardStruct(name, tuple(items)))
        elif p.accept("["):
            label = p.expect_kind("id").text if p.tok.kind == "id" else ""
            p.expect("]")
            guard = p.expression()
            p.expect("->")
            updates = p.updates()
            p.expect(";")
            m.commands.append(Command(label, guard, updates))
        elif tok.kind == "id" and p.peek().text == ":":
            p.i += 2
            declare(tok.text, tok)
            if p.accept("bool"):
                kind, lo, hi = BOOL, 0, 1
            else:
                p.expect("[")
                lo = p.literal(m)
                p.expect("..")
                hi = p.literal(m)
                p.expect("]")
                kind = INT
            p.expect("init")
            init = p.literal(m)
            p.expect(";")
            try:
                m.variables.append(VarDecl(tok.text, kind, lo, hi, init))
            except ExprError as err:
                raise p.error(str(err), tok) from None
        else:
            raise p.error(f"unexpected {tok.text!r}")
    validate(m)
    return m


def validate(m: ProcessModel) -> None:
    """Type-check every expression of ``m``; raises ``ModelError``."""
    try:
        table = m.decls()
        for c in m.constants:
            if c.value is not None:
                t = type_of(c.value, table)
                if c.type == INT and t != INT or c.type == BOOL and t != BOOL or c.type == DOUBLE and t == BOOL:
                    raise ModelError(f"constant {c.name} declared {c.type} but has type {t}")
        for name, e in m.labels.items():
            if type_of(e, table) != BOOL:
                raise ModelError(f"label {name} must be boolean")
        kinds = {v.name: v.kind for v in m.variables}
        for cmd in m.commands:
            if type_of(cmd.guard, table) != BOOL:
                raise ModelError(f"guard of [{cmd.label}] must be boolean")
            for u in cmd.updates:
                if type_of(u.prob, table) == BOOL:
                    raise ModelError(f"probability in [{cmd.label}] must be numeric")
                targets = [n for n, _ in u.assigns]
                if len(set(targets)) != len(targets):
                    raise ModelError(f"variable assigned twice in [{cmd.label}]")
                for name, e in u.assigns:
                    if name not in kinds:
                        raise ModelError(f"assignment to undeclared variable {name} in [{cmd.label}]")
                    t = type_of(e, table)
                    if (kinds[name] == BOOL) != (t == BOOL) or (kinds[name] == INT and t == DOUBLE):
                        raise ModelError(f"cannot assign {t} to {kinds[name]} variable {name} in [{cmd.label}]")
        for r in m.rewards:
            for item in r.items:
                if type_of(item.guard, table) != BOOL or type_of(item.value, table) == BOOL:
                    raise ModelError(f"malformed item in rewards {r.name!r}")
    except ExprError as err:
        raise ModelError(str(err)) from None


# ---------------------------------------------------------------- printing


def _fmt_value(v: Value) -> str:
    return to_text(Lit(v))


def _fmt_assigns(assigns) -> str:
    if not assigns:
        return "true"
    return "&".join(f"({n}'={to_text(e)})" for n, e in assigns)


def format_command(cmd: Command) -> str:
    if len(cmd.updates) == 1 and cmd.updates[0].prob == Lit(1):
        rhs = _fmt_assigns(cmd.updates[0].assigns)
    else:
        rhs = " + ".join(f"{to_text(u.prob)}:{_fmt_assigns(u.assigns)}" for u in cmd.updates)
    return f"[{cmd.label}] {to_text(cmd.guard)} -> {rhs};"


def format_model(m: ProcessModel) -> str:
    """Render ``m`` in the model-file grammar; ``parse_model`` inverts this."""
    lines = [m.kind, ""]
    for c in m.constants:
        tail = "" if c.value is None else f" = {to_text(c.value)}"
        lines.append(f"const {c.type} {c.name}{tail};")
    if m.constants:
        lines.append("")
    for name, e in m.formulas.items():
        lines.append(f"formula {name} = {to_text(e)};")
    for name, e in m.labels.items():
        lines.append(f'label "{name}" = {to_text(e)};')
    lines.append("")
    for v in m.variables:
        if v.kind == BOOL:
            lines.append(f"{v.name} : bool init {_fmt_value(v.init)};")
        else:
            lines.append(f"{v.name} : [{v.lo}..{v.hi}] init {v.init};")
    lines.append("")
    lines.extend(format_command(c) for c in m.commands)
    for r in m.rewards:
        lines.append("")
        lines.append(f'rewards "{r.name}"')
        for item in r.items:
            head = "" if item.label is None else f"[{item.label}] "
            lines.append(f"  {head}{to_text(item.guard)} : {to_text(item.value)};")
        lines.append("endrewards")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- explicit models


@dataclass
class ExplicitModel:
    """Enumerated MDP or DTMC.

    Choices of state ``s`` are rows ``choice_start[s]:choice_start[s+1]`` of
    the sparse ``trans`` matrix (choices x states).  ``rewards`` maps each
    structure name to a per-choice vector.  For DTMCs built by uniform
    resolution, ``parts`` records the enabled commands behind merged choices.
    """

    kind: str
    var_names: tuple[str, ...]
    states: list[tuple]
    initial: int
    choice_start: np.ndarray
    choice_labels: list[str]
    trans: sp.csr_matrix
    rewards: dict[str, np.ndarray]
    model: ProcessModel | None = None
    values: dict[str, Value] = field(default_factory=dict)
    parts: dict[int, tuple] = field(default_factory=dict)
    origin: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_choices(self) -> int:
        return len(self.choice_labels)

    @property
    def n_transitions(self) -> int:
        return int(self.trans.nnz)

    def choices(self, s: int) -> range:
        return range(int(self.choice_start[s]), int(self.choice_start[s + 1]))

    def choice_state(self) -> np.ndarray:
        """State index owning each choice."""
        if "owner" not in self._cache:
            counts = np.diff(self.choice_start)
            self._cache["owner"] = np.repeat(np.arange(self.n_states), counts)
        return self._cache["owner"]

    def successors(self, c: int) -> list[tuple[int, float]]:
        row = self.trans.getrow(c)
        return list(zip(row.indices.tolist(), row.data.tolist()))

    def state_dict(self, s: int) -> dict[str, Value]:
        return dict(zip(self.var_names, self.states[s]))

    def deadlocks(self) -> np.ndarray:
        return np.diff(self.choice_start) == 0

    def sat(self, e: Expr | str) -> np.ndarray:
        """Boolean vector of states satisfying an expression over the model's names."""
        if isinstance(e, str):
            from .expr import parse_expr
            e = parse_expr(e, self.model.decls(), expect=BOOL)
        key = ("sat", e)
        if key in self._cache:
            return self._cache[key]
        special = {}
        for name in _label_refs(e):
            if name == "deadlock":
                special['"deadlock"'] = "_dead[_i]"
            elif name == "init":
                special['"init"'] = "(_i == _init)"
        resolved = self.model.resolve(e, self.values) if self.model is not None else e
        slot = {n: f"s[{i}]" for i, n in enumerate(self.var_names)}
        src = to_python(_mark_specials(resolved, special), {**slot, **special})
        ns = dict(COMPILE_NAMESPACE, _dead=self.deadlocks(), _init=self.initial)
        fn = eval(f"lambda s, _i: bool({src})", ns)
        out = np.fromiter((fn(s, i) for i, s in enumerate(self.states)), dtype=bool, count=self.n_states)
        self._cache[key] = out
        return out


def _mark_specials(e: Expr, special: Mapping[str, str]) -> Expr:
    if not special:
        return e
    return substitute(e, {k: Ident(k) for k in special})


# ---------------------------------------------------------------- expansion


def _conjuncts(e: Expr) -> list[Expr]:
    if isinstance(e, Binary) and e.op == "&":
        return _conjuncts(e.lhs) + _conjuncts(e.rhs)
    return [e]


def _allowed_values(e: Expr, var: VarDecl) -> set | None:
    """Values of ``var`` permitted by a conjunct, or None if it does not constrain it alone."""
    domain = [False, True] if var.kind == BOOL else range(var.lo, var.hi + 1)
    if isinstance(e, Binary) and e.op in ("=", "!="):
        if isinstance(e.lhs, Ident) and e.lhs.name == var.name and isinstance(e.rhs, Lit):
            value = e.rhs.value
        elif isinstance(e.rhs, Ident) and e.rhs.name == var.name and isinstance(e.lhs, Lit):
            value = e.lhs.value
        else:
            return None
        return {value} if e.op == "=" else {v for v in domain if v != value}
    if isinstance(e, Binary) and e.op == "|":
        a, b = _allowed_values(e.lhs, var), _allowed_values(e.rhs, var)
        return None if a is None or b is None else a | b
    if isinstance(e, Ident) and e.name == var.name and var.kind == BOOL:
        return {True}
    if isinstance(e, Unary) and e.op == "!" and isinstance(e.arg, Ident) and e.arg.name == var.name:
        return {False}
    return None


class _Compiled:
    """Successor and reward functions of a model with all constants bound."""

    def __init__(self, m: ProcessModel, values: Mapping[str, Value]):
        self.m = m
        self.vars = m.variables
        slot = {v.name: f"s[{i}]" for i, v in enumerate(self.vars)}
        idx = m.var_index()
        self.labels = [c.label for c in m.commands]
        guards = [m.resolve(c.guard, values) for c in m.commands]
        self.live = [i for i, g in enumerate(guards) if g != FALSE]
        src = []
        for k in self.live:
            cmd = m.commands[k]
            src.append(f"def _cmd{k}(s):")
            src.append(f"    if not ({to_python(guards[k], slot)}): return None")
            src.append("    out = []")
            for u in cmd.updates:
                prob = to_python(m.resolve(u.prob, values), slot)
                parts = {idx[name]: to_python(m.resolve(e, values), slot) for name, e in u.assigns}
                tuple_src = ", ".join(parts.get(i, f"s[{i}]") for i in range(len(self.vars)))
                src.append(f"    out.append(({prob}, ({tuple_src},)))")
            src.append("    return out")
        self.namespace = dict(COMPILE_NAMESPACE)
        exec("\n".join(src), self.namespace)
        self.fns = {k: self.namespace[f"_cmd{k}"] for k in self.live}
        self._dispatch_setup(guards)
        self._reward_setup(values, slot)

    def _dispatch_setup(self, guards: list[Expr]) -> None:
        constraints: dict[int, dict[int, set]] = {}
        counts = [0] * len(self.vars)
        for k in self.live:
            per_var: dict[int, set] = {}
            for c in _conjuncts(guards[k]):
                for i, v in enumerate(self.vars):
                    allowed = _allowed_values(c, v)
                    if allowed is not None:
                        per_var[i] = per_var.get(i, allowed) & allowed
            constraints[k] = per_var
            for i in per_var:
                counts[i] += 1
        order = sorted(range(len(self.vars)), key=lambda i: -counts[i])
        self.keys = [i for i in order[:3] if counts[i] > 0]
        self.constraints = constraints
        self.table: dict[tuple, list[int]] = {}

    def candidates(self, s: tuple) -> list[int]:
        key = tuple(s[i] for i in self.keys)
        hit = self.table.get(key)
        if hit is None:
            hit = [k for k in self.live
                   if all(key[j] in self.constraints[k].get(i, (key[j],)) for j, i in enumerate(self.keys))]
            self.table[key] = hit
        return hit

    def _reward_setup(self, values: Mapping[str, Value], slot: Mapping[str, str]) -> None:
        self.reward_names = [r.name for r in self.m.rewards]
        by_label: dict[str | None, list] = {}
        for j, r in enumerate(self.m.rewards):
            for item in r.items:
                guard = self.m.resolve(item.guard, values)
                if guard == FALSE:
                    continue
                value = self.m.resolve(item.value, values)
                by_label.setdefault(item.label, []).append((j, guard, value))
        self.reward_fns = {}
        src = []
        n = len(self.reward_names)
        for i, (label, items) in enumerate(by_label.items()):
            src.append(f"def _rew{i}(s, acc):")
            for j, guard, value in items:
                src.append(f"    if {to_python(guard, slot)}: acc[{j}] += {to_python(value, slot)}")
            self.reward_fns[label] = f"_rew{i}"
        if src:
            exec("\n".join(src), self.namespace)
        self.reward_fns = {k: self.namespace[v] for k, v in self.reward_fns.items()}
        self.n_rewards = n

    def rewards(self, s: tuple, label: str) -> list[float]:
        acc = [0.0] * self.n_rewards
        fn = self.reward_fns.get(label)
        if fn is not None:
            fn(s, acc)
        fn = self.reward_fns.get(None)
        if fn is not None:
            fn(s, acc)
        return acc

    def check_bounds(self, s: tuple, label: str, src: tuple) -> None:
        for v, x in zip(self.vars, s):
            if v.kind == INT and not v.lo <= x <= v.hi:
                raise ModelError(
                    f"[{label}] drives {v.name} to {x} outside [{v.lo}..{v.hi}] from state {src}")


def expand(m: ProcessModel, params: Mapping[str, Value] | None = None,
           state_cap: int = DEFAULT_STATE_CAP) -> ExplicitModel:
    """Breadth-first expansion from the initial state.

    Successors are enumerated in command declaration order, then update order;
    state indices are assigned in discovery order.
    """
    values = m.constant_values(params)
    comp = _Compiled(m, values)
    init = tuple(v.init for v in m.variables)
    index = {init: 0}
    states = [init]
    queue = deque([init])
    starts = [0]
    labels: list[str] = []
    rows: list[int] = []
    cols: list[int] = []
    data: list[float] = []
    rew_rows: list[list[float]] = []
    parts: dict[int, tuple] = {}
    dtmc = m.kind == "dtmc"

    def lookup(t: tuple) -> int:
        j = index.get(t)
        if j is None:
            if len(states) >= state_cap:
                raise ModelError(f"state-space cap of {state_cap} states exceeded")
            j = len(states)
            index[t] = j
            states.append(t)
            queue.append(t)
        return j

    while queue:
        s = queue.popleft()
        enabled = []
        for k in comp.candidates(s):
            out = comp.fns[k](s)
            if out is None:
                continue
            total = 0.0
            dist: dict[int, float] = {}
            for p, t in out:
                p = float(p)
                if p < -PROB_TOL or p > 1 + PROB_TOL:
                    raise ModelError(f"[{comp.labels[k]}] has probability {p} in state {s}")
                total += p
                if p <= 0.0:
                    continue
                if t not in index:
                    comp.check_bounds(t, comp.labels[k], s)
                j = lookup(t)
                dist[j] = dist.get(j, 0.0) + p
            if abs(total - 1.0) > PROB_TOL:
                raise ModelError(f"probabilities of [{comp.labels[k]}] sum to {total} in state {s}")
            enabled.append((comp.labels[k], dist))
        if dtmc and len(enabled) > 1:
            w = 1.0 / len(enabled)
            merged: dict[int, float] = {}
            acc = np.zeros(comp.n_rewards)
            for label, dist in enabled:
                for j, p in dist.items():
                    merged[j] = merged.get(j, 0.0) + w * p
                acc += w * np.asarray(comp.rewards(s, label))
            c = len(labels)
            parts[c] = tuple((label, tuple(dist.items())) for label, dist in enabled)
            labels.append("|".join(label for label, _ in enabled))
            rew_rows.append(acc.tolist())
            rows.extend([c] * len(merged))
            cols.extend(merged.keys())
            data.extend(merged.values())
        else:
            for label, dist in enabled:
                c = len(labels)
                labels.append(label)
                rew_rows.append(comp.rewards(s, label))
                rows.extend([c] * len(dist))
                cols.extend(dist.keys())
                data.extend(dist.values())
        starts.append(len(labels))

    n, nc = len(states), len(labels)
    trans = sp.csr_matrix((data, (rows, cols)), shape=(nc, n))
    rew = np.asarray(rew_rows, dtype=float).reshape(nc, comp.n_rewards)
    rewards = {name: rew[:, j].copy() for j, name in enumerate(comp.reward_names)}
    return ExplicitModel(
        kind="dtmc" if dtmc else "mdp",
        var_names=tuple(v.name for v in m.variables),
        states=states,
        initial=0,
        choice_start=np.asarray(starts, dtype=np.int64),
        choice_labels=labels,
        trans=trans,
        rewards=rewards,
        model=m,
        values=values,
        parts=parts,
    )


def deadlock_states(x: ExplicitModel, final: Expr | str) -> tuple[set[int], set[int]]:
    """States without enabled actions, split into (final, early)."""
    dead = np.flatnonzero(x.deadlocks())
    fin = x.sat(final)
    return {int(s) for s in dead if fin[s]}, {int(s) for s in dead if not fin[s]}


@dataclass(frozen=True)
class Policy:
    """Memoryless deterministic policy: state index -> chosen choice index."""

    choice: Mapping[int, int]

    def label(self, x: ExplicitModel, s: int) -> str:
        return x.choice_labels[self.choice[s]]

    def actions(self, x: ExplicitModel) -> dict[int, str]:
        return {s: x.choice_labels[c] for s, c in self.choice.items()}


def induced_dtmc(x: ExplicitModel, pi: Policy | Mapping[int, int]) -> ExplicitModel:
    """Restrict ``x`` to the choices of ``pi`` on the states it reaches from the initial state.

    States are re-indexed in breadth-first order; ``origin`` maps new to old indices.
    """
    choice = pi.choice if isinstance(pi, Policy) else pi
    new_index = {x.initial: 0}
    order = [x.initial]
    queue = deque([x.initial])
    picked = []
    while queue:
        s = queue.popleft()
        if x.choice_start[s] == x.choice_start[s + 1]:
            picked.append(None)
            continue
        if s not in choice:
            raise ModelError(f"policy undefined on reachable state {s}")
        c = choice[s]
        if not x.choice_start[s] <= c < x.choice_start[s + 1]:
            raise ModelError(f"policy picks choice {c} not enabled in state {s}")
        picked.append(c)
        for t, _ in x.successors(c):
            if t not in new_index:
                new_index[t] = len(order)
                order.append(t)
                queue.append(t)
    rows, cols, data, labels, starts = [], [], [], [], [0]
    rew = {k: [] for k in x.rewards}
    parts = {}
    for c in picked:
        if c is not None:
            row = len(labels)
            labels.append(x.choice_labels[c])
            for t, p in x.successors(c):
                rows.append(row)
                cols.append(new_index[t])
                data.append(p)
            for k, v in x.rewards.items():
                rew[k].append(v[c])
            if c in x.parts:
                parts[row] = tuple((lab, tuple((new_index[t], p) for t, p in dist)) for lab, dist in x.parts[c])
        starts.append(len(labels))
    n = len(order)
    trans = sp.csr_matrix((data, (rows, cols)), shape=(len(labels), n))
    return ExplicitModel(
        kind="dtmc",
        var_names=x.var_names,
        states=[x.states[s] for s in order],
        initial=0,
        choice_start=np.asarray(starts, dtype=np.int64),
        choice_labels=labels,
        trans=trans,
        rewards={k: np.asarray(v, dtype=float) for k, v in rew.items()},
        model=x.model,
        values=x.values,
        parts=parts,
        origin=np.asarray(order, dtype=np.int64),
    )


def from_arrays(kind: str, choices: Sequence[Sequence[tuple[str, Mapping[int, float], Mapping[str, float]]]],
                labels: Mapping[str, Iterable[int]] | None = None, initial: int = 0) -> ExplicitModel:
    """Build an ``ExplicitModel`` directly from per-state choice lists.

    ``choices[s]`` lists ``(action, {successor: prob}, {reward: value})``;
    ``labels`` names state sets usable as ``"name"`` in formulas.
    """
    n = len(choices)
    rows, cols, data, names, starts = [], [], [], [], [0]
    reward_keys = sorted({k for cs in choices for _, _, r in cs for k in r})
    rew = {k: [] for k in reward_keys}
    for cs in choices:
        for action, dist, r in cs:
            c = len(names)
            names.append(action)
            for t, p in dist.items():
                rows.append(c)
                cols.append(t)
                data.append(p)
            for k in reward_keys:
                rew[k].append(float(r.get(k, 0.0)))
        starts.append(len(names))
    m = ProcessModel(kind=kind, variables=[VarDecl("s", INT, 0, max(n - 1, 0), initial)])
    for name, members in (labels or {}).items():
        members = sorted({int(i) for i in members})
        m.labels[name] = disj(*(Binary("=", Ident("s"), Lit(int(i))) for i in members)) if members else FALSE
    return ExplicitModel(
        kind=kind,
        var_names=("s",),
        states=[(i,) for i in range(n)],
        initial=initial,
        choice_start=np.asarray(starts, dtype=np.int64),
        choice_labels=names,
        trans=sp.csr_matrix((data, (rows, cols)), shape=(len(names), n)),
        rewards={k: np.asarray(v, dtype=float) for k, v in rew.items()},
        model=m,
    )
