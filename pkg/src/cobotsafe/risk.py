"""Risk models: factors, mitigation modes, risk gradients and action profiles.

The textual format looks like::

    const double pr_mishap = 0.2;

    HC desc "human close to active welder"
      requiresOcc (HS) prevents (HRW)
      guard "hloc=atWeldSpot & cact=welding"
      detectedBy (.HCdet) mitigatedBy (.HCstop) resumedBy (.HCres)
      severity = 9;

    mode HCdet desc "range finder" guard "rngDet=close & cact=welding";
    mode HCstop desc "stop" cf "inSGA" update "(notif'=leaveArea)"
      target (act=off, safmod=stopped) disruption=9 nuisance="alarm * 5" effort=5.5;

    distances act { off: 0; idle: 1 0; }

                   guard  risk_HC;
    r_move:        ""     "5";

Expressions inside quotes are kept as syntax trees and type-checked only
when a controller is generated against a concrete process model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .expr import FALSE, TRUE, Binary, Expr, ExprError, Ident, Lit, Parser, disj, to_text, tokenize

PHASES = ("inact", "act", "mit1", "mit2", "mit", "res", "mis")
BASIC_PHASES = ("inact", "activ", "mitig")
UNSAFE_PHASES = ("act", "mit1", "mit2")


class RiskModelError(ValueError):
    pass


@dataclass(frozen=True)
class Mode:
    """A detector, mitigation option or resumption option."""

    name: str
    desc: str = ""
    guard: Expr | None = None
    cf: Expr | None = None
    update: tuple[tuple[str, Expr], ...] | None = None
    target: tuple[tuple[str, str], ...] = ()
    disruption: Expr | None = None
    nuisance: Expr | None = None
    effort: Expr | None = None

    def target_for(self, axis: str) -> str | None:
        return dict(self.target).get(axis)

    def rewards(self) -> dict[str, Expr]:
        out = {}
        for key in ("disruption", "nuisance", "effort"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass(frozen=True)
class Factor:
    id: str
    desc: str
    guard: Expr
    detected_by: str | None = None
    mitigated_by: tuple[str, ...] = ()
    resumed_by: tuple[str, ...] = ()
    requires_occ: tuple[str, ...] = ()
    prevents: tuple[str, ...] = ()
    mit_prevents_mit: tuple[str, ...] = ()
    severity: float = 1.0

    @property
    def phase_var(self) -> str:
        return f"{self.id}p"


@dataclass(frozen=True)
class DistanceMatrix:
    """Lower-triangular risk distances between ordered categories.

    ``grad(a, b)`` is the risk reduction of moving from ``a`` to ``b``.
    """

    name: str
    categories: tuple[str, ...]
    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            if len(row) != i + 1:
                raise RiskModelError(
                    f"distances {self.name}: row {self.categories[i]} needs {i + 1} entries, got {len(row)}")
            if row[i] != 0:
                raise RiskModelError(f"distances {self.name}: diagonal entry of {self.categories[i]} must be 0")

    def index(self, category: str) -> int:
        try:
            return self.categories.index(category)
        except ValueError:
            raise RiskModelError(f"unknown category {category!r} in distances {self.name}") from None

    def grad(self, src: str, dst: str) -> float:
        i, j = self.index(src), self.index(dst)
        if i > j:
            return self.rows[i][j]
        if i < j:
            return -self.rows[j][i]
        return 0.0

    def most_permissive(self) -> str:
        """Category with the largest total risk reduction towards all others (first on ties)."""
        return max(self.categories, key=lambda c: (sum(self.grad(c, d) for d in self.categories),
                                                     -self.index(c)))


def grad(m: DistanceMatrix, src: str, dst: str) -> float:
    return m.grad(src, dst)


@dataclass(frozen=True)
class ProfileEntry:
    """One cell of an action profile table: reward ``column`` of action ``label``."""

    label: str
    column: str
    guard: Expr
    value: Expr


@dataclass
class RiskModel:
    factors: list[Factor] = field(default_factory=list)
    modes: dict[str, Mode] = field(default_factory=dict)
    distances: dict[str, DistanceMatrix] = field(default_factory=dict)
    profile: list[ProfileEntry] = field(default_factory=list)
    constants: list[tuple[str, str, Expr]] = field(default_factory=list)

    def factor(self, fid: str) -> Factor:
        for f in self.factors:
            if f.id == fid:
                return f
        raise RiskModelError(f"unknown factor {fid}")

    def mitigations(self, f: Factor) -> list[Mode]:
        return [self.modes[n] for n in f.mitigated_by]

    def resumptions(self, f: Factor) -> list[Mode]:
        return [self.modes[n] for n in f.resumed_by]

    def detector(self, f: Factor) -> Mode | None:
        return self.modes[f.detected_by] if f.detected_by else None

    def profile_labels(self) -> list[str]:
        seen = {}
        for e in self.profile:
            seen.setdefault(e.label, None)
        return list(seen)

    def restrict(self, ids: Iterable[str]) -> "RiskModel":
        """Sub-model with only the given factors; dependencies on dropped factors are removed."""
        keep = set(ids)
        factors = []
        for f in self.factors:
            if f.id in keep:
                factors.append(Factor(
                    f.id, f.desc, f.guard, f.detected_by, f.mitigated_by, f.resumed_by,
                    tuple(x for x in f.requires_occ if x in keep),
                    tuple(x for x in f.prevents if x in keep),
                    tuple(x for x in f.mit_prevents_mit if x in keep),
                    f.severity))
        profile = [e for e in self.profile
                   if not e.column.startswith("risk_") or e.column[5:] in keep]
        return RiskModel(factors, dict(self.modes), dict(self.distances), profile, list(self.constants))


# ---------------------------------------------------------------- parsing


class _RiskParser(Parser):
    def quoted_expr(self) -> Expr:
        tok = self.expect_kind("str")
        body = tok.text[1:-1]
        if not body.strip():
            return TRUE
        sub = Parser(body)
        try:
            e = sub.expression()
            if sub.tok.kind != "eof":
                raise sub.error(f"unexpected {sub.tok.text!r}")
        except ExprError as err:
            raise self.error(f"in quoted expression: {err}", tok) from None
        return e

    def value_expr(self) -> Expr:
        """``"expr"`` or a bare (possibly negative) number."""
        if self.tok.kind == "str":
            return self.quoted_expr()
        neg = self.accept("-")
        tok = self.expect_kind("num")
        v = int(tok.text) if tok.text.isdigit() else float(tok.text)
        return Lit(-v if neg else v)

    def number(self) -> float:
        neg = self.accept("-")
        tok = self.expect_kind("num")
        return -float(tok.text) if neg else float(tok.text)

    def id_list(self, dotted: bool = False) -> tuple[str, ...]:
        self.expect("(")
        out = []
        while True:
            if dotted:
                self.accept(".")
            out.append(self.expect_kind("id").text)
            if not self.accept(","):
                break
        self.expect(")")
        return tuple(out)

    def update(self) -> tuple[tuple[str, Expr], ...]:
        tok = self.expect_kind("str")
        from .pgcl import _ModelParser
        sub = _ModelParser(tok.text[1:-1])
        try:
            assigns = sub.assignments()
            if sub.tok.kind != "eof":
                raise sub.error(f"unexpected {sub.tok.text!r}")
        except ExprError as err:
            raise self.error(f"in update: {err}", tok) from None
        return assigns


_FACTOR_KEYS = {"requiresOcc", "prevents", "mitPreventsMit", "guard", "detectedBy", "mitigatedBy",
                "resumedBy", "severity"}
_MODE_KEYS = {"desc", "guard", "cf", "update", "target", "disruption", "nuisance", "effort"}


def parse_risk_model(text: str) -> RiskModel:
    p = _RiskParser(text)
    rm = RiskModel()
    refs: list[tuple[str, str, object]] = []
    while p.tok.kind != "eof":
        tok = p.tok
        if p.accept("const"):
            type_ = "double"
            if p.at("int", "double", "bool"):
                type_ = p.tok.text
                p.i += 1
            name = p.expect_kind("id").text
            p.expect("=")
            value = p.expression()
            p.expect(";")
            rm.constants.append((name, type_, value))
        elif p.accept("mode"):
            _parse_mode(p, rm)
        elif p.accept("distances"):
            _parse_distances(p, rm)
        elif tok.kind == "id" and p.peek().text == "desc":
            _parse_factor(p, rm, refs)
        elif tok.kind == "id" and p.peek().text == ":":
            raise p.error("profile row before a profile header")
        elif tok.kind == "id":
            _parse_profile(p, rm)
        else:
            raise p.error(f"unexpected {tok.text!r}")
    _link(rm, refs)
    return rm


def _parse_factor(p: _RiskParser, rm: RiskModel, refs: list) -> None:
    name_tok = p.expect_kind("id")
    fid = name_tok.text
    p.expect("desc")
    desc = p.expect_kind("str").text[1:-1]
    attrs: dict = {}
    while not p.accept(";"):
        key_tok = p.expect_kind("id")
        key = key_tok.text
        if key not in _FACTOR_KEYS:
            raise p.error(f"unknown factor attribute {key!r}", key_tok)
        if key == "guard":
            attrs["guard"] = p.quoted_expr()
        elif key == "severity":
            p.expect("=")
            attrs["severity"] = p.number()
        elif key in ("detectedBy", "mitigatedBy", "resumedBy"):
            attrs[key] = p.id_list(dotted=True)
        else:
            attrs[key] = p.id_list()
    if "guard" not in attrs:
        raise p.error(f"factor {fid} lacks a guard", name_tok)
    if any(f.id == fid for f in rm.factors):
        raise p.error(f"duplicate factor {fid}", name_tok)
    detected = attrs.get("detectedBy", ())
    if len(detected) > 1:
        raise p.error(f"factor {fid} has more than one detector", name_tok)
    f = Factor(
        fid, desc, attrs["guard"],
        detected[0] if detected else None,
        attrs.get("mitigatedBy", ()), attrs.get("resumedBy", ()),
        attrs.get("requiresOcc", ()), attrs.get("prevents", ()), attrs.get("mitPreventsMit", ()),
        attrs.get("severity", 1.0),
    )
    rm.factors.append(f)
    refs.append((fid, name_tok.pos, f))


def _parse_mode(p: _RiskParser, rm: RiskModel) -> None:
    name_tok = p.expect_kind("id")
    fields: dict = {"name": name_tok.text}
    while not p.accept(";"):
        key_tok = p.expect_kind("id")
        key = key_tok.text
        if key not in _MODE_KEYS:
            raise p.error(f"unknown mode attribute {key!r}", key_tok)
        if key == "desc":
            fields["desc"] = p.expect_kind("str").text[1:-1]
        elif key in ("guard", "cf"):
            fields[key] = p.quoted_expr()
        elif key == "update":
            fields["update"] = p.update()
        elif key == "target":
            p.expect("(")
            pairs = []
            while True:
                axis = p.expect_kind("id").text
                p.expect("=")
                pairs.append((axis, p.expect_kind("id").text))
                if not p.accept(","):
                    break
            p.expect(")")
            fields["target"] = tuple(pairs)
        else:
            p.expect("=")
            fields[key] = p.value_expr()
    if name_tok.text in rm.modes:
        raise p.error(f"duplicate mode {name_tok.text}", name_tok)
    rm.modes[name_tok.text] = Mode(**fields)


def _parse_distances(p: _RiskParser, rm: RiskModel) -> None:
    name_tok = p.expect_kind("id")
    p.expect("{")
    cats, rows = [], []
    while not p.accept("}"):
        cats.append(p.expect_kind("id").text)
        p.expect(":")
        row = []
        while not p.accept(";"):
            try:
                row.append(p.number())
            except ExprError:
                raise p.error(f"malformed distances row for {cats[-1]}") from None
        rows.append(tuple(row))
    if len(set(cats)) != len(cats):
        raise p.error(f"duplicate category in distances {name_tok.text}", name_tok)
    try:
        rm.distances[name_tok.text] = DistanceMatrix(name_tok.text, tuple(cats), tuple(rows))
    except RiskModelError as err:
        raise p.error(str(err), name_tok) from None


def _parse_profile(p: _RiskParser, rm: RiskModel) -> None:
    header = []
    while not p.accept(";"):
        header.append(p.expect_kind("id").text)
    if not header:
        raise p.error("empty profile header")
    guard_col = header[0] if header[0].startswith("guard") else None
    columns = header[1:] if guard_col else header
    while p.tok.kind == "id" and p.peek().text == ":":
        label = p.expect_kind("id").text
        p.expect(":")
        cells, empty = [], []
        while not p.accept(";"):
            empty.append(p.tok.text == '""')
            cells.append(p.quoted_expr())
        if len(cells) != len(header):
            raise p.error(f"profile row {label} has {len(cells)} cells, header has {len(header)}")
        guard = cells[0] if guard_col else TRUE
        skip = 1 if guard_col else 0
        for col, cell, blank in zip(columns, cells[skip:], empty[skip:]):
            if not blank:
                rm.profile.append(ProfileEntry(label, col, guard, cell))


def _link(rm: RiskModel, refs) -> None:
    ids = {f.id for f in rm.factors}
    for fid, _, f in refs:
        for mode in (f.detected_by,) + f.mitigated_by + f.resumed_by:
            if mode is not None and mode not in rm.modes:
                raise RiskModelError(f"factor {fid} refers to unknown mode {mode}")
        for dep in f.requires_occ + f.prevents + f.mit_prevents_mit:
            if dep not in ids:
                raise RiskModelError(f"factor {fid} depends on unknown factor {dep}")
            if dep == fid:
                raise RiskModelError(f"factor {fid} depends on itself")
    for mode in rm.modes.values():
        for axis, cat in mode.target:
            if axis not in rm.distances:
                raise RiskModelError(f"mode {mode.name} targets undeclared category axis {axis}")
            rm.distances[axis].index(cat)
    _check_acyclic(rm)


def _check_acyclic(rm: RiskModel) -> None:
    graph = {f.id: f.requires_occ for f in rm.factors}
    state: dict[str, int] = {}

    def visit(n: str, path: tuple) -> None:
        if state.get(n) == 2:
            return
        if state.get(n) == 1:
            raise RiskModelError(f"cyclic requiresOcc: {' -> '.join(path + (n,))}")
        state[n] = 1
        for m in graph[n]:
            visit(m, path + (n,))
        state[n] = 2

    for n in graph:
        visit(n, ())


# ---------------------------------------------------------------- printing


def _q(e: Expr | None) -> str:
    return '""' if e is None or e == TRUE else f'"{to_text(e)}"'


def _num(e: Expr) -> str:
    if isinstance(e, Lit) and not isinstance(e.value, bool):
        return to_text(e)
    return _q(e)


def format_risk_model(rm: RiskModel) -> str:
    out = []
    for name, type_, value in rm.constants:
        out.append(f"const {type_} {name} = {to_text(value)};")
    if rm.constants:
        out.append("")
    for f in rm.factors:
        parts = [f'{f.id} desc "{f.desc}"']
        for key, ids in (("requiresOcc", f.requires_occ), ("prevents", f.prevents),
                         ("mitPreventsMit", f.mit_prevents_mit)):
            if ids:
                parts.append(f"  {key} ({', '.join(ids)})")
        parts.append(f"  guard {_q(f.guard)}")
        if f.detected_by:
            parts.append(f"  detectedBy (.{f.detected_by})")
        if f.mitigated_by:
            parts.append(f"  mitigatedBy ({', '.join('.' + m for m in f.mitigated_by)})")
        if f.resumed_by:
            parts.append(f"  resumedBy ({', '.join('.' + m for m in f.resumed_by)})")
        parts.append(f"  severity = {f.severity!r};")
        out.append("\n".join(parts))
    out.append("")
    for m in rm.modes.values():
        parts = [f'mode {m.name} desc "{m.desc}"']
        if m.guard is not None:
            parts.append(f"guard {_q(m.guard)}")
        if m.cf is not None:
            parts.append(f"cf {_q(m.cf)}")
        if m.update is not None:
            body = "&".join(f"({n}'={to_text(e)})" for n, e in m.update)
            parts.append(f'update "{body}"')
        if m.target:
            parts.append("target (" + ", ".join(f"{a}={c}" for a, c in m.target) + ")")
        for key, value in m.rewards().items():
            parts.append(f"{key}={_num(value)}")
        out.append("  ".join(parts) + ";")
    out.append("")
    for d in rm.distances.values():
        out.append(f"distances {d.name} {{")
        for cat, row in zip(d.categories, d.rows):
            out.append(f"  {cat}: " + " ".join(f"{x:g}" for x in row) + ";")
        out.append("}")
    # one profile table per reward column keeps the format regular
    columns: dict[str, list[ProfileEntry]] = {}
    for e in rm.profile:
        columns.setdefault(e.column, []).append(e)
    for col, entries in columns.items():
        out.append("")
        out.append(f"guard {col};")
        for e in entries:
            out.append(f"{e.label}: {_q(e.guard)} {_q(e.value)};")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- risk space


def risk_space(factors: Sequence[Factor]) -> list[dict[str, str]]:
    """Assignments of basic phases to factors that respect the factor dependencies."""
    ids = [f.id for f in factors]
    out = []
    for combo in itertools.product(BASIC_PHASES, repeat=len(ids)):
        rs = dict(zip(ids, combo))
        if _admissible(rs, factors):
            out.append(rs)
    return out


def _admissible(rs: Mapping[str, str], factors: Sequence[Factor]) -> bool:
    for f in factors:
        mine = rs[f.id]
        for other in f.requires_occ:
            if other in rs and mine != "inact" and rs[other] == "inact":
                return False
        for other in f.prevents:
            if other in rs and mine == "activ" and rs[other] == "activ":
                return False
        for other in f.mit_prevents_mit:
            if other in rs and mine == "mitig" and rs[other] == "mitig":
                return False
    return True


def phase_in(f: Factor, phases: Iterable[str]) -> Expr:
    return disj(*(Binary("=", Ident(f.phase_var), Ident(ph)) for ph in phases))


def unsafe_region_predicate(factors: Sequence[Factor]) -> Expr:
    """States where some factor was sensed but its handling is not complete."""
    if not factors:
        return FALSE
    return disj(*(phase_in(f, UNSAFE_PHASES) for f in factors))


# ---------------------------------------------------------------- gradient rules


def mitigation_target(current: str, target: str | None, m: DistanceMatrix) -> str:
    """Move to ``target`` unless that would increase risk."""
    if target is None:
        return current
    return target if m.grad(current, target) >= 0 else current


def resumption_target(candidates: Sequence[Mode | Mapping[str, str] | None], current: Mapping[str, str],
                      matrices: Mapping[str, DistanceMatrix]) -> dict[str, str]:
    """Componentwise most restrictive category over the resumption targets of the involved factors.

    ``candidates`` are in factor declaration order; options without a target on an
    axis do not constrain it, and an unconstrained axis keeps its current value.
    """
    out = {}
    for axis, m in matrices.items():
        top = m.most_permissive()
        best = None
        for cand in candidates:
            if cand is None:
                continue
            cat = cand.target_for(axis) if isinstance(cand, Mode) else cand.get(axis)
            if cat is None:
                continue
            if best is None or m.grad(top, cat) > m.grad(top, best):
                best = cat
        out[axis] = best if best is not None else current[axis]
    return out


def risk_scale(m: DistanceMatrix, reference: str | None = None) -> dict[str, float]:
    """Per-category multiplier in [0, 1]: 1 at the reference category, 0 at the safest one."""
    ref = reference or m.most_permissive()
    reductions = {c: m.grad(ref, c) for c in m.categories}
    top = max(reductions.values())
    if top <= 0:
        return {c: 1.0 for c in m.categories}
    return {c: min(1.0, max(0.0, 1.0 - r / top)) for c, r in reductions.items()}
