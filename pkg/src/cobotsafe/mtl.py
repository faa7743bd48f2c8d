"""Metric temporal logic over finite timed traces.

Semantics are pointwise over record indices.  ``G`` is weak at the end of the
trace, ``F`` and ``U`` need a witness inside it.  Intervals are closed and
compare timestamp differences in milliseconds.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from . import mc
from .expr import Expr, ExprError, Parser, evaluate, to_text


class MtlError(ValueError):
    pass


Interval = Union[tuple, None]


@dataclass(frozen=True)
class Atom:
    expr: Expr


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Or:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Implies:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Always:
    arg: "Formula"
    interval: Interval = None


@dataclass(frozen=True)
class Eventually:
    arg: "Formula"
    interval: Interval = None


@dataclass(frozen=True)
class Until:
    lhs: "Formula"
    rhs: "Formula"
    interval: Interval = None


Formula = Union[Atom, Not, And, Or, Implies, Always, Eventually, Until]


def interval(a: float, b: float) -> tuple[float, float]:
    if not (0 <= a <= b) or b == float("inf"):
        raise MtlError(f"bad interval [{a},{b}]: need 0 <= a <= b < inf")
    return (a, b)


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _fmt_iv(iv: Interval) -> str:
    return "" if iv is None else f"[{_fmt_num(iv[0])},{_fmt_num(iv[1])}]"


def to_string(f: Formula) -> str:
    if isinstance(f, Atom):
        return to_text(f.expr)
    if isinstance(f, Not):
        return f"!({to_string(f.arg)})"
    if isinstance(f, (And, Or, Implies)):
        op = {And: "&", Or: "|", Implies: "=>"}[type(f)]
        return f"({to_string(f.lhs)}) {op} ({to_string(f.rhs)})"
    if isinstance(f, Always):
        return f"G{_fmt_iv(f.interval)} ({to_string(f.arg)})"
    if isinstance(f, Eventually):
        return f"F{_fmt_iv(f.interval)} ({to_string(f.arg)})"
    if isinstance(f, Until):
        return f"({to_string(f.lhs)}) U{_fmt_iv(f.interval)} ({to_string(f.rhs)})"
    raise TypeError(f"not an MTL formula: {f!r}")


# ---------------------------------------------------------------- parsing


class _MtlParser(Parser):
    def formula(self):
        e = self.disj()
        if self.accept("=>"):
            return Implies(e, self.formula())
        return e

    def disj(self):
        e = self.conj()
        while self.accept("|"):
            e = Or(e, self.conj())
        return e

    def conj(self):
        e = self.until()
        while self.accept("&"):
            e = And(e, self.until())
        return e

    def until(self):
        e = self.unary_f()
        if self.accept("U"):
            iv = self._interval()
            return Until(e, self.until(), iv)
        return e

    def _interval(self) -> Interval:
        if not self.accept("["):
            return None
        a = float(self.expect_kind("num").text)
        self.expect(",")
        b = float(self.expect_kind("num").text)
        self.expect("]")
        try:
            return interval(a, b)
        except MtlError as e:
            raise self.error(str(e))

    def unary_f(self):
        if self.accept("!"):
            return Not(self.unary_f())
        tok = self.tok
        if tok.kind == "id" and tok.text in ("G", "F") and (self.peek().text in ("[", "(", "!") or self.peek().kind in ("id", "str")):
            self.i += 1
            iv = self._interval()
            arg = self.unary_f()
            return Always(arg, iv) if tok.text == "G" else Eventually(arg, iv)
        if self.at("("):
            start = self.i
            try:
                e = self.comparison()
                if self.at("U", ")", "&", "|", "=>") or self.tok.kind == "eof":
                    return Atom(e)
                raise self.error("not an atom")
            except ExprError:
                self.i = start
            self.expect("(")
            e = self.formula()
            self.expect(")")
            return e
        return Atom(self.comparison())


def parse_mtl(text: str) -> Formula:
    p = _MtlParser(text)
    f = p.formula()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return f


def parse_mtl_file(text: str) -> list[tuple[str, Formula]]:
    out = []
    for line in text.splitlines():
        body = line.split("//", 1)[0].strip()
        if body and not body.startswith("#"):
            out.append((body, parse_mtl(body)))
    return out


# ---------------------------------------------------------------- checking


@dataclass(frozen=True)
class Verdict:
    ok: bool
    index: int | None = None
    subformula: str | None = None

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return f"fail at {self.index}: {self.subformula}"


def trace_points(trace) -> tuple[list[float], list[Mapping]]:
    """(timestamps, snapshots) of a TimedTrace or a sequence of (timestamp, snapshot) pairs."""
    recs = getattr(trace, "records", trace)
    times, snaps = [], []
    for r in recs:
        if hasattr(r, "timestamp"):
            times.append(float(r.timestamp))
            snaps.append(dict(r.snapshot))
        else:
            times.append(float(r[0]))
            snaps.append(dict(r[1]))
    if any(b < a for a, b in zip(times, times[1:])):
        raise MtlError("trace timestamps must be nondecreasing")
    return times, snaps


class _Checker:
    def __init__(self, times: Sequence[float], snaps: Sequence[Mapping], env: Mapping):
        self.t = list(times)
        self.snaps = snaps
        self.env = env
        self.n = len(times)
        self.memo: dict[int, list[bool]] = {}

    def sat(self, f: Formula) -> list[bool]:
        key = id(f)
        if key in self.memo:
            return self.memo[key]
        n = self.n
        if isinstance(f, Atom):
            out = []
            for s in self.snaps:
                try:
                    out.append(bool(evaluate(f.expr, {**self.env, **s})))
                except KeyError as e:
                    raise MtlError(f"atom {to_text(f.expr)} refers to unknown name {e.args[0]}") from None
        elif isinstance(f, Not):
            out = [not v for v in self.sat(f.arg)]
        elif isinstance(f, And):
            out = [a and b for a, b in zip(self.sat(f.lhs), self.sat(f.rhs))]
        elif isinstance(f, Or):
            out = [a or b for a, b in zip(self.sat(f.lhs), self.sat(f.rhs))]
        elif isinstance(f, Implies):
            out = [(not a) or b for a, b in zip(self.sat(f.lhs), self.sat(f.rhs))]
        elif isinstance(f, Eventually):
            out = self._until([True] * n, self.sat(f.arg), f.interval)
        elif isinstance(f, Always):
            out = [not v for v in self._until([True] * n, [not v for v in self.sat(f.arg)], f.interval)]
        elif isinstance(f, Until):
            out = self._until(self.sat(f.lhs), self.sat(f.rhs), f.interval)
        else:
            raise TypeError(f"not an MTL formula: {f!r}")
        self.memo[key] = out
        return out

    def _until(self, phi: list[bool], psi: list[bool], iv: Interval) -> list[bool]:
        n = self.n
        out = [False] * n
        if iv is None:
            nxt = False
            for i in range(n - 1, -1, -1):
                nxt = psi[i] or (phi[i] and nxt)
                out[i] = nxt
            return out
        # first index >= i where phi fails; j may go up to there
        stop = [n - 1] * n
        nf = n - 1
        for i in range(n - 1, -1, -1):
            if not phi[i]:
                nf = i
            stop[i] = nf
        prefix = [0]
        for v in psi:
            prefix.append(prefix[-1] + (1 if v else 0))
        a, b = iv
        t = self.t
        for i in range(n):
            lo = bisect_left(t, a, lo=i, key=lambda tj, ti=t[i]: tj - ti)
            hi = bisect_right(t, b, lo=i, key=lambda tj, ti=t[i]: tj - ti) - 1
            hi = min(hi, stop[i])
            out[i] = lo <= hi and prefix[hi + 1] - prefix[lo] > 0
        return out

    def explain(self, f: Formula, i: int) -> tuple[int, Formula]:
        """Earliest index (from ``i``) and subformula responsible for ``f`` failing at ``i``."""
        if isinstance(f, And):
            if not self.sat(f.lhs)[i]:
                return self.explain(f.lhs, i)
            return self.explain(f.rhs, i)
        if isinstance(f, Implies):
            return self.explain(f.rhs, i)
        if isinstance(f, Always):
            body = self.sat(f.arg)
            for j in range(i, self.n):
                d = self.t[j] - self.t[i]
                if f.interval is not None and d > f.interval[1]:
                    break
                if (f.interval is None or d >= f.interval[0]) and not body[j]:
                    return self.explain(f.arg, j)
        return i, f


def check_trace(trace, f: Formula | str, env: Mapping | None = None) -> Verdict:
    """Check ``f`` at the first record of ``trace``.

    ``env`` supplies constants, formulas and quoted labels (keyed ``'"name"'``)
    that atoms may use besides the snapshot variables.
    """
    if isinstance(f, str):
        f = parse_mtl(f)
    times, snaps = trace_points(trace)
    if not times:
        raise MtlError("trace is empty")
    c = _Checker(times, snaps, env or {})
    if c.sat(f)[0]:
        return Verdict(True)
    i, sub = c.explain(f, 0)
    return Verdict(False, i, to_string(sub))


# ---------------------------------------------------------------- validation properties


def detection_property(zeta: Expr, inact: Expr, activ: Expr, d: float) -> Formula:
    """G(zeta & inact -> zeta U[0,d] activ): a detected cause is activated within ``d`` ms."""
    z = Atom(zeta)
    return Always(Implies(And(z, Atom(inact)), Until(z, Atom(activ), interval(0, d))))


def completion_property(final: Expr, activ: Expr, mitig: Expr, inact: Expr, mishap: Expr) -> Formula:
    """((F final) -> (G(activ -> F mitig) & G(mitig -> F inact))) & G !mishap."""
    live = And(Always(Implies(Atom(activ), Eventually(Atom(mitig)))),
               Always(Implies(Atom(mitig), Eventually(Atom(inact)))))
    return And(Implies(Eventually(Atom(final)), live), Always(Not(Atom(mishap))))


def _almost_sure(b: mc.Bound) -> bool:
    return b.opt is None and b.cmp == ">=" and b.value == 1


def translate(f, d: float | None = None) -> Formula:
    """MTL counterpart of a qualitative PCTL validation property.

    Only almost-sure path properties (``P>=1 [...]`` or ``A [...]``) over
    atoms, connectives, F, G and U translate; untimed U becomes U[0,d] when
    a deadline ``d`` (ms) is given.
    """
    if isinstance(f, str):
        f = mc.parse_pctl(f)
    if isinstance(f, mc.Atom):
        return Atom(f.expr)
    if isinstance(f, mc.Not):
        return Not(translate(f.arg, d))
    if isinstance(f, (mc.And, mc.Or, mc.Implies)):
        cls = {mc.And: And, mc.Or: Or, mc.Implies: Implies}[type(f)]
        return cls(translate(f.lhs, d), translate(f.rhs, d))
    if isinstance(f, mc.Prob) and _almost_sure(f.bound):
        return _path(f.path, d)
    if isinstance(f, mc.Quant) and f.kind == "A":
        return _path(f.path, d)
    raise MtlError("no MTL counterpart: only almost-sure path properties translate")


def _path(p, d):
    if getattr(p, "bound", None) is not None:
        raise MtlError("no MTL counterpart: step bounds have no timed meaning")
    if isinstance(p, mc.Globally):
        return Always(translate(p.arg, d))
    if isinstance(p, mc.Eventually):
        return Eventually(translate(p.arg, d))
    if isinstance(p, mc.Until):
        return Until(translate(p.lhs, d), translate(p.rhs, d), None if d is None else interval(0, d))
    raise MtlError(f"no MTL counterpart for path operator {type(p).__name__}")
