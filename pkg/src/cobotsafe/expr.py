"""Typed expressions over model variables.

The surface syntax is the guard/update language of guarded-command models:
literals, identifiers, quoted labels, arithmetic, comparisons, ``& | !``,
``=>`` and the conditional ``c ? a : b``.  Precedence from tightest to
loosest is ``!``/unary minus, ``* /``, ``+ -``, comparisons, ``&``, ``|``,
``=>``, ``?:``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

Value = Union[bool, int, float]

BOOL, INT, DOUBLE = "bool", "int", "double"

FUNCTIONS = {"mod": 2, "min": None, "max": None, "floor": 1, "ceil": 1, "pow": 2}


class ExprError(ValueError):
    """Syntax or type error, optionally carrying a character offset."""

    def __init__(self, message: str, pos: int | None = None, text: str | None = None):
        if pos is not None and text is not None:
            line = text.count("\n", 0, pos) + 1
            col = pos - (text.rfind("\n", 0, pos) + 1) + 1
            message = f"{message} (line {line}, column {col})"
        elif pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)
        self.pos = pos


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True, eq=False)
class Lit:
    value: Value

    # true and 1 are different literals even though Python equates them
    def _key(self):
        return (isinstance(self.value, bool), self.value)

    def __eq__(self, other):
        return isinstance(other, Lit) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class LabelRef:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Ite:
    cond: "Expr"
    then: "Expr"
    other: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expr = Union[Lit, Ident, LabelRef, Unary, Binary, Ite, Call]

TRUE = Lit(True)
FALSE = Lit(False)


@dataclass(frozen=True)
class VarDecl:
    """A state variable: ``bool`` or bounded ``int`` with an initial value."""

    name: str
    kind: str
    lo: int = 0
    hi: int = 1
    init: Value = False

    def __post_init__(self):
        if self.kind == INT:
            if not self.lo <= self.hi:
                raise ExprError(f"empty range for {self.name}: [{self.lo}..{self.hi}]")
            if isinstance(self.init, bool) or not self.lo <= self.init <= self.hi:
                raise ExprError(f"initial value {self.init} of {self.name} outside [{self.lo}..{self.hi}]")
        elif self.kind == BOOL:
            if not isinstance(self.init, bool):
                raise ExprError(f"initial value of boolean {self.name} must be true/false")
        else:
            raise ExprError(f"unsupported variable kind {self.kind!r}")

    def contains(self, value: Value) -> bool:
        if self.kind == BOOL:
            return isinstance(value, bool)
        return not isinstance(value, bool) and self.lo <= value <= self.hi


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<num>\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"\n]*")
  | (?P<op><=>|=>|->|<=|>=|!=|\.\.|[-+*/=<>&|!?:(),'\[\]{};.])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


# ---------------------------------------------------------------- parser

_COMPARISONS = ("=", "!=", "<", "<=", ">", ">=")


class Parser:
    """Recursive-descent parser over a token list; reusable by other grammars."""

    def __init__(self, text: str, tokens: list[Token] | None = None, start: int = 0):
        self.text = text
        self.tokens = tokens if tokens is not None else tokenize(text)
        self.i = start

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ExprError:
        tok = tok or self.tok
        return ExprError(message, tok.pos, self.text)

    def at(self, *texts: str) -> bool:
        return self.tok.kind in ("op", "id") and self.tok.text in texts

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r} but found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def expect_kind(self, kind: str) -> Token:
        if self.tok.kind != kind:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {kind} but found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def expression(self) -> Expr:
        cond = self.implication()
        if self.accept("?"):
            then = self.expression()
            self.expect(":")
            other = self.expression()
            return Ite(cond, then, other)
        return cond

    def implication(self) -> Expr:
        lhs = self.disjunction()
        while self.at("=>", "<=>"):
            op = self.tok.text
            self.i += 1
            lhs = Binary(op, lhs, self.disjunction())
        return lhs

    def disjunction(self) -> Expr:
        lhs = self.conjunction()
        while self.accept("|"):
            lhs = Binary("|", lhs, self.conjunction())
        return lhs

    def conjunction(self) -> Expr:
        lhs = self.comparison()
        while self.accept("&"):
            lhs = Binary("&", lhs, self.comparison())
        return lhs

    def comparison(self) -> Expr:
        lhs = self.additive()
        if self.at(*_COMPARISONS) and not (self.at("=") and self.peek().text == ">"):
            op = self.tok.text
            self.i += 1
            return Binary(op, lhs, self.additive())
        return lhs

    def additive(self) -> Expr:
        lhs = self.multiplicative()
        while self.at("+", "-"):
            op = self.tok.text
            self.i += 1
            lhs = Binary(op, lhs, self.multiplicative())
        return lhs

    def multiplicative(self) -> Expr:
        lhs = self.unary()
        while self.at("*", "/"):
            op_tok = self.tok
            self.i += 1
            rhs = self.unary()
            if op_tok.text == "/" and isinstance(rhs, Lit) and rhs.value == 0:
                raise self.error("division by constant zero", op_tok)
            lhs = Binary(op_tok.text, lhs, rhs)
        return lhs

    def unary(self) -> Expr:
        if self.accept("!"):
            return Unary("!", self.unary())
        if self.accept("-"):
            arg = self.unary()
            if isinstance(arg, Lit) and not isinstance(arg.value, bool):
                return Lit(-arg.value)
            return Unary("-", arg)
        return self.primary()

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            if re.fullmatch(r"\d+", tok.text):
                return Lit(int(tok.text))
            return Lit(float(tok.text))
        if tok.kind == "str":
            self.i += 1
            return LabelRef(tok.text[1:-1])
        if tok.kind == "id":
            self.i += 1
            if tok.text == "true":
                return TRUE
            if tok.text == "false":
                return FALSE
            if tok.text in FUNCTIONS and self.at("("):
                self.i += 1
                args = [self.expression()]
                while self.accept(","):
                    args.append(self.expression())
                self.expect(")")
                arity = FUNCTIONS[tok.text]
                if (arity is not None and len(args) != arity) or (arity is None and len(args) < 2):
                    raise self.error(f"wrong number of arguments to {tok.text}", tok)
                return Call(tok.text, tuple(args))
            return Ident(tok.text)
        if self.accept("("):
            inner = self.expression()
            self.expect(")")
            return inner
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}")


# ---------------------------------------------------------------- typing


def _numeric(t: str) -> bool:
    return t in (INT, DOUBLE)


def type_of(e: Expr, decls: Mapping[str, str]) -> str:
    """Infer the type of ``e``; ``decls`` maps identifiers (and quoted labels) to types."""
    if isinstance(e, Lit):
        if isinstance(e.value, bool):
            return BOOL
        return INT if isinstance(e.value, int) else DOUBLE
    if isinstance(e, Ident):
        if e.name not in decls:
            raise ExprError(f"unknown identifier {e.name!r}")
        return decls[e.name]
    if isinstance(e, LabelRef):
        key = f'"{e.name}"'
        if key not in decls:
            raise ExprError(f"unknown label {key}")
        return decls[key]
    if isinstance(e, Unary):
        t = type_of(e.arg, decls)
        if e.op == "!":
            if t != BOOL:
                raise ExprError(f"operand of ! must be bool, got {t}")
            return BOOL
        if not _numeric(t):
            raise ExprError(f"operand of unary - must be numeric, got {t}")
        return t
    if isinstance(e, Binary):
        lt, rt = type_of(e.lhs, decls), type_of(e.rhs, decls)
        if e.op in ("&", "|", "=>", "<=>"):
            if lt != BOOL or rt != BOOL:
                raise ExprError(f"operands of {e.op} must be bool, got {lt} and {rt}")
            return BOOL
        if e.op in ("=", "!="):
            if (lt == BOOL) != (rt == BOOL):
                raise ExprError(f"cannot compare {lt} with {rt}")
            return BOOL
        if not (_numeric(lt) and _numeric(rt)):
            raise ExprError(f"operands of {e.op} must be numeric, got {lt} and {rt}")
        if e.op in _COMPARISONS:
            return BOOL
        if e.op == "/":
            return DOUBLE
        return INT if lt == rt == INT else DOUBLE
    if isinstance(e, Ite):
        if type_of(e.cond, decls) != BOOL:
            raise ExprError("condition of ?: must be bool")
        a, b = type_of(e.then, decls), type_of(e.other, decls)
        if a == b:
            return a
        if _numeric(a) and _numeric(b):
            return DOUBLE
        raise ExprError(f"branches of ?: have incompatible types {a} and {b}")
    if isinstance(e, Call):
        ts = [type_of(a, decls) for a in e.args]
        if not all(_numeric(t) for t in ts):
            raise ExprError(f"arguments of {e.fn} must be numeric")
        if e.fn == "mod":
            if ts != [INT, INT]:
                raise ExprError("arguments of mod must be int")
            return INT
        if e.fn in ("floor", "ceil"):
            return INT
        if e.fn == "pow":
            return INT if ts == [INT, INT] else DOUBLE
        return INT if all(t == INT for t in ts) else DOUBLE
    raise TypeError(f"not an expression: {e!r}")


def parse_expr(text: str, decls: Mapping[str, str], expect: str | None = None) -> Expr:
    """Parse and type-check ``text`` against the declaration table ``decls``."""
    p = Parser(text)
    e = p.expression()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    try:
        t = type_of(e, decls)
    except ExprError as err:
        raise ExprError(f"{err} in {text.strip()!r}") from None
    if expect == BOOL and t != BOOL:
        raise ExprError(f"expected a boolean expression: {text.strip()!r}")
    if expect in (INT, DOUBLE) and not _numeric(t):
        raise ExprError(f"expected a numeric expression: {text.strip()!r}")
    return e


# ---------------------------------------------------------------- evaluation


def _div(a, b):
    if b == 0:
        raise ZeroDivisionError("division by zero in expression")
    return a / b


_BINARY: dict[str, Callable] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}

_CALLS: dict[str, Callable] = {
    "mod": lambda a, b: a % b,
    "min": min,
    "max": max,
    "floor": lambda a: int(math.floor(a)),
    "ceil": lambda a: int(math.ceil(a)),
    "pow": lambda a, b: a**b,
}


def evaluate(e: Expr, env: Mapping[str, Value]) -> Value:
    """Evaluate ``e`` in ``env``, a mapping from identifiers (and quoted labels) to values.

    Identifiers bound to expressions (formulas) are evaluated recursively.
    """
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Ident):
        v = env[e.name]
        return evaluate(v, env) if isinstance(v, (Unary, Binary, Ite, Call, Ident, LabelRef)) else v
    if isinstance(e, LabelRef):
        v = env[f'"{e.name}"']
        return evaluate(v, env) if not isinstance(v, (bool, int, float)) else v
    if isinstance(e, Unary):
        v = evaluate(e.arg, env)
        return (not v) if e.op == "!" else -v
    if isinstance(e, Binary):
        if e.op == "&":
            return bool(evaluate(e.lhs, env)) and bool(evaluate(e.rhs, env))
        if e.op == "|":
            return bool(evaluate(e.lhs, env)) or bool(evaluate(e.rhs, env))
        if e.op == "=>":
            return (not evaluate(e.lhs, env)) or bool(evaluate(e.rhs, env))
        if e.op == "<=>":
            return bool(evaluate(e.lhs, env)) == bool(evaluate(e.rhs, env))
        return _BINARY[e.op](evaluate(e.lhs, env), evaluate(e.rhs, env))
    if isinstance(e, Ite):
        return evaluate(e.then if evaluate(e.cond, env) else e.other, env)
    if isinstance(e, Call):
        return _CALLS[e.fn](*(evaluate(a, env) for a in e.args))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- printing

_LEVEL = {"=>": 1, "<=>": 1, "|": 2, "&": 3, "+": 5, "-": 5, "*": 6, "/": 6}
for _op in _COMPARISONS:
    _LEVEL[_op] = 4


def _level(e: Expr) -> int:
    if isinstance(e, Ite):
        return 0
    if isinstance(e, Binary):
        return _LEVEL[e.op]
    if isinstance(e, Unary):
        return 7
    if isinstance(e, Lit) and not isinstance(e.value, bool) and e.value < 0:
        return 7
    return 8


def _fmt_lit(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Pretty-print with the minimum parentheses needed to re-parse identically."""
    if isinstance(e, Lit):
        return _fmt_lit(e.value)
    if isinstance(e, Ident):
        return e.name
    if isinstance(e, LabelRef):
        return f'"{e.name}"'
    if isinstance(e, Unary):
        inner = to_text(e.arg)
        if _level(e.arg) < 8 or (e.op == "-" and inner.startswith("-")):
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        lvl = _LEVEL[e.op]
        lhs, rhs = to_text(e.lhs), to_text(e.rhs)
        # comparisons do not chain, other operators associate to the left
        if _level(e.lhs) < lvl or (lvl == 4 and _level(e.lhs) == 4):
            lhs = f"({lhs})"
        if _level(e.rhs) <= lvl:
            rhs = f"({rhs})"
        return f"{lhs}{e.op}{rhs}" if e.op in _COMPARISONS else f"{lhs} {e.op} {rhs}"
    if isinstance(e, Ite):
        cond = to_text(e.cond)
        if _level(e.cond) == 0:
            cond = f"({cond})"
        return f"{cond} ? {to_text(e.then)} : {to_text(e.other)}"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(to_text(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- helpers


def _flatten(op: str, parts) -> list:
    out = []
    for p in parts:
        if isinstance(p, Binary) and p.op == op:
            out.extend(_flatten(op, (p.lhs, p.rhs)))
        else:
            out.append(p)
    return out


def conj(*parts: Expr) -> Expr:
    """Flat left-nested conjunction, dropping ``true`` operands."""
    parts = [p for p in _flatten("&", parts) if p != TRUE]
    if not parts:
        return TRUE
    if any(p == FALSE for p in parts):
        return FALSE
    out = parts[0]
    for p in parts[1:]:
        out = Binary("&", out, p)
    return out


def disj(*parts: Expr) -> Expr:
    parts = [p for p in _flatten("|", parts) if p != FALSE]
    if not parts:
        return FALSE
    if any(p == TRUE for p in parts):
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = Binary("|", out, p)
    return out


def neg(e: Expr) -> Expr:
    if e == TRUE:
        return FALSE
    if e == FALSE:
        return TRUE
    return Unary("!", e)


def eq(name: str, value: Value | str) -> Expr:
    rhs = Ident(value) if isinstance(value, str) else Lit(value)
    return Binary("=", Ident(name), rhs)


def identifiers(e: Expr) -> set[str]:
    """Names of all identifiers occurring in ``e``."""
    if isinstance(e, Ident):
        return {e.name}
    if isinstance(e, Unary):
        return identifiers(e.arg)
    if isinstance(e, Binary):
        return identifiers(e.lhs) | identifiers(e.rhs)
    if isinstance(e, Ite):
        return identifiers(e.cond) | identifiers(e.then) | identifiers(e.other)
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= identifiers(a)
        return out
    return set()


def substitute(e: Expr, binding: Mapping[str, Expr]) -> Expr:
    """Replace identifiers (and quoted labels, keyed with quotes) by expressions."""
    if isinstance(e, Ident):
        return binding.get(e.name, e)
    if isinstance(e, LabelRef):
        return binding.get(f'"{e.name}"', e)
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, binding))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.lhs, binding), substitute(e.rhs, binding))
    if isinstance(e, Ite):
        return Ite(substitute(e.cond, binding), substitute(e.then, binding), substitute(e.other, binding))
    if isinstance(e, Call):
        return Call(e.fn, tuple(substitute(a, binding) for a in e.args))
    return e


def simplify(e: Expr) -> Expr:
    """Fold constant subexpressions; keeps the result type-equivalent."""
    if isinstance(e, Unary):
        a = simplify(e.arg)
        if isinstance(a, Lit):
            return Lit(not a.value) if e.op == "!" else Lit(-a.value)
        return Unary(e.op, a)
    if isinstance(e, Binary):
        a, b = simplify(e.lhs), simplify(e.rhs)
        if e.op == "&":
            if a == FALSE or b == FALSE:
                return FALSE
            if a == TRUE:
                return b
            if b == TRUE:
                return a
        elif e.op == "|":
            if a == TRUE or b == TRUE:
                return TRUE
            if a == FALSE:
                return b
            if b == FALSE:
                return a
        if isinstance(a, Lit) and isinstance(b, Lit):
            if e.op == "/" and b.value == 0:
                return Binary(e.op, a, b)
            return Lit(evaluate(Binary(e.op, a, b), {}))
        return Binary(e.op, a, b)
    if isinstance(e, Ite):
        c = simplify(e.cond)
        if isinstance(c, Lit):
            return simplify(e.then if c.value else e.other)
        return Ite(c, simplify(e.then), simplify(e.other))
    if isinstance(e, Call):
        args = tuple(simplify(a) for a in e.args)
        if all(isinstance(a, Lit) for a in args):
            return Lit(evaluate(Call(e.fn, args), {}))
        return Call(e.fn, args)
    return e


# ---------------------------------------------------------------- compilation

_PY_OP = {"&": "and", "|": "or", "=": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
          "+": "+", "-": "-", "*": "*", "/": "/"}


def to_python(e: Expr, slot: Mapping[str, str]) -> str:
    """Python source for ``e`` where each variable name maps to a source fragment.

    Used to build fast successor functions; ``e`` must be closed over variables
    (constants and formulas already substituted).
    """
    if isinstance(e, Lit):
        return repr(e.value)
    if isinstance(e, Ident):
        if e.name not in slot:
            raise ExprError(f"unbound identifier {e.name!r}")
        return slot[e.name]
    if isinstance(e, Unary):
        inner = to_python(e.arg, slot)
        return f"(not {inner})" if e.op == "!" else f"(-{inner})"
    if isinstance(e, Binary):
        lhs, rhs = to_python(e.lhs, slot), to_python(e.rhs, slot)
        if e.op == "=>":
            return f"((not {lhs}) or {rhs})"
        if e.op == "<=>":
            return f"(bool({lhs}) == bool({rhs}))"
        if e.op == "/":
            return f"_div({lhs}, {rhs})"
        return f"({lhs} {_PY_OP[e.op]} {rhs})"
    if isinstance(e, Ite):
        return f"({to_python(e.then, slot)} if {to_python(e.cond, slot)} else {to_python(e.other, slot)})"
    if isinstance(e, Call):
        args = ", ".join(to_python(a, slot) for a in e.args)
        return f"_{e.fn}({args})"
    raise ExprError(f"cannot compile {e!r}")


COMPILE_NAMESPACE = {"_div": _div, **{f"_{k}": v for k, v in _CALLS.items()}}
