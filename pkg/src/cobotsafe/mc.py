"""Explicit-state probabilistic model checking over expanded models.

Numeric routines take boolean state vectors; ``check`` evaluates PCTL text or
trees against an :class:`~cobotsafe.pgcl.ExplicitModel`.  Deadlock states are
treated as absorbing with zero reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .expr import BOOL, Expr, ExprError, Parser, tokenize
from .pgcl import ExplicitModel, Policy

EPSILON = 1e-8
MAX_ITERS = 1_000_000
TIE_TOL = 1e-9


class CheckError(ValueError):
    pass


class InfiniteReward(CheckError):
    def __init__(self, what: str = "expected reward is infinite"):
        super().__init__(f"infinite: {what}")


# ---------------------------------------------------------------- formula tree


@dataclass(frozen=True)
class Atom:
    expr: Expr


@dataclass(frozen=True)
class Not:
    arg: "StateFormula"


@dataclass(frozen=True)
class And:
    lhs: "StateFormula"
    rhs: "StateFormula"


@dataclass(frozen=True)
class Or:
    lhs: "StateFormula"
    rhs: "StateFormula"


@dataclass(frozen=True)
class Implies:
    lhs: "StateFormula"
    rhs: "StateFormula"


@dataclass(frozen=True)
class Next:
    arg: "StateFormula"


@dataclass(frozen=True)
class Until:
    lhs: "StateFormula"
    rhs: "StateFormula"
    bound: int | None = None


@dataclass(frozen=True)
class WeakUntil:
    lhs: "StateFormula"
    rhs: "StateFormula"


@dataclass(frozen=True)
class Eventually:
    arg: "StateFormula"
    bound: int | None = None


@dataclass(frozen=True)
class Globally:
    arg: "StateFormula"
    bound: int | None = None


PathFormula = Union[Next, Until, WeakUntil, Eventually, Globally]


@dataclass(frozen=True)
class Quant:
    """Qualitative path quantifier over the underlying graph: ``E`` or ``A``."""

    kind: str
    path: PathFormula


@dataclass(frozen=True)
class Bound:
    """``min``/``max``/None plus either ``=?`` (cmp None) or a comparison with a threshold."""

    opt: str | None
    cmp: str | None
    value: float | None

    @property
    def query(self) -> bool:
        return self.cmp is None


@dataclass(frozen=True)
class Prob:
    bound: Bound
    path: PathFormula


@dataclass(frozen=True)
class Cumulative:
    bound: int | None = None


@dataclass(frozen=True)
class Reward:
    struct: str | None
    bound: Bound
    objective: Union[Eventually, Cumulative]


@dataclass(frozen=True)
class Steady:
    bound: Bound
    arg: "StateFormula"


@dataclass(frozen=True)
class Filter:
    fn: str
    inner: "StateFormula"
    region: "StateFormula"


StateFormula = Union[Atom, Not, And, Or, Implies, Quant, Prob, Reward, Steady, Filter]

_CMPS = ("<", "<=", ">", ">=")


class _PctlParser(Parser):
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
        e = self.unary_f()
        while self.accept("&"):
            e = And(e, self.unary_f())
        return e

    def unary_f(self):
        if self.accept("!"):
            return Not(self.unary_f())
        tok = self.tok
        if tok.kind == "id":
            op = self.operator()
            if op is not None:
                return op
        if self.at("("):
            start = self.i
            try:
                e = self.comparison()
                if self.at("U", "W", "]", ")", "&", "|", "=>", ",", "eof") or self.tok.kind == "eof":
                    return Atom(e)
                raise self.error("not an atom")
            except ExprError:
                self.i = start
            self.expect("(")
            e = self.formula()
            self.expect(")")
            return e
        return Atom(self.comparison())

    def _bound(self, opt: str | None) -> Bound:
        if self.accept("="):
            self.expect("?")
            return Bound(opt, None, None)
        for c in _CMPS:
            if self.accept(c):
                tok = self.expect_kind("num")
                return Bound(opt, c, float(tok.text))
        raise self.error("expected '=?' or a comparison bound")

    def operator(self):
        text = self.tok.text
        nxt = self.peek()
        if text in ("E", "A") and (nxt.text in ("[", "F", "G", "X") or nxt.text == "("):
            self.i += 1
            if self.accept("["):
                path = self.path()
                self.expect("]")
            else:
                path = self.path()
            return Quant(text, path)
        if text in ("P", "Pmin", "Pmax") and nxt.text in ("=", "<", "<=", ">", ">=", "min", "max"):
            self.i += 1
            opt = text[1:] or None
            if opt is None and self.at("min", "max"):
                opt = self.tok.text
                self.i += 1
            b = self._bound(opt)
            self.expect("[")
            path = self.path()
            self.expect("]")
            return Prob(b, path)
        if text in ("R", "Rmin", "Rmax") and nxt.text in ("=", "<", "<=", ">", ">=", "{", "min", "max"):
            self.i += 1
            struct = None
            if self.accept("{"):
                struct = self.expect_kind("str").text[1:-1]
                self.expect("}")
            opt = text[1:] or None
            if opt is None and self.at("min", "max"):
                opt = self.tok.text
                self.i += 1
            b = self._bound(opt)
            self.expect("[")
            if self.accept("C"):
                k = None
                if self.accept("<="):
                    k = int(self.expect_kind("num").text)
                obj = Cumulative(k)
            elif self.accept("F"):
                obj = Eventually(self.formula())
            else:
                raise self.error("expected 'C' or 'F' in reward objective")
            self.expect("]")
            return Reward(struct, b, obj)
        if text == "S" and nxt.text in ("=", "<", "<=", ">", ">="):
            self.i += 1
            b = self._bound(None)
            self.expect("[")
            arg = self.formula()
            self.expect("]")
            return Steady(b, arg)
        if text == "filter" and nxt.text == "(":
            self.i += 2
            fn = self.expect_kind("id").text
            if fn not in ("min", "max", "avg"):
                raise self.error(f"unknown filter function {fn}")
            self.expect(",")
            inner = self.formula()
            self.expect(",")
            region = self.formula()
            self.expect(")")
            return Filter(fn, inner, region)
        return None

    def _step_bound(self) -> int | None:
        if self.accept("<="):
            return int(self.expect_kind("num").text)
        return None

    def path(self) -> PathFormula:
        if self.tok.kind == "id" and self.tok.text in ("F", "G", "X") and self.peek().text not in _CMPS + ("=", "!="):
            op = self.tok.text
            self.i += 1
            if op == "X":
                return Next(self.formula())
            k = self._step_bound()
            arg = self.formula()
            return Eventually(arg, k) if op == "F" else Globally(arg, k)
        if self.tok.kind == "id" and self.tok.text in ("F", "G") and self.peek().text == "<=":
            op = self.tok.text
            self.i += 1
            k = self._step_bound()
            arg = self.formula()
            return Eventually(arg, k) if op == "F" else Globally(arg, k)
        lhs = self.formula()
        if self.accept("U"):
            k = self._step_bound()
            return Until(lhs, self.formula(), k)
        if self.accept("W"):
            return WeakUntil(lhs, self.formula())
        raise self.error("expected a path formula (X, F, G, U or W)")


def parse_pctl(text: str) -> StateFormula:
    p = _PctlParser(text)
    f = p.formula()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return f


def parse_properties(text: str) -> list[tuple[str, StateFormula]]:
    """One property per line; blank lines and ``//`` or ``#`` comments are skipped."""
    out = []
    for line in text.splitlines():
        body = line.split("//", 1)[0].strip()
        if not body or body.startswith("#"):
            continue
        out.append((body, parse_pctl(body)))
    return out


# ---------------------------------------------------------------- graph helpers


def _owner(x: ExplicitModel) -> np.ndarray:
    return np.repeat(np.arange(x.n_states), np.diff(x.choice_start))


def _state_graph(x: ExplicitModel) -> sp.csr_matrix:
    """Adjacency over states; deadlocks get a self-loop."""
    key = ("graph",)
    if key in x._cache:
        return x._cache[key]
    coo = x.trans.tocoo()
    own = _owner(x)
    dead = np.flatnonzero(x.deadlocks())
    rows = np.concatenate([own[coo.row], dead])
    cols = np.concatenate([coo.col, dead])
    g = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(x.n_states, x.n_states))
    g.data[:] = 1
    x._cache[key] = g
    return g


def _backward(x: ExplicitModel, through: np.ndarray, target: np.ndarray) -> np.ndarray:
    """States with a graph path that stays in ``through`` until hitting ``target``."""
    key = ("pred",)
    if key not in x._cache:
        x._cache[key] = _state_graph(x).T.tocsr()
    pred = x._cache[key]
    seen = target.copy()
    frontier = np.flatnonzero(target)
    while frontier.size:
        cand = np.unique(pred[frontier].indices)
        cand = cand[~seen[cand] & through[cand]]
        seen[cand] = True
        frontier = cand
    return seen


def _exists_globally(x: ExplicitModel, phi: np.ndarray) -> np.ndarray:
    g = _state_graph(x)
    cur = phi.copy()
    while True:
        nxt = cur & (np.asarray(g @ cur.astype(float)).ravel() > 0)
        if np.array_equal(nxt, cur):
            return cur
        cur = nxt


def _choice_hits(x: ExplicitModel, target: np.ndarray) -> np.ndarray:
    return np.asarray(x.trans @ target.astype(float)).ravel() > 0


def _choice_within(x: ExplicitModel, region: np.ndarray) -> np.ndarray:
    out = x.trans @ (~region).astype(float)
    return np.asarray(out).ravel() <= 0


def _all_choices(x: ExplicitModel, flags: np.ndarray) -> np.ndarray:
    """Per state: every choice satisfies ``flags`` (False for deadlocks)."""
    res = np.zeros(x.n_states, dtype=bool)
    has = ~x.deadlocks()
    if flags.size:
        idx = x.choice_start[:-1][has]
        res[has] = np.logical_and.reduceat(flags, idx)
    return res


def _any_choice(x: ExplicitModel, flags: np.ndarray) -> np.ndarray:
    res = np.zeros(x.n_states, dtype=bool)
    has = ~x.deadlocks()
    if flags.size:
        idx = x.choice_start[:-1][has]
        res[has] = np.logical_or.reduceat(flags, idx)
    return res


def _reduce(x: ExplicitModel, q: np.ndarray, mode: str, fill: float = 0.0) -> np.ndarray:
    out = np.full(x.n_states, fill, dtype=float)
    has = ~x.deadlocks()
    if q.size:
        idx = x.choice_start[:-1][has]
        fn = np.minimum if mode == "min" else np.maximum
        out[has] = fn.reduceat(q, idx)
    return out


def _mode(x: ExplicitModel, mode: str | None) -> str:
    if mode in (None, "exact"):
        if x.kind != "dtmc":
            raise CheckError("a plain probability or reward query needs a DTMC; use min or max")
        return "max"
    if mode not in ("min", "max"):
        raise CheckError(f"unknown optimisation mode {mode}")
    return mode


# ---------------------------------------------------------------- qualitative precomputation


def prob0(x: ExplicitModel, phi: np.ndarray, psi: np.ndarray, mode: str) -> np.ndarray:
    """States where the optimal probability of ``phi U psi`` is 0."""
    if mode == "max":
        return ~_backward(x, phi & ~psi, psi)
    reach = psi.copy()
    maybe = phi & ~psi
    while True:
        add = maybe & ~reach & _all_choices(x, _choice_hits(x, reach))
        if not add.any():
            return ~reach
        reach |= add


def prob1(x: ExplicitModel, phi: np.ndarray, psi: np.ndarray, mode: str) -> np.ndarray:
    """States where the optimal probability of ``phi U psi`` is 1."""
    maybe = phi & ~psi
    if mode == "min":
        zero = prob0(x, phi, psi, "min")
        return ~_backward(x, maybe, zero)
    u = np.ones(x.n_states, dtype=bool)
    while True:
        r = psi.copy()
        stay = _choice_within(x, u)
        while True:
            ok = stay & _choice_hits(x, r)
            add = maybe & u & ~r & _any_choice(x, ok)
            if not add.any():
                break
            r |= add
        if np.array_equal(r, u):
            return u
        u = r


# ---------------------------------------------------------------- numeric routines


def _iterate(step, v0: np.ndarray, eps: float, max_iters: int) -> np.ndarray:
    v = v0
    for _ in range(max_iters):
        nv = step(v)
        diff = np.max(np.abs(nv - v)) if v.size else 0.0
        v = nv
        if diff < eps:
            return v
    raise CheckError(f"value iteration did not converge within {max_iters} iterations")


def prob_until(x: ExplicitModel, phi: np.ndarray, psi: np.ndarray, bound: int | None = None,
               mode: str | None = None, eps: float = EPSILON, max_iters: int = MAX_ITERS) -> np.ndarray:
    mode = _mode(x, mode)
    phi = np.asarray(phi, dtype=bool)
    psi = np.asarray(psi, dtype=bool)
    if bound is not None:
        v = psi.astype(float)
        maybe = phi & ~psi
        for _ in range(bound):
            q = np.asarray(x.trans @ v).ravel()
            nv = _reduce(x, q, mode)
            v = np.where(psi, 1.0, np.where(maybe & ~x.deadlocks(), nv, 0.0))
        return v
    no = prob0(x, phi, psi, mode)
    yes = prob1(x, phi, psi, mode) & ~no
    maybe = ~no & ~yes
    v = yes.astype(float)
    if not maybe.any():
        return v

    def step(v):
        q = np.asarray(x.trans @ v).ravel()
        return np.where(maybe, _reduce(x, q, mode), v)

    return _iterate(step, v, eps, max_iters)


def prob_weak_until(x: ExplicitModel, phi: np.ndarray, psi: np.ndarray, mode: str | None = None,
                    eps: float = EPSILON, max_iters: int = MAX_ITERS) -> np.ndarray:
    """``P[phi W psi] = 1 - P'[(phi & !psi) U (!phi & !psi)]`` with the opposite optimisation."""
    phi = np.asarray(phi, dtype=bool)
    psi = np.asarray(psi, dtype=bool)
    m = _mode(x, mode)
    dual = None if x.kind == "dtmc" and mode in (None, "exact") else ("min" if m == "max" else "max")
    return 1.0 - prob_until(x, phi & ~psi, ~phi & ~psi, mode=dual, eps=eps, max_iters=max_iters)


def maximal_end_components(x: ExplicitModel) -> tuple[list[np.ndarray], np.ndarray]:
    """MECs as state-index arrays, plus a per-choice flag marking choices internal to a MEC."""
    own = _owner(x)
    alive_c = np.ones(x.n_choices, dtype=bool)
    alive_s = ~x.deadlocks()
    coo = x.trans.tocoo()
    while True:
        mask = alive_c[coo.row]
        g = sp.csr_matrix((np.ones(mask.sum()), (own[coo.row[mask]], coo.col[mask])),
                          shape=(x.n_states, x.n_states))
        _, comp = connected_components(g, directed=True, connection="strong")
        leaving = np.zeros(x.n_choices, dtype=bool)
        bad = comp[own[coo.row]] != comp[coo.col]
        leaving[coo.row[bad]] = True
        leaving |= ~alive_s[own]
        new_c = alive_c & ~leaving
        new_s = alive_s & _any_choice(x, new_c)
        if np.array_equal(new_c, alive_c) and np.array_equal(new_s, alive_s):
            break
        alive_c, alive_s = new_c, new_s
    groups: dict[int, list[int]] = {}
    for s in np.flatnonzero(alive_s):
        groups.setdefault(int(comp[s]), []).append(int(s))
    mecs = [np.asarray(v) for _, v in sorted(groups.items(), key=lambda kv: kv[1][0])]
    return mecs, alive_c


def expected_reward(x: ExplicitModel, struct: str, objective, mode: str | None = None,
                    eps: float = EPSILON, max_iters: int = MAX_ITERS) -> np.ndarray:
    """Expected accumulated reward for ``Eventually(target)`` (boolean vector) or ``Cumulative``."""
    if struct not in x.rewards:
        raise CheckError(f"unknown reward structure {struct!r}")
    m = _mode(x, mode)
    r = x.rewards[struct]
    if np.any(r < 0):
        raise CheckError(f"reward structure {struct!r} has negative values")
    if isinstance(objective, Cumulative):
        if objective.bound is not None:
            v = np.zeros(x.n_states)
            for _ in range(objective.bound):
                v = _reduce(x, r + np.asarray(x.trans @ v).ravel(), m)
            return v
        return _total_reward(x, r, m, eps, max_iters)
    target = np.asarray(objective, dtype=bool)
    return _reach_reward(x, r, target, m, eps, max_iters)


def _total_reward(x, r, mode, eps, max_iters):
    mecs, internal = maximal_end_components(x)
    own = _owner(x)
    positive = np.zeros(x.n_states, dtype=bool)
    for comp in mecs:
        inside = np.zeros(x.n_states, dtype=bool)
        inside[comp] = True
        if np.any(r[internal & inside[own]] > 0):
            positive |= inside
    if mode == "min" and x.kind != "dtmc" and positive.any():
        raise CheckError("minimal total reward is only supported when no end component carries reward")
    inf = _backward(x, np.ones(x.n_states, dtype=bool), positive)
    finite = ~inf

    def step(v):
        q = r + np.asarray(x.trans @ np.where(finite, v, 0.0)).ravel()
        return np.where(finite, _reduce(x, q, mode), v)

    v = _iterate(step, np.zeros(x.n_states), eps, max_iters)
    v[inf] = np.inf
    return v


def _reach_reward(x, r, target, mode, eps, max_iters):
    ones = np.ones(x.n_states, dtype=bool)
    # max: any policy that may miss the target makes the reward infinite
    sure = prob1(x, ones, target, "min" if mode == "max" else "max")
    finite = sure | target
    inf = ~finite
    if mode == "min":
        allowed = _choice_within(x, finite)
    else:
        allowed = np.ones(x.n_choices, dtype=bool)
    v = np.zeros(x.n_states)
    active = finite & ~target
    fill = np.inf if mode == "min" else -np.inf

    def step(v):
        q = r + np.asarray(x.trans @ np.where(finite, v, 0.0)).ravel()
        q = np.where(allowed, q, fill)
        return np.where(active, _reduce(x, q, mode), 0.0)

    v = _iterate(step, v, eps, max_iters)
    v[inf] = np.inf
    return v


def bsccs(x: ExplicitModel) -> list[np.ndarray]:
    """Bottom strongly connected components of a DTMC's state graph, ordered by smallest member."""
    g = _state_graph(x)
    n, comp = connected_components(g, directed=True, connection="strong")
    coo = g.tocoo()
    leaves = np.ones(n, dtype=bool)
    cross = comp[coo.row] != comp[coo.col]
    leaves[comp[coo.row[cross]]] = False
    out = []
    for c in np.flatnonzero(leaves):
        out.append(np.flatnonzero(comp == c))
    out.sort(key=lambda a: a[0])
    return out


def stationary(x: ExplicitModel, states: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Stationary distribution of the chain restricted to one BSCC."""
    k = len(states)
    if k == 1:
        return np.ones(1)
    rows = x.choice_start[states]
    p = x.trans[rows][:, states].tocsc().astype(float)
    a = (p.T - sp.identity(k, format="csc")).tolil()
    a[0, :] = np.ones(k)
    b = np.zeros(k)
    b[0] = 1.0
    pi = spsolve(a.tocsc(), b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.max(np.abs(p.T @ pi - pi))
    if resid > tol:
        raise CheckError(f"stationary solve residual {resid:g} exceeds {tol:g}")
    return pi


def steady_state_vector(x: ExplicitModel, eps: float = EPSILON) -> tuple[np.ndarray, list[np.ndarray]]:
    """Long-run distribution from the initial state and the BSCC list."""
    if x.kind != "dtmc":
        raise CheckError("steady-state analysis needs a DTMC")
    comps = bsccs(x)
    dist = np.zeros(x.n_states)
    for comp, reach in zip(comps, absorption(x, comps)):
        if reach > 0:
            dist[comp] += reach * stationary(x, comp)
    return dist, comps


def absorption(x: ExplicitModel, comps: list[np.ndarray]) -> np.ndarray:
    """Probability of ending in each BSCC from the initial state (direct sparse solve)."""
    which = np.full(x.n_states, -1)
    for k, comp in enumerate(comps):
        which[comp] = k
    out = np.zeros(len(comps))
    if which[x.initial] >= 0:
        out[which[x.initial]] = 1.0
        return out
    transient = np.flatnonzero(which < 0)
    # transient states are never deadlocks, so each owns exactly one row
    p = x.trans[x.choice_start[transient]].tocsc()
    a = sp.identity(len(transient), format="csc") - p[:, transient]
    b = np.zeros((len(transient), len(comps)))
    for k, comp in enumerate(comps):
        b[:, k] = np.asarray(p[:, comp].sum(axis=1)).ravel()
    sol = spsolve(a, b).reshape(len(transient), len(comps))
    row = int(np.searchsorted(transient, x.initial))
    return np.clip(sol[row], 0.0, 1.0)


def steady_state(x: ExplicitModel, ap, eps: float = EPSILON) -> float:
    dist, _ = steady_state_vector(x, eps)
    return float(dist[_states(x, ap)].sum())


# ---------------------------------------------------------------- accident freedom and synthesis


def _states(x: ExplicitModel, e) -> np.ndarray:
    if isinstance(e, np.ndarray):
        return e.astype(bool)
    if isinstance(e, str):
        return sat_states(x, parse_pctl(e))
    if isinstance(e, (Atom, Not, And, Or, Implies, Quant, Prob, Reward, Steady)):
        return sat_states(x, e)
    return x.sat(e)


def accident_freedom(x: ExplicitModel, unsafe, mishap, target, eps: float = EPSILON) -> tuple[float, float, float]:
    """(min, mean, max) over unsafe states of the minimal probability of ``!mishap W target``."""
    xi = _states(x, unsafe)
    if not xi.any():
        raise CheckError("the unsafe region is empty")
    mode = None if x.kind == "dtmc" else "min"
    v = prob_weak_until(x, ~_states(x, mishap), _states(x, target), mode=mode, eps=eps)[xi]
    return float(v.min()), float(v.mean()), float(v.max())


def _objective_values(x: ExplicitModel, objective, mode: str, eps: float):
    """Optimal values plus per-choice Q-values and an optional progress target."""
    if isinstance(objective, Prob):
        path = objective.path
        phi, psi = _until_parts(x, path)
        if isinstance(path, (Globally, WeakUntil)) or getattr(path, "bound", None) is not None:
            raise CheckError("policy synthesis supports unbounded reachability and reward objectives")
        v = prob_until(x, phi, psi, mode=mode, eps=eps)
        q = np.asarray(x.trans @ v).ravel()
        return v, q, (psi if mode == "max" else None)
    if isinstance(objective, Reward):
        struct = objective.struct or next(iter(x.rewards))
        obj = objective.objective
        if isinstance(obj, Cumulative) and obj.bound is not None:
            raise CheckError("policy synthesis supports unbounded reachability and reward objectives")
        target = None if isinstance(obj, Cumulative) else sat_states(x, obj.arg)
        v = expected_reward(x, struct, Cumulative() if target is None else target, mode=mode, eps=eps)
        if np.isinf(v[x.initial]):
            raise InfiniteReward(f"R{{{struct!r}}}{mode} at the initial state")
        vv = np.where(np.isinf(v), 0.0, v)
        q = x.rewards[struct] + np.asarray(x.trans @ vv).ravel()
        inf_choice = np.asarray(x.trans @ np.isinf(v).astype(float)).ravel() > 0
        q = np.where(inf_choice, np.inf, q)
        if target is None:
            target = v <= TIE_TOL if mode == "max" else None
        return v, q, target
    raise CheckError("objective must be a P or R operator")


def synth_optimal_policy(x: ExplicitModel, objective, direction: str, eps: float = EPSILON) -> tuple[Policy, float]:
    """Memoryless deterministic optimal policy; ties go to the smallest action label.

    Where progress matters (maximal reachability, rewards until a target) the
    tie-break is applied within an attractor so the policy cannot stall in a loop
    of equally valued choices.
    """
    if isinstance(objective, str):
        objective = parse_pctl(objective)
    mode = direction
    if mode not in ("min", "max"):
        raise CheckError("direction must be min or max")
    v, q, progress = _objective_values(x, objective, mode, eps)
    own = _owner(x)
    tol = TIE_TOL + eps * 10
    best = v[own]
    with np.errstate(invalid="ignore"):
        optimal = np.abs(np.where(np.isinf(q) & np.isinf(best), 0.0, q - best)) <= tol * np.maximum(1.0, np.abs(np.where(np.isinf(best), 0.0, best)))
    choice: dict[int, int] = {}
    labels = x.choice_labels

    def pick(s: int, cands) -> int:
        return min(cands, key=lambda c: (labels[c], c))

    if progress is not None:
        done = progress.copy()
        while True:
            hits = _choice_hits(x, done) & optimal
            new = {}
            for s in np.flatnonzero(~done & ~x.deadlocks()):
                cands = [c for c in range(x.choice_start[s], x.choice_start[s + 1]) if hits[c]]
                if cands:
                    new[int(s)] = pick(s, cands)
            if not new:
                break
            for s, c in new.items():
                choice[s] = c
                done[s] = True
    for s in range(x.n_states):
        if s in choice or x.choice_start[s] == x.choice_start[s + 1]:
            continue
        cs = range(x.choice_start[s], x.choice_start[s + 1])
        cands = [c for c in cs if optimal[c]] or list(cs)
        choice[s] = pick(s, cands)
    return Policy(choice), float(v[x.initial])


# ---------------------------------------------------------------- PCTL evaluation


def _until_parts(x: ExplicitModel, path) -> tuple[np.ndarray, np.ndarray]:
    ones = np.ones(x.n_states, dtype=bool)
    if isinstance(path, Until):
        return sat_states(x, path.lhs), sat_states(x, path.rhs)
    if isinstance(path, Eventually):
        return ones, sat_states(x, path.arg)
    if isinstance(path, Globally):
        return ones, ~sat_states(x, path.arg)
    if isinstance(path, WeakUntil):
        return sat_states(x, path.lhs), sat_states(x, path.rhs)
    raise CheckError("unsupported path formula")


def prob_values(x: ExplicitModel, path: PathFormula, opt: str | None, eps: float = EPSILON) -> np.ndarray:
    mode = opt
    if isinstance(path, Next):
        m = _mode(x, mode)
        q = np.asarray(x.trans @ sat_states(x, path.arg).astype(float)).ravel()
        out = _reduce(x, q, m)
        dead = x.deadlocks()
        out[dead] = sat_states(x, path.arg)[dead].astype(float)
        return out
    if isinstance(path, Until):
        return prob_until(x, sat_states(x, path.lhs), sat_states(x, path.rhs), path.bound, mode, eps)
    if isinstance(path, Eventually):
        return prob_until(x, np.ones(x.n_states, dtype=bool), sat_states(x, path.arg), path.bound, mode, eps)
    if isinstance(path, Globally):
        flip = None if mode is None else ("min" if mode == "max" else "max")
        _mode(x, mode)
        return 1.0 - prob_until(x, np.ones(x.n_states, dtype=bool), ~sat_states(x, path.arg), path.bound, flip, eps)
    if isinstance(path, WeakUntil):
        return prob_weak_until(x, sat_states(x, path.lhs), sat_states(x, path.rhs), mode, eps)
    raise CheckError("unsupported path formula")


def _opt_for_bound(x: ExplicitModel, b: Bound) -> str | None:
    if b.opt is not None:
        if x.kind == "dtmc":
            raise CheckError("min/max operators need an MDP")
        return b.opt
    if x.kind == "dtmc":
        return None
    if b.query:
        raise CheckError("a plain =? query needs a DTMC; use min=? or max=?")
    return "min" if b.cmp in (">", ">=") else "max"


def values(x: ExplicitModel, f: StateFormula, eps: float = EPSILON) -> np.ndarray:
    """Per-state numeric values of a P, R or S operator (thresholds ignored)."""
    if isinstance(f, Prob):
        return prob_values(x, f.path, _opt_for_bound(x, f.bound), eps)
    if isinstance(f, Reward):
        struct = f.struct if f.struct is not None else next(iter(x.rewards), None)
        if struct is None:
            raise CheckError("model has no reward structures")
        opt = _opt_for_bound(x, f.bound)
        obj = f.objective
        objective = obj if isinstance(obj, Cumulative) else sat_states(x, obj.arg)
        return expected_reward(x, struct, objective, opt, eps)
    if isinstance(f, Steady):
        if x.kind != "dtmc":
            raise CheckError("steady-state analysis needs a DTMC")
        comps = bsccs(x)
        target = sat_states(x, f.arg)
        ones = np.ones(x.n_states, dtype=bool)
        out = np.zeros(x.n_states)
        for comp in comps:
            mass = stationary(x, comp)[target[comp]].sum()
            if mass > 0:
                tgt = np.zeros(x.n_states, dtype=bool)
                tgt[comp] = True
                out += mass * prob_until(x, ones, tgt, eps=eps)
        return out
    raise CheckError("only P, R and S operators have numeric values")


def _compare(v: np.ndarray, cmp: str, b: float) -> np.ndarray:
    return {"<": v < b, "<=": v <= b, ">": v > b, ">=": v >= b}[cmp]


def sat_states(x: ExplicitModel, f: StateFormula, eps: float = EPSILON) -> np.ndarray:
    if isinstance(f, Atom):
        return x.sat(f.expr)
    if isinstance(f, Not):
        return ~sat_states(x, f.arg, eps)
    if isinstance(f, And):
        return sat_states(x, f.lhs, eps) & sat_states(x, f.rhs, eps)
    if isinstance(f, Or):
        return sat_states(x, f.lhs, eps) | sat_states(x, f.rhs, eps)
    if isinstance(f, Implies):
        return ~sat_states(x, f.lhs, eps) | sat_states(x, f.rhs, eps)
    if isinstance(f, Quant):
        return _quant(x, f)
    if isinstance(f, (Prob, Reward, Steady)):
        if f.bound.query:
            raise CheckError("=? queries are only allowed at the top level")
        return _compare(values(x, f, eps), f.bound.cmp, f.bound.value)
    if isinstance(f, Filter):
        raise CheckError("filter is only allowed at the top level")
    raise CheckError(f"unsupported formula {f!r}")


def _quant(x: ExplicitModel, f: Quant) -> np.ndarray:
    ones = np.ones(x.n_states, dtype=bool)
    p = f.path
    if getattr(p, "bound", None) is not None:
        raise CheckError("step bounds are not supported under E/A")
    g = _state_graph(x)

    def e_next(phi):
        return np.asarray(g @ phi.astype(float)).ravel() > 0

    def e_until(phi, psi):
        return _backward(x, phi, psi)

    def e_glob(phi):
        return _exists_globally(x, phi)

    if f.kind == "E":
        if isinstance(p, Next):
            return e_next(sat_states(x, p.arg))
        if isinstance(p, Eventually):
            return e_until(ones, sat_states(x, p.arg))
        if isinstance(p, Globally):
            return e_glob(sat_states(x, p.arg))
        phi, psi = sat_states(x, p.lhs), sat_states(x, p.rhs)
        if isinstance(p, Until):
            return e_until(phi, psi)
        return e_until(phi, psi) | e_glob(phi)
    if isinstance(p, Next):
        return ~e_next(~sat_states(x, p.arg))
    if isinstance(p, Eventually):
        return ~e_glob(~sat_states(x, p.arg))
    if isinstance(p, Globally):
        return ~e_until(ones, ~sat_states(x, p.arg))
    phi, psi = sat_states(x, p.lhs), sat_states(x, p.rhs)
    bad = e_until(~psi, ~phi & ~psi)
    if isinstance(p, Until):
        return ~(bad | e_glob(~psi))
    return ~bad


def check(x: ExplicitModel, f: StateFormula | str, eps: float = EPSILON):
    """Value at the initial state: a float for ``=?`` queries and filters, else a bool."""
    if isinstance(f, str):
        f = parse_pctl(f)
    if isinstance(f, Filter):
        region = sat_states(x, f.region, eps)
        if not region.any():
            raise CheckError("filter region is empty")
        inner = f.inner
        if isinstance(inner, (Prob, Reward, Steady)) and inner.bound.query:
            v = values(x, inner, eps)[region]
        else:
            v = sat_states(x, inner, eps)[region].astype(float)
        return float({"min": np.min, "max": np.max, "avg": np.mean}[f.fn](v))
    if isinstance(f, (Prob, Reward, Steady)) and f.bound.query:
        if isinstance(f, Steady):
            return steady_state(x, f.arg, eps)
        return float(values(x, f, eps)[x.initial])
    return bool(sat_states(x, f, eps)[x.initial])


def check_text(x: ExplicitModel, properties: str, eps: float = EPSILON) -> list[tuple[str, object]]:
    return [(text, check(x, f, eps)) for text, f in parse_properties(properties)]
