"""Reference implementations used only by the tests.

Nothing here imports the package: values come from dense linear algebra,
exhaustive enumeration or the textbook definitions.
"""

from __future__ import annotations

import itertools

import numpy as np

PHASES = ("inact", "activ", "mitig")


# ---------------------------------------------------------------- random fixtures


def random_mdp(rng: np.random.Generator, max_states: int = 12, max_actions: int = 3,
               max_policies: int = 600, sink: bool = True):
    """Per-state lists of (distribution row, reward).  The last state is an absorbing sink
    (zero reward) that every choice reaches with probability >= 0.1 when ``sink`` is set."""
    n = int(rng.integers(3, max_states + 1))
    counts = [int(rng.integers(1, max_actions + 1)) for _ in range(n - 1)]
    while int(np.prod(counts)) > max_policies:
        k = int(np.argmax(counts))
        counts[k] -= 1
    states = []
    for s in range(n - 1):
        acts = []
        for _ in range(counts[s]):
            k = int(rng.integers(1, 4))
            succ = rng.choice(n, size=k, replace=False)
            w = rng.uniform(0.1, 1.0, size=k)
            row = np.zeros(n)
            row[succ] = w / w.sum()
            if sink:
                row *= 0.9
                row[n - 1] += 0.1
            if rng.random() < 0.2:
                # sparse probabilities that do not reach the sink make some rewards infinite
                row = np.zeros(n)
                row[int(rng.integers(0, n - 1))] = 1.0
            reward = float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0]))
            acts.append((row, reward))
        states.append(acts)
    states.append([(np.eye(n)[n - 1], 0.0)])
    return states


def random_dtmc(rng: np.random.Generator, max_states: int = 200) -> np.ndarray:
    n = int(rng.integers(2, max_states + 1))
    p = np.zeros((n, n))
    for s in range(n):
        k = int(rng.integers(1, min(4, n) + 1))
        succ = rng.choice(n, size=k, replace=False)
        w = rng.uniform(0.05, 1.0, size=k)
        p[s, succ] = w / w.sum()
    return p


# ---------------------------------------------------------------- chain oracles


def backward_reach(p: np.ndarray, allowed: np.ndarray, target: np.ndarray) -> np.ndarray:
    """States that reach ``target`` along ``allowed`` states (graph search)."""
    seen = target.copy()
    frontier = list(np.flatnonzero(target))
    while frontier:
        t = frontier.pop()
        for s in np.flatnonzero(p[:, t] > 0):
            if allowed[s] and not seen[s]:
                seen[s] = True
                frontier.append(s)
    return seen


def until_prob(p: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """P(phi U psi) by a direct linear solve."""
    n = len(p)
    can = backward_reach(p, phi & ~psi, psi)
    x = np.zeros(n)
    x[psi] = 1.0
    s = can & ~psi
    if s.any():
        idx = np.flatnonzero(s)
        a = np.eye(len(idx)) - p[np.ix_(idx, idx)]
        b = p[np.ix_(idx, np.flatnonzero(psi))].sum(axis=1)
        x[idx] = np.linalg.solve(a, b)
    return x


def weak_until_prob(p: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """P(phi W psi) = 1 - P(!psi U (!phi & !psi))."""
    return 1.0 - until_prob(p, ~psi, ~phi & ~psi)


def total_reward(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Expected total reward; infinite from states that reach a recurrent class with reward."""
    n = len(p)
    closed = _recurrent(p)
    bad = np.zeros(n, dtype=bool)
    for comp in closed:
        if any(r[s] > 0 for s in comp):
            bad[list(comp)] = True
    inf = backward_reach(p, np.ones(n, dtype=bool), bad)
    x = np.full(n, np.inf)
    rec = np.zeros(n, dtype=bool)
    for comp in closed:
        rec[list(comp)] = True
    x[rec & ~inf] = 0.0
    idx = np.flatnonzero(~inf & ~rec)
    if len(idx):
        a = np.eye(len(idx)) - p[np.ix_(idx, idx)]
        x[idx] = np.linalg.solve(a, r[idx])
    return x


def reach_reward(p: np.ndarray, r: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Expected reward until ``target``; infinite where the target is missed with positive probability."""
    n = len(p)
    sure = until_prob(p, np.ones(n, dtype=bool), target) > 1 - 1e-12
    x = np.full(n, np.inf)
    x[target] = 0.0
    idx = np.flatnonzero(sure & ~target)
    if len(idx):
        a = np.eye(len(idx)) - p[np.ix_(idx, idx)]
        x[idx] = np.linalg.solve(a, r[idx])
    return x


def _recurrent(p: np.ndarray) -> list[set[int]]:
    """Closed communicating classes from the transitive closure."""
    n = len(p)
    reach = (p > 0) | np.eye(n, dtype=bool)
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    out, seen = [], set()
    for s in range(n):
        if s in seen:
            continue
        cls = {t for t in range(n) if reach[s, t] and reach[t, s]}
        seen |= cls
        if all(not reach[s, t] or t in cls for t in range(n)):
            out.append(cls)
    return out


def stationary_power(p: np.ndarray, comp: list[int]) -> np.ndarray:
    """Stationary distribution of a closed class as the eigenvector for eigenvalue 1."""
    q = p[np.ix_(comp, comp)]
    w, v = np.linalg.eig(q.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


def recurrent_classes(p: np.ndarray) -> list[set[int]]:
    return _recurrent(p)


# ---------------------------------------------------------------- policy enumeration


def policies(mdp):
    return itertools.product(*(range(len(acts)) for acts in mdp))


def induced(mdp, pol) -> tuple[np.ndarray, np.ndarray]:
    p = np.array([mdp[s][a][0] for s, a in enumerate(pol)])
    r = np.array([mdp[s][a][1] for s, a in enumerate(pol)])
    return p, r


def optimum(mdp, value_fn, direction: str) -> np.ndarray:
    """Elementwise best value over all memoryless deterministic policies."""
    best = None
    for pol in policies(mdp):
        p, r = induced(mdp, pol)
        v = value_fn(p, r)
        if best is None:
            best = v
        else:
            best = np.maximum(best, v) if direction == "max" else np.minimum(best, v)
    return best


# ---------------------------------------------------------------- MTL


def naive_mtl(f, times, snaps, i: int = 0) -> bool:
    """Point-based finite-trace semantics written straight from the definition."""
    kind = type(f).__name__
    if kind == "Atom":
        return bool(snaps[i][f.expr.name])
    if kind == "Not":
        return not naive_mtl(f.arg, times, snaps, i)
    if kind == "And":
        return naive_mtl(f.lhs, times, snaps, i) and naive_mtl(f.rhs, times, snaps, i)
    if kind == "Or":
        return naive_mtl(f.lhs, times, snaps, i) or naive_mtl(f.rhs, times, snaps, i)
    if kind == "Implies":
        return (not naive_mtl(f.lhs, times, snaps, i)) or naive_mtl(f.rhs, times, snaps, i)

    def within(j, iv):
        return iv is None or iv[0] <= times[j] - times[i] <= iv[1]

    n = len(times)
    if kind == "Eventually":
        return any(within(j, f.interval) and naive_mtl(f.arg, times, snaps, j) for j in range(i, n))
    if kind == "Always":
        return all(not within(j, f.interval) or naive_mtl(f.arg, times, snaps, j) for j in range(i, n))
    if kind == "Until":
        for j in range(i, n):
            if within(j, f.interval) and naive_mtl(f.rhs, times, snaps, j) and \
                    all(naive_mtl(f.lhs, times, snaps, k) for k in range(i, j)):
                return True
        return False
    raise TypeError(kind)


# ---------------------------------------------------------------- risk space


def brute_risk_space(ids, requires, prevents, mit_prevents):
    """All phase assignments, kept when no dependency is violated.

    requires: pairs (f, g), f may leave inact only if g has;
    prevents: pairs (f, g), f and g are never both active;
    mit_prevents: pairs (f, g), f and g are never both mitigated.
    """
    out = []
    for combo in itertools.product(PHASES, repeat=len(ids)):
        a = dict(zip(ids, combo))
        bad = any(a[f] != "inact" and a[g] == "inact" for f, g in requires)
        bad |= any(a[f] == a[g] == "activ" for f, g in prevents)
        bad |= any(a[f] == a[g] == "mitig" for f, g in mit_prevents)
        if not bad:
            out.append(a)
    return out
