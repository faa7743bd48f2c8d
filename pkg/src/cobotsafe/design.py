"""Generation of the safety-controller design space from a risk model.

For each risk factor the generator instantiates the refined phase machine
``inact -> act -> mit1 -> mit2 -> mit -> res -> inact`` (plus ``mis`` for
mishaps) as guarded commands:

* detection                 ``si_<F>act``        inact/mit/res -> act
* safety-mode switch        ``si_<opt>safmod``   act  -> mit1
* activity switch           ``s_<opt>halt``      mit1 -> mit2
* safety function / wait    ``si_<opt>fun``      mit2 (causal factor present)
* mitigation finaliser      ``si_<opt>mit``      mit2 -> mit
* safety-function release   ``si_<res>fun``      mit
* mode resumption           ``si_<res>safmod``   mit  -> res
* activity resumption       ``s_<res>resume``    res  -> inact

Controller work is serialised across factors in declaration order so that
at most one controller command is enabled in any state once the choice
among options is fixed.  ``[idle]`` passes the token when no work is left.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .expr import FALSE, TRUE, Binary, Call, Expr, Ident, Ite, Lit, Parser, conj, disj, neg, simplify, to_text
from .pgcl import Command, Const, ProcessModel, RewardItem, RewardStruct, Update, format_command
from .risk import (
    PHASES, UNSAFE_PHASES, DistanceMatrix, Factor, Mode, RiskModel, mitigation_target, phase_in,
    resumption_target, risk_scale,
)

ANCHORS = ("//@formulas", "//@controller", "//@rewards")


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    """How the generated controller talks to the process skeleton."""

    turn_guard: str = "OK_S"
    mode_axis: str = "safmod"
    mode_vars: tuple[str, ...] = ("safmod",)
    activity_axis: str = "act"
    activity_vars: tuple[str, ...] = ("cact",)
    token_var: str = "token"
    turn_var: str = "turn"
    actor_count: str = "ag"

    def pass_token(self) -> tuple[tuple[str, Expr], ...]:
        t = Ident(self.token_var)
        nxt = Binary("+", t, Lit(1))
        return ((self.token_var, Call("mod", (nxt, Ident(self.actor_count)))), (self.turn_var, nxt))


def _eq(var: str, value: str | int) -> Expr:
    return Binary("=", Ident(var), Ident(value) if isinstance(value, str) else Lit(value))


def _phase(f: Factor, *phases: str) -> Expr:
    return phase_in(f, phases)


def _in(var: str, cats: Sequence[str], universe: Sequence[str]) -> Expr:
    if set(cats) >= set(universe):
        return TRUE
    return disj(*(_eq(var, c) for c in cats))


def _update_holds(assigns) -> Expr:
    return conj(*(Binary("=", Ident(n), e) for n, e in assigns))


# ---------------------------------------------------------------- predicates


def _prevent_peers(rm: RiskModel, f: Factor) -> list[Factor]:
    ids = set(f.prevents) | {g.id for g in rm.factors if f.id in g.prevents}
    return [g for g in rm.factors if g.id in ids and g.id != f.id]


def gen_risk_predicates(rm: RiskModel) -> dict[str, Expr]:
    """``RCE_F`` (cause in the world) and ``CE_F`` (cause as sensed), with dependency context."""
    out: dict[str, Expr] = {}
    for f in rm.factors:
        prev = conj(*(Binary("!=", Ident(g.phase_var), Ident("act")) for g in _prevent_peers(rm, f)))
        req = conj(*(_phase(rm.factor(g), "act", "mit1", "mit2", "mit", "res") for g in f.requires_occ))
        det = rm.detector(f)
        zeta = det.guard if det is not None and det.guard is not None else FALSE
        out[f"RCE_{f.id}"] = conj(f.guard, prev)
        out[f"CE_{f.id}"] = conj(zeta, req, prev) if zeta != FALSE else FALSE
    return out


def _kappa(rm: RiskModel, f: Factor) -> Expr:
    cfs = [m.cf for m in rm.mitigations(f) + rm.resumptions(f) if m.cf is not None]
    unique = list(dict.fromkeys(cfs))
    if unique:
        return disj(*unique)
    det = rm.detector(f)
    return disj(f.guard, det.guard if det is not None and det.guard is not None else FALSE)


def _sf_on(rm: RiskModel, f: Factor) -> Expr:
    conds = [_update_holds(m.update) for m in rm.mitigations(f) if m.update]
    return disj(*dict.fromkeys(conds)) if conds else FALSE


def unsafe_region(rm: RiskModel) -> Expr:
    """The non-accident unsafe region: some cause holds or handling is incomplete, and no mishap."""
    causes = disj(*(Ident(f"RCE_{f.id}") for f in rm.factors))
    phases = disj(*(_phase(f, *UNSAFE_PHASES) for f in rm.factors))
    return conj(disj(causes, phases), neg(mishap_predicate(rm)))


def mishap_predicate(rm: RiskModel) -> Expr:
    return disj(*(_eq(f.phase_var, "mis") for f in rm.factors))


# ---------------------------------------------------------------- commands


@dataclass
class _FactorCommands:
    factor: Factor
    work: list[Command] = field(default_factory=list)
    wait: list[Command] = field(default_factory=list)


class _Generator:
    def __init__(self, rm: RiskModel, cfg: GenerationConfig):
        self.rm = rm
        self.cfg = cfg
        for axis in (cfg.mode_axis, cfg.activity_axis):
            if axis not in rm.distances:
                raise GenerationError(f"risk model lacks the category declaration 'distances {axis}'")
        self.mode_m = rm.distances[cfg.mode_axis]
        self.act_m = rm.distances[cfg.activity_axis]
        for f in rm.factors:
            if not f.mitigated_by or not f.resumed_by:
                raise GenerationError(f"factor {f.id} needs at least one mitigation and one resumption option")
            if f.detected_by is None:
                raise GenerationError(f"factor {f.id} lacks a detector")
        self.ok = Ident(cfg.turn_guard)

    def _sf_inverse(self, f: Factor, r: Mode, model_inits: Mapping[str, object] | None):
        if r.update:
            return r.update
        touched = dict.fromkeys(n for m in self.rm.mitigations(f) if m.update for n, _ in m.update)
        if not touched:
            return ()
        if model_inits is None:
            raise GenerationError(f"resumption {r.name} has no update and variable inits are unknown")
        missing = [n for n in touched if n not in model_inits]
        if missing:
            raise GenerationError(f"variable {missing[0]} reset by {r.name} has no known initial value")
        return tuple((n, model_inits[n]) for n in touched)

    def _switch(self, label: str, pre: Expr, phase_to: tuple[str, Expr], axis_m: DistanceMatrix,
                variables: Sequence[str], target: str | None, extra=()) -> list[Command]:
        """Commands moving each variable of an axis according to the mitigation rule."""
        per_var = []
        for v in variables:
            groups: dict[str | None, list[str]] = {}
            for cur in axis_m.categories:
                new = mitigation_target(cur, target, axis_m)
                groups.setdefault(None if new == cur else new, []).append(cur)
            per_var.append([(v, new, cats) for new, cats in groups.items()])
        out = []
        for combo in itertools.product(*per_var):
            guard = conj(pre, *(_in(v, cats, axis_m.categories) for v, _, cats in combo))
            assigns = tuple((v, Ident(new)) for v, new, _ in combo if new is not None)
            out.append(Command(label, guard, (Update(Lit(1), assigns + (phase_to,) + tuple(extra)),)))
        return out

    def factor_commands(self, f: Factor, model_inits) -> _FactorCommands:
        rm, cfg = self.rm, self.cfg
        p = f.phase_var
        ce = Ident(f"CE_{f.id}")
        kappa = Ident(f"KAPPA_{f.id}")
        sfon = Ident(f"SFON_{f.id}")
        out = _FactorCommands(f)
        out.work.append(Command(f"si_{f.id}act", conj(ce, _phase(f, "inact", "mit", "res")),
                                (Update(Lit(1), ((p, Ident("act")),)),)))
        for o in rm.mitigations(f):
            out.work += self._switch(f"si_{o.name}safmod", _eq(p, "act"), (p, Ident("mit1")),
                                     self.mode_m, cfg.mode_vars, o.target_for(cfg.mode_axis))
            out.work += self._switch(f"s_{o.name}halt", _eq(p, "mit1"), (p, Ident("mit2")),
                                     self.act_m, cfg.activity_vars, o.target_for(cfg.activity_axis))
            if o.update:
                sf = _update_holds(o.update)
                out.wait.append(Command(f"si_{o.name}fun", conj(_eq(p, "mit2"), kappa, neg(sf)),
                                        (Update(Lit(1), o.update + cfg.pass_token()),)))
                out.wait.append(Command(f"si_{o.name}fun", conj(_eq(p, "mit2"), kappa, sf),
                                        (Update(Lit(1), cfg.pass_token()),)))
            else:
                out.wait.append(Command(f"si_{o.name}fun", conj(_eq(p, "mit2"), kappa),
                                        (Update(Lit(1), cfg.pass_token()),)))
            out.work.append(Command(f"si_{o.name}mit", conj(_eq(p, "mit2"), neg(kappa)),
                                    (Update(Lit(1), ((p, Ident("mit")),)),)))
        peers = [g for g in rm.factors if g.id != f.id]
        clear = conj(neg(ce), neg(kappa))
        for r in rm.resumptions(f):
            inverse = self._sf_inverse(f, r, model_inits)
            if inverse:
                out.work.append(Command(f"si_{r.name}fun", conj(_eq(p, "mit"), clear, sfon),
                                        (Update(Lit(1), inverse),)))
            for classes in itertools.product(("idle", "handled"), repeat=len(peers)):
                involved = {f.id} | {g.id for g, c in zip(peers, classes) if c == "handled"}
                peer_guard = conj(*(
                    _phase(g, "mit", "res") if c == "handled" else _phase(g, "inact", "mis")
                    for g, c in zip(peers, classes)))
                cands = []
                for g in rm.factors:
                    if g.id == f.id:
                        cands.append(r)
                    elif g.id in involved:
                        cands.append(self._restrictive(g))
                mode_new = self._cap(cands, self.cfg.mode_axis)
                act_new = self._cap(cands, self.cfg.activity_axis)
                base = conj(clear, neg(sfon), peer_guard)
                mode_assign = tuple((v, Ident(mode_new)) for v in cfg.mode_vars) if mode_new else ()
                act_assign = tuple((v, Ident(act_new)) for v in cfg.activity_vars) if act_new else ()
                out.work.append(Command(f"si_{r.name}safmod", conj(_eq(p, "mit"), base),
                                        (Update(Lit(1), mode_assign + ((p, Ident("res")),)),)))
                out.work.append(Command(f"s_{r.name}resume", conj(_eq(p, "res"), base),
                                        (Update(Lit(1), act_assign + ((p, Ident("inact")),) + cfg.pass_token()),)))
        return out

    def _restrictive(self, g: Factor) -> dict[str, str]:
        """Most restrictive resumption target of a peer factor, per axis."""
        out = {}
        for axis in (self.cfg.mode_axis, self.cfg.activity_axis):
            cat = self._cap(self.rm.resumptions(g), axis)
            if cat is not None:
                out[axis] = cat
        return out

    def _cap(self, cands, axis: str) -> str | None:
        m = self.rm.distances[axis]
        picked = resumption_target(cands, {axis: None}, {axis: m})[axis]
        return picked

    def formulas(self) -> dict[str, Expr]:
        rm = self.rm
        out = gen_risk_predicates(rm)
        for f in rm.factors:
            out[f"KAPPA_{f.id}"] = _kappa(rm, f)
            out[f"SFON_{f.id}"] = _sf_on(rm, f)
        for f in rm.factors:
            ce, kappa, sfon = Ident(f"CE_{f.id}"), Ident(f"KAPPA_{f.id}"), Ident(f"SFON_{f.id}")
            peers_ok = conj(*(_phase(g, "inact", "mit", "res", "mis") for g in rm.factors if g.id != f.id))
            clear = conj(neg(ce), neg(kappa))
            out[f"WORK_{f.id}"] = disj(
                conj(ce, _phase(f, "inact", "mit", "res")),
                _phase(f, "act", "mit1"),
                conj(_eq(f.phase_var, "mit2"), neg(kappa)),
                conj(_eq(f.phase_var, "mit"), clear, disj(sfon, peers_ok) if sfon != FALSE else peers_ok),
                conj(_eq(f.phase_var, "res"), clear, neg(sfon), peers_ok),
            )
            out[f"WAIT_{f.id}"] = conj(_eq(f.phase_var, "mit2"), kappa)
        return out

    def commands(self, model_inits=None) -> list[Command]:
        rm = self.rm
        per = [self.factor_commands(f, model_inits) for f in rm.factors]
        out = []
        for j, fc in enumerate(per):
            before_work = [neg(Ident(f"WORK_{g.id}")) for g in rm.factors[:j]]
            all_work = [neg(Ident(f"WORK_{g.id}")) for g in rm.factors]
            before_wait = [neg(Ident(f"WAIT_{g.id}")) for g in rm.factors[:j]]
            for c in fc.work:
                out.append(Command(c.label, conj(self.ok, c.guard, *before_work), c.updates))
            for c in fc.wait:
                out.append(Command(c.label, conj(self.ok, c.guard, *all_work, *before_wait), c.updates))
        out.extend(gen_idle(rm, self.cfg))
        return out


def gen_detection(rm: RiskModel) -> list[Command]:
    """Detection commands, one per factor (without cross-factor serialisation)."""
    cfg = GenerationConfig()
    out = []
    for f in rm.factors:
        if f.detected_by is None:
            raise GenerationError(f"factor {f.id} lacks a detector")
        guard = conj(Ident(cfg.turn_guard), Ident(f"CE_{f.id}"), neg(_phase(f, "act", "mit1", "mit2", "mis")))
        out.append(Command(f"si_{f.id}act", guard, (Update(Lit(1), ((f.phase_var, Ident("act")),)),)))
    return out


def gen_idle(rm: RiskModel, cfg: GenerationConfig = GenerationConfig()) -> list[Command]:
    """Token-passing idle commands; the second covers causes the sensors missed."""
    ok = Ident(cfg.turn_guard)
    if not rm.factors:
        return [Command("idle", ok, (Update(Lit(1), cfg.pass_token()),))]
    quiet = conj(*(neg(Ident(f"WORK_{f.id}")) for f in rm.factors),
                 *(neg(Ident(f"WAIT_{f.id}")) for f in rm.factors),
                 *(_phase(f, "inact", "mit", "res", "mis") for f in rm.factors))
    no_cause = conj(*(neg(Ident(f"RCE_{f.id}")) for f in rm.factors))
    some_cause = disj(*(Ident(f"RCE_{f.id}") for f in rm.factors))
    return [
        Command("idle", conj(ok, no_cause, quiet), (Update(Lit(1), cfg.pass_token()),)),
        Command("idle", conj(ok, some_cause, quiet), (Update(Lit(1), cfg.pass_token()),)),
    ]


def gen_controller_module(rm: RiskModel, cfg: GenerationConfig = GenerationConfig(),
                          model_inits: Mapping[str, object] | None = None) -> list[Command]:
    return _Generator(rm, cfg).commands(model_inits)


def gen_rewards(rm: RiskModel, cfg: GenerationConfig = GenerationConfig()) -> list[RewardStruct]:
    """Risk, severity, option-cost and profile reward structures."""
    structs: dict[str, list[RewardItem]] = {}
    mode_m = rm.distances.get(cfg.mode_axis)
    scale = risk_scale(mode_m) if mode_m is not None else {}
    mode_var = cfg.mode_vars[0]
    pr_mishap = Ident("pr_mishap") if any(n == "pr_mishap" for n, _, _ in rm.constants) else Lit(1)
    ids = {f.id for f in rm.factors}
    for e in rm.profile:
        if e.column.startswith("risk_"):
            fid = e.column[5:]
            if fid not in ids:
                continue
            if isinstance(e.value, Lit) and e.value.value == 0:
                continue
            items = structs.setdefault(e.column, [])
            cause = disj(Ident(f"RCE_{fid}"), Ident(f"CE_{fid}"))
            for cat, s in scale.items():
                if s > 0:
                    items.append(RewardItem(e.label, conj(e.guard, cause, _eq(mode_var, cat)),
                                            simplify(Binary("*", Lit(s), e.value))))
        else:
            structs.setdefault(e.column, []).append(RewardItem(e.label, e.guard, e.value))
    for f in rm.factors:
        structs.setdefault(f"risk_{f.id}", [])
    sev = structs.setdefault("sev", [])
    for f in rm.factors:
        for e in rm.profile:
            if e.column != f"risk_{f.id}" or isinstance(e.value, Lit) and e.value.value == 0:
                continue
            for cat, s in scale.items():
                if s > 0:
                    value = simplify(Binary("*", Lit(f.severity * s), pr_mishap))
                    sev.append(RewardItem(e.label, conj(e.guard, Ident(f"RCE_{f.id}"), _eq(mode_var, cat)), value))
    for key in ("disruption", "nuisance", "effort"):
        items = structs.setdefault(key, [])
        for f in rm.factors:
            for o in rm.mitigations(f) + rm.resumptions(f):
                value = o.rewards().get(key)
                if value is None:
                    continue
                label = f"si_{o.name}fun" if o.name in f.mitigated_by else f"si_{o.name}safmod"
                items.append(RewardItem(label, TRUE, value))
    return [RewardStruct(name, tuple(items)) for name, items in structs.items()]


# ---------------------------------------------------------------- model assembly


def _declarations(rm: RiskModel, cfg: GenerationConfig, controller: bool) -> list[str]:
    lines = ["// risk phases"]
    lines.append(" ".join(f"const int {ph} = {i};" for i, ph in enumerate(PHASES)))
    for name, type_, value in rm.constants:
        lines.append(f"const {type_} {name} = {to_text(value)};")
    for f in rm.factors:
        lines.append(f"{f.phase_var} : [inact..mis] init inact;")
    mode_m = rm.distances.get(cfg.mode_axis)
    if mode_m is not None:
        scale = risk_scale(mode_m)
        body: Expr = Lit(scale[mode_m.categories[-1]])
        for cat in reversed(mode_m.categories[:-1]):
            body = Ite(_eq(cfg.mode_vars[0], cat), Lit(scale[cat]), body)
        lines.append(f"formula MODE_RISK = {to_text(body)};")
    formulas = _Generator(rm, cfg).formulas() if controller else gen_risk_predicates(rm)
    for name, e in formulas.items():
        lines.append(f"formula {name} = {to_text(e)};")
    lines.append(f'label "mishap" = {to_text(mishap_predicate(rm))};')
    lines.append(f'label "unsafe" = {to_text(unsafe_region(rm))};')
    lines.append(f'label "safe" = {to_text(conj(neg(unsafe_region(rm)), neg(mishap_predicate(rm))))};')
    lines.append(f'label "inact" = {to_text(conj(*(_eq(f.phase_var, "inact") for f in rm.factors)))};')
    for f in rm.factors:
        lines.append(f'label "act_{f.id}" = {to_text(_eq(f.phase_var, "act"))};')
        lines.append(f'label "unsafe_{f.id}" = {to_text(_phase(f, *UNSAFE_PHASES))};')
        lines.append(f'label "mit_{f.id}" = {to_text(_phase(f, "mit", "res"))};')
        lines.append(f'label "inact_{f.id}" = {to_text(_eq(f.phase_var, "inact"))};')
        lines.append(f'label "mis_{f.id}" = {to_text(_eq(f.phase_var, "mis"))};')
    return lines


def _skeleton_inits(skeleton: str) -> dict[str, Expr]:
    inits = {}
    for m in re.finditer(r"^\s*([A-Za-z_]\w*)\s*:\s*(?:\[[^\]]*\]|bool)\s*init\s*([^;]+);", skeleton, re.M):
        inits[m.group(1)] = Parser(m.group(2)).expression()
    return inits


def generate(skeleton: str, rm: RiskModel, cfg: GenerationConfig = GenerationConfig(),
             controller: bool = True) -> str:
    """Fill the anchors of a process skeleton with generated declarations, commands and rewards.

    With ``controller=False`` the controller is a bare token-passing ``[idle]``
    command, which yields the uncontrolled baseline of the same process.
    """
    for anchor in ANCHORS:
        if anchor not in skeleton:
            raise GenerationError(f"skeleton lacks the anchor {anchor}")
    decl = "\n".join(_declarations(rm, cfg, controller))
    if controller:
        cmds = _Generator(rm, cfg).commands(_skeleton_inits(skeleton))
    else:
        cmds = [Command("idle", Ident(cfg.turn_guard), (Update(Lit(1), cfg.pass_token()),))]
    body = "\n".join(format_command(c) for c in cmds)
    rewards = []
    for r in gen_rewards(rm, cfg):
        rewards.append(f'rewards "{r.name}"')
        for item in r.items:
            head = "" if item.label is None else f"[{item.label}] "
            rewards.append(f"  {head}{to_text(item.guard)} : {to_text(item.value)};")
        rewards.append("endrewards")
    text = skeleton.replace("//@formulas", decl).replace("//@controller", body).replace("//@rewards", "\n".join(rewards))
    return text


def decision_parameters(rm: RiskModel) -> dict[str, list[int]]:
    """Decision parameters of the parametric model and their option-index domains."""
    out = {}
    for f in rm.factors:
        if not f.mitigated_by or not f.resumed_by:
            raise GenerationError(f"factor {f.id} has an empty option list")
        out[f"dp{f.id}mit"] = list(range(len(f.mitigated_by)))
        out[f"dp{f.id}res"] = list(range(len(f.resumed_by)))
    return out


def pdtmc_transform(model: ProcessModel, rm: RiskModel) -> ProcessModel:
    """Turn controller nondeterminism into decision parameters and the rest into uniform choice."""
    label_param: dict[str, tuple[str, str]] = {}
    consts = []
    for f in rm.factors:
        if not f.mitigated_by or not f.resumed_by:
            raise GenerationError(f"factor {f.id} has an empty option list")
        for i, o in enumerate(f.mitigated_by):
            const = f"{f.id}{o}"
            consts.append(Const(const, "int", Lit(i)))
            for label in (f"si_{o}safmod", f"s_{o}halt", f"si_{o}fun", f"si_{o}mit"):
                label_param[label] = (f"dp{f.id}mit", const)
        for i, r in enumerate(f.resumed_by):
            const = f"{f.id}{r}"
            consts.append(Const(const, "int", Lit(i)))
            for label in (f"si_{r}fun", f"si_{r}safmod", f"s_{r}resume"):
                label_param[label] = (f"dp{f.id}res", const)
        consts.append(Const(f"dp{f.id}mit", "int", None))
        consts.append(Const(f"dp{f.id}res", "int", None))
    existing = {c.name for c in model.constants}
    clash = [c.name for c in consts if c.name in existing]
    if clash:
        raise GenerationError(f"decision constants already declared: {', '.join(clash)}")
    commands = []
    for c in model.commands:
        if c.label in label_param:
            param, const = label_param[c.label]
            guard = _insert_after_first(c.guard, Binary("=", Ident(param), Ident(const)))
            commands.append(Command(c.label, guard, c.updates))
        else:
            commands.append(c)
    return ProcessModel(
        kind="dtmc",
        constants=list(model.constants) + consts,
        variables=list(model.variables),
        formulas=dict(model.formulas),
        labels=dict(model.labels),
        commands=commands,
        rewards=list(model.rewards),
    )


def _insert_after_first(guard: Expr, extra: Expr) -> Expr:
    """Conjoin ``extra`` right after the leading turn guard, mirroring the hand-written layout."""
    parts = []
    e = guard
    while isinstance(e, Binary) and e.op == "&":
        parts.append(e.rhs)
        e = e.lhs
    parts.append(e)
    parts.reverse()
    if len(parts) >= 2:
        return conj(parts[0], parts[1], extra, *parts[2:])
    return conj(guard, extra)
