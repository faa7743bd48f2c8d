"""Command-line pipeline: generate, check, synth, extract, simulate, validate, report.

Errors end the process with exit status 2 and one line on stderr of the form
``error: CODE: detail``.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import mc, mtl, synth, twin
from .controller import ControllerError, bisimulation_check, format_table, parse_table
from .design import GenerationError
from .expr import ExprError
from .pgcl import ModelError, expand, format_model, parse_model
from .risk import RiskModelError
from .workcell import (NO_CONTROLLER, Project, accident_freedom, format_accident_freedom,
                       format_utility_table, load_config, utility_table, validation_campaign)


class CliError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code


ERROR_CODES = (
    (FileNotFoundError, "E_IO"),
    (RiskModelError, "E_RISK"),
    (GenerationError, "E_GENERATE"),
    (ModelError, "E_MODEL"),
    (synth.SynthesisError, "E_SYNTH"),
    (ControllerError, "E_CONTROLLER"),
    (twin.TwinError, "E_SIMULATE"),
    (mtl.MtlError, "E_MTL"),
    (mc.CheckError, "E_CHECK"),
    (ExprError, "E_PARSE"),
)


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _params(items) -> dict:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise CliError("E_ARGS", f"--param expects name=value, got {item!r}")
        try:
            out[name] = int(value)
        except ValueError:
            try:
                out[name] = float(value)
            except ValueError:
                raise CliError("E_ARGS", f"--param {name}: {value!r} is not a number") from None
    return out


def _project(args) -> Project:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epsilon is not None:
        cfg.epsilon = args.epsilon
    if args.budget is not None:
        cfg.budget = args.budget
    if args.out is not None:
        cfg.out = str(Path(args.out).resolve())
    return Project(cfg)


def _out(p: Project) -> Path:
    d = p.cfg.path("out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------- subcommands


def cmd_generate(args, p: Project) -> None:
    out = _out(p)
    mdp_text = p.mdp_text
    m = p.mdp
    ctrl = [c for c in m.commands if c.label.startswith(("si_", "s_")) or c.label == "idle"]
    _write(out / "model_mdp.pm", mdp_text)
    pd = p.pdtmc
    _write(out / "model_pdtmc.pm", format_model(pd))
    print(f"commands {len(m.commands)}")
    print(f"controller_commands {len(ctrl)}")
    print(f"reward_structures {len(m.rewards)}")
    print(f"parameters {' '.join(pd.parameters)}")


def _load_model(args, p: Project):
    if args.model:
        m = parse_model(Path(args.model).read_text())
    else:
        m = p.mdp
    params = {k: v for k, v in {**p.cfg.params, **p.cfg.controller}.items() if k in m.parameters}
    params.update(_params(args.param))
    return m, expand(m, params)


def cmd_check(args, p: Project) -> int:
    _, x = _load_model(args, p)
    text = Path(args.properties).read_text() if args.properties else p.cfg.text("properties")
    print(f"states {x.n_states} transitions {x.n_transitions}")
    failed = 0
    for line in text.splitlines():
        body, _, comment = line.partition("//")
        body, comment = body.strip(), comment.strip()
        if not body or body.startswith("#"):
            continue
        value = mc.check(x, body, eps=p.cfg.epsilon)
        kind = "falsify" if comment.startswith("(f)") else ("verify" if isinstance(value, bool) else "value")
        status = ""
        if kind == "verify":
            status = "ok" if value else "FAILED"
        elif kind == "falsify":
            status = "ok" if not value else "FAILED"
        failed += status == "FAILED"
        print(f"{kind}\t{fmt(value)}\t{status}\t{body}")
    return 1 if failed else 0


def cmd_synth(args, p: Project) -> None:
    q = synth.parse_query(p.cfg.text("query"))
    q.seed = p.cfg.seed if args.seed is not None else q.seed
    if args.budget is not None:
        q.budget = args.budget
    out = _out(p)
    if q.setting == "mdp":
        x = p.expand_mdp()
        pt = synth.synth_mdp(x, q)
        lines = [f"{n},{v:.17g}" for n, v in pt.objectives]
        lines += [f"{c},{fmt(ok)}" for c, ok in pt.verdicts]
        _write(out / "objectives.csv", "objective,value\n" + "\n".join(lines) + "\n")
        acts = pt.policy.actions(x)
        _write(out / "policy.txt", "".join(f"{s} {a}\n" for s, a in sorted(acts.items())))
        return
    t = time.time()
    front = synth.synth_pdtmc(p.pdtmc, q)
    _write(out / "front.csv", synth.front_csv(front))
    _write(out / "front.txt", synth.front_report(front))
    print(f"points {len(front)} seconds {time.time() - t:.1f}")


def _select(args, p: Project) -> dict:
    overrides = _params(args.param)
    if args.front:
        import csv
        rows = list(csv.DictReader(Path(args.front).open()))
        if not rows:
            raise CliError("E_SYNTH", f"front {args.front} is empty")
        key = {"min-risk": lambda r: float(r["risk"]),
               "max-productivity": lambda r: -float(r["productivity"])}[args.select]
        row = min(rows, key=key)
        chosen = {k: v for k, v in row.items() if k.startswith("dp") or k in p.pdtmc.parameters}
        overrides = {**_params(f"{k}={v}" for k, v in chosen.items() if k in p.pdtmc.parameters), **overrides}
    return overrides


def cmd_extract(args, p: Project) -> int:
    t, d = p.table(_select(args, p))
    out = _out(p)
    _write(out / "controller.tbl", format_table(t))
    print(f"states {d.n_states} rules {len(t.rules)}")
    if not t.rules:
        print("warning: the chain has no controller transitions; the table is empty", file=sys.stderr)
    if d.n_states <= args.bisim_limit:
        ok, why, n = bisimulation_check(d, t, args.depth)
        print(f"bisimulation {'ok' if ok else 'FAILED'} explored {n}" + ("" if ok else f": {why}"))
        return 0 if ok else 1
    return 0


def _table(args, p: Project):
    if getattr(args, "table", None):
        return parse_table(Path(args.table).read_text())
    return p.table(_params(getattr(args, "param", None)))[0]


def _scenario(p: Project, table, misuse: bool = False):
    spec = twin.parse_scenario_file(p.cfg.text("scenario"))
    cell = twin.Workcell(p.pdtmc, p.rm, p.controller_params(spec.get("config")))
    if not misuse:
        spec = {k: v for k, v in spec.items() if k != "second_operator"}
    return spec, cell, twin.scenario_from(spec, cell, table)


def cmd_simulate(args, p: Project) -> None:
    table = _table(args, p)
    spec, cell, sc = _scenario(p, table, misuse=args.misuse)
    waits = tuple(args.waits) if args.waits else twin.gen_test_vectors(1, spec.get("total", 20.0), seed=p.cfg.seed)[0]
    sc = twin.with_waits(sc, waits, seed=p.cfg.seed if args.seed is not None else sc.seed)
    tr = twin.run_scenario(sc)
    out = _out(p)
    _write(out / "trace.txt", tr.text())
    print(f"records {len(tr)} mishaps {len(tr.events('mishap'))} end_ms {fmt(tr.records[-1].timestamp)}")


def cmd_validate(args, p: Project) -> int:
    table = _table(args, p)
    seed = p.cfg.seed if args.seed is not None else None
    props = Path(args.properties).read_text() if args.properties else None
    c = validation_campaign(p, table, args.vectors, seed, props)
    out = _out(p)
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for k, tr in enumerate(c.traces):
        (tdir / f"trace_{k:04d}.txt").write_text(tr.text())
    rows = ["trace,property,verdict"] + [f"{k},{i},{v}" for k, i, v in c.verdicts]
    _write(out / "verdicts.csv", "\n".join(rows) + "\n")
    cov = c.coverage
    cov_lines = [f"situation_coverage {cov.situation_ratio:.17g}", f"phase_coverage {cov.phase_ratio:.17g}",
                 f"full {fmt(cov.full)}"] + [f"missing {m}" for m in cov.missing()]
    _write(out / "coverage.txt", "\n".join(cov_lines) + "\n")
    flagged = sorted({k for k, _, _ in c.misuse})
    summary = [f"vectors {len(c.vectors)}", f"property_failures {len(c.failures)}",
               f"mishap_traces {c.mishap_traces}", f"full_coverage {fmt(cov.full)}",
               f"misuse_traces_with_unmitigated_cause {len(flagged)}"]
    summary += [f"misuse trace {k}: {f} cause occurred without activation ({len(idx)} records)"
                for k, f, idx in c.misuse]
    if not args.skip_analysis:
        summary += ["", _analysis(p, _params(getattr(args, "param", None)))]
    _write(out / "validation.txt", "\n".join(summary) + "\n")
    print("\n".join(summary[:5]))
    return 0 if not c.failures and cov.full else 1


def _analysis(p: Project, table_params=None) -> str:
    af = {"controller": accident_freedom(p.expand_controller(table_params), p.cfg.epsilon),
          NO_CONTROLLER: accident_freedom(p.expand_baseline(), p.cfg.epsilon)}
    rows = utility_table(p, p.cfg.horizon)
    return ("# accident freedom over the unsafe region\n" + format_accident_freedom(af)
            + f"\n# productivity and risk over {p.cfg.horizon} steps\n" + format_utility_table(rows))


def cmd_report(args, p: Project) -> None:
    text = _analysis(p, _params(args.param))
    _write(_out(p) / "report.txt", text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cobotsafe", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="project INI file (default: bundled work cell)")
    common.add_argument("--seed", type=int)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--budget", type=int)
    common.add_argument("--out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="write the MDP and parametric chain models")

    c = sub.add_parser("check", parents=[common], help="check a properties file")
    c.add_argument("--model", help="model file (default: generated MDP)")
    c.add_argument("--properties", help="properties file (default: project properties)")
    c.add_argument("--param", action="append", metavar="NAME=VALUE")

    sub.add_parser("synth", parents=[common], help="run the synthesis query")

    e = sub.add_parser("extract", parents=[common], help="extract the controller table")
    e.add_argument("--param", action="append", metavar="NAME=VALUE")
    e.add_argument("--front", help="front.csv to pick a configuration from")
    e.add_argument("--select", choices=("min-risk", "max-productivity"), default="min-risk")
    e.add_argument("--depth", type=int, default=40)
    e.add_argument("--bisim-limit", type=int, default=5000)

    s = sub.add_parser("simulate", parents=[common], help="run one scenario and write its trace")
    s.add_argument("--table", help="controller table file (default: extract from the project)")
    s.add_argument("--param", action="append", metavar="NAME=VALUE")
    s.add_argument("--waits", type=float, nargs=4)
    s.add_argument("--misuse", action="store_true", help="add the second operator")

    v = sub.add_parser("validate", parents=[common], help="run the validation campaign")
    v.add_argument("--table")
    v.add_argument("--param", action="append", metavar="NAME=VALUE")
    v.add_argument("--vectors", type=int)
    v.add_argument("--properties", help="MTL properties file")
    v.add_argument("--skip-analysis", action="store_true")

    r = sub.add_parser("report", parents=[common], help="accident freedom and productivity/risk tables")
    r.add_argument("--param", action="append", metavar="NAME=VALUE")

    t = sub.add_parser("translate", parents=[common], help="translate PCTL validation properties to MTL")
    t.add_argument("file")
    t.add_argument("--deadline", type=float, help="deadline for untimed until, in ms")
    return ap


def cmd_translate(args, p) -> None:
    for text, f in mc.parse_properties(Path(args.file).read_text()):
        print(mtl.to_string(mtl.translate(f, args.deadline)))


COMMANDS = {"generate": cmd_generate, "check": cmd_check, "synth": cmd_synth, "extract": cmd_extract,
            "simulate": cmd_simulate, "validate": cmd_validate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "translate":
            cmd_translate(args, None)
            return 0
        p = _project(args)
        rc = COMMANDS[args.command](args, p)
        return int(rc or 0)
    except CliError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        for cls, code in ERROR_CODES:
            if isinstance(e, cls):
                detail = " ".join(str(e).split())
                print(f"error: {code}: {detail}", file=sys.stderr)
                return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
