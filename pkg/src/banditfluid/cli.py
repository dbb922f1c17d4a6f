"""Command-line front end: validate, fluid, policies, whittle, attractor,
simulate, exact, and gaps subcommands over model files or builtin scenarios.

Every run writes its artifacts plus a manifest (inputs, seed, version,
emitted files) into --out.  Numbers are formatted to 12 significant digits
so reruns from a manifest reproduce byte-identical files.  Exit codes:
0 success, 1 domain error (JSON diagnostics on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, fluid, lp, mdp, policy as pol, sim, simplex
from .model import InvalidModel, load_model, validate
from .scenarios import SCENARIOS, load_scenario

GAP_POLICY_NAMES = ("prio1", "prio12", "prio123", "prio2", "prio21", "prio213")

DOMAIN_ERRORS = (
    InvalidModel,
    simplex.Infeasible,
    simplex.Unbounded,
    lp.StructureNotFound,
    pol.NotIndexable,
    pol.OutOfRange,
    mdp.StateSpaceTooLarge,
    mdp.NoConvergence,
    fluid.Diverged,
    ValueError,
    KeyError,
    OSError,
)


def _round12(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.12g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _json_text(obj) -> str:
    return json.dumps(_round12(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class _Emitter:
    def __init__(self, args, command):
        self.outdir = Path(args.out)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.command = command
        self.args = args

    def write(self, name: str, text: str):
        (self.outdir / name).write_text(text)
        self.files.append(name)

    def finish(self):
        manifest = {
            "command": self.command,
            "arguments": {
                k: v for k, v in sorted(vars(self.args).items()) if k != "func" and v is not None
            },
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "outputs": sorted(self.files),
        }
        (self.outdir / "manifest.json").write_text(_json_text(manifest))


def _load(args):
    if args.scenario:
        return load_scenario(args.scenario)
    if not args.model:
        raise ValueError("provide --model FILE or --scenario NAME")
    return load_model(args.model, check=not getattr(args, "no_check", False))


def _resolve_policy(model, name: str):
    """Builtin policy names: prioXYZ digits, 'iota', 'whittle-limit'."""
    if name.startswith("prio"):
        if model.num_classes != 1:
            raise ValueError("prioXYZ names address single-class models")
        return pol.single_class_policy(name, model.classes[0].num_states)
    if name == "iota":
        return pol.abandonment_policy(model)
    if name == "whittle-limit":
        tables = [pol.whittle_limit(model, k) for k in range(1, model.num_classes + 1)]
        return pol.whittle_policy(tables)
    if name.endswith(".json"):
        doc = json.loads(Path(name).read_text())
        from .model import StateId

        return pol.PriorityPolicy(
            order=tuple(StateId(k, j) for k, j in doc["order"]),
            never_active=frozenset(StateId(k, j) for k, j in doc["never_active"]),
        )
    raise ValueError(f"unknown policy {name!r}")


def _with_x0(model, args):
    if getattr(args, "x0", None) is None:
        return model
    if model.num_classes != 1 or not model.is_fixed:
        raise ValueError("--x0 addresses single-class fixed models")
    counts = np.zeros(model.classes[0].num_states)
    counts[getattr(args, "x0_state", 1) - 1] = args.x0
    return model.with_counts((counts,))


def cmd_validate(args, em):
    model = _load(args)
    report = validate(model)
    em.write("validation.json", _json_text({"ok": report.ok, "violations": list(report.violations)}))
    if report:
        raise InvalidModel(report.violations)


def cmd_fluid(args, em):
    model = _with_x0(_load(args), args)
    eq = lp.structured_optimum(model)
    em.write("equilibrium.json", _json_text(eq.to_dict()))
    rows = [
        (sid.k, sid.j, eq.passive[i], eq.active[i])
        for i, sid in enumerate(eq.state_ids)
    ]
    em.write("equilibrium.csv", _csv_text(("k", "j", "x0", "x1"), rows))


def cmd_policies(args, em):
    model = _load(args)
    sweep = args.sweep or ("x0" if model.is_fixed else "alpha")
    limit = args.max if args.max is not None else (10.0 if sweep == "x0" else model.alpha)
    if sweep == "x0":
        table = lp.x0_breakpoints(model, limit, n_probes=args.probes)
    else:
        table = lp.alpha_breakpoints(model, limit, n_probes=args.probes)
    em.write("breakpoints.json", _json_text(table.to_dict()))
    if args.at is not None:
        chosen = pol.select_policy(table, args.at)
        doc = chosen.to_dict()
        doc["name"] = pol.policy_name(chosen, model)
        em.write("policy.json", _json_text(doc))


def cmd_whittle(args, em):
    model = _load(args)
    classes = [args.class_index] if args.class_index else list(range(1, model.num_classes + 1))
    betas = [float(b) for b in args.beta.split(",")] if args.beta else list(pol.DEFAULT_BETAS)
    tables = []
    rows = []
    for k in classes:
        if args.limit:
            t = pol.whittle_limit(model, k, betas, grid=args.grid)
            tables.append(t.to_dict())
            rows += [(k, j, 0.0, v) for j, v in sorted(t.values.items())]
        else:
            for b in betas:
                t = pol.whittle_index(model, k, b, grid=args.grid)
                tables.append(t.to_dict())
                rows += [(k, j, b, v) for j, v in sorted(t.values.items())]
    em.write("whittle.json", _json_text({"tables": tables}))
    em.write("whittle.csv", _csv_text(("k", "j", "beta", "nu"), rows))


def cmd_attractor(args, em):
    model = _with_x0(_load(args), args)
    chosen = _resolve_policy(model, args.policy)
    eq = lp.structured_optimum(model)
    report = fluid.attractor_check(
        model,
        chosen,
        eq,
        n_samples=args.samples,
        horizon=args.horizon,
        tol=args.tol,
        seed=args.seed,
    )
    em.write("attractor.json", _json_text(report.to_dict()))


def cmd_simulate(args, em):
    model = _with_x0(_load(args), args)
    chosen = _resolve_policy(model, args.policy)
    cfg = sim.SimConfig(
        scaling=args.r,
        horizon=args.horizon,
        burn_in=args.burn_in,
        batches=args.batches,
        seed=args.seed,
    )
    series = [] if args.timeseries else None
    result = sim.simulate(model, chosen, cfg, timeseries=series)
    em.write("simulation.json", _json_text(result.to_dict()))
    if series is not None:
        rows = [(t, c, *counts) for t, c, counts in series]
        header = ("t", "cost_rate") + tuple(f"x_{s.k}_{s.j}" for s in model.state_ids())
        em.write("timeseries.csv", _csv_text(header, rows))


def cmd_exact(args, em):
    model = _with_x0(_load(args), args)
    out = {}
    opt = mdp.relative_value_iteration(model)
    out["g_opt"] = opt.gain
    out["iterations"] = opt.iterations
    out["residual_span"] = opt.residual
    if args.policy:
        chosen = _resolve_policy(model, args.policy)
        ev = mdp.relative_value_iteration(model, policy=chosen)
        out["policy"] = args.policy
        out["g_policy"] = ev.gain
    em.write("exact.json", _json_text(out))


def _parse_range(text: str):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def cmd_gaps(args, em):
    model = _load(args)
    if args.alpha is not None:
        import dataclasses

        model = dataclasses.replace(model, alpha=float(args.alpha))
    x0_values = _parse_range(args.x0)
    names = args.policies.split(",") if args.policies else list(GAP_POLICY_NAMES) + ["selected"]
    policies = {}
    selected_per_x0 = {}
    if "selected" in names or args.selected:
        base = model.with_counts((np.array([1.0] + [0.0] * (model.classes[0].num_states - 1)),))
        table = lp.x0_breakpoints(base, max(x0_values) * 1.05)
        for x0 in x0_values:
            selected_per_x0[x0] = pol.select_policy(table, float(x0))
        names = [n for n in names if n != "selected"]
    for name in names:
        policies[name] = _resolve_policy(model, name)
    rows = mdp.suboptimality_table(model, policies, x0_values, x0_state=args.x0_state)
    if selected_per_x0:
        by_key = {(r["x0"], r["policy"]): r for r in rows}
        for x0, chosen in selected_per_x0.items():
            cname = pol.policy_name(chosen, model)
            if (x0, cname) in by_key:
                src = by_key[(x0, cname)]
                rows.append({**src, "policy": "selected"})
            else:
                extra = mdp.suboptimality_table(model, {"selected": chosen}, [x0], x0_state=args.x0_state)
                rows += extra
    rows.sort(key=lambda r: (r["x0"], r["policy"]))
    em.write(
        "gaps.csv",
        _csv_text(
            ("X0", "policy", "g_policy", "g_opt", "gap_percent"),
            [(r["x0"], r["policy"], r["g_policy"], r["g_opt"], r["gap_percent"]) for r in rows],
        ),
    )
    em.write("gaps.json", _json_text({"rows": rows}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="banditfluid", description=__doc__)
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json", help="preferred primary format")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.add_argument("--model", help="model JSON file")
        sp.add_argument("--scenario", choices=SCENARIOS)
        sp.set_defaults(func=fn)
        return sp

    sp = add("validate", cmd_validate, help="check model invariants")
    sp.set_defaults(no_check=True)

    sp = add("fluid", cmd_fluid, help="structured optimal fluid solution")
    sp.add_argument("--x0", type=float)
    sp.add_argument("--x0-state", type=int, default=1)

    sp = add("policies", cmd_policies, help="budget sweep and policy selection")
    sp.add_argument("--sweep", choices=("alpha", "x0"))
    sp.add_argument("--max", type=float)
    sp.add_argument("--at", type=float, help="budget/x0 at which to select a policy")
    sp.add_argument("--probes", type=int, default=64)

    sp = add("whittle", cmd_whittle, help="Whittle index tables")
    sp.add_argument("--class", dest="class_index", type=int)
    sp.add_argument("--beta", help="comma-separated discount values")
    sp.add_argument("--limit", action="store_true", help="vanishing-discount limit table")
    sp.add_argument("--grid", type=int, default=200)

    sp = add("attractor", cmd_attractor, help="sampled global-attractor check")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--x0", type=float)
    sp.add_argument("--x0-state", type=int, default=1)

    sp = add("simulate", cmd_simulate, help="event-driven scaled simulation")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--burn-in", dest="burn_in", type=float, default=0.2)
    sp.add_argument("--batches", type=int, default=20)
    sp.add_argument("--timeseries", action="store_true")
    sp.add_argument("--x0", type=float)
    sp.add_argument("--x0-state", type=int, default=1)

    sp = add("exact", cmd_exact, help="exact average-cost solve (small instances)")
    sp.add_argument("--policy")
    sp.add_argument("--x0", type=float)
    sp.add_argument("--x0-state", type=int, default=1)

    sp = add("gaps", cmd_gaps, help="sub-optimality gap table over X(0)")
    sp.add_argument("--x0", required=True, help="range like 1..10 or comma list")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--policies", help="comma-separated policy names (default six + selected)")
    sp.add_argument("--selected", action="store_true", help="include the sweep-selected policy")
    sp.add_argument("--x0-state", type=int, default=1)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    em = _Emitter(args, args.command)
    try:
        args.func(args, em)
        em.finish()
    except DOMAIN_ERRORS as exc:
        em.finish()
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, pol.NotIndexable):
            payload["witness"] = exc.witness.to_dict()
        if isinstance(exc, InvalidModel):
            payload["violations"] = exc.violations
        sys.stderr.write(_json_text(payload))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
