"""Command-line front end: ``validate``, ``analyze`` and ``simulate``.

Exit codes are a stable contract: 0 success, 1 bad input, 2 numerical
non-convergence.  Set ``GRIDSTAB_LOG`` (e.g. ``DEBUG``) for more output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GridstabError, NumericalError
from .ingest import load_case
from .inverter import OperatingPoint
from .netmodel import build_sensitivity
from .powerflow import InjectionVector, solve_linear
from .scenario import load_inverters, load_scenario
from .simulator import envelope_stats, find_fixed_point, run, sustained_oscillation
from .stability import check_criterion, eta

log = logging.getLogger("gridstab")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def _setup_logging():
    level = os.environ.get("GRIDSTAB_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def cmd_validate(args) -> int:
    net = load_case(args.case)
    p, q = net.load_vectors()
    base = net.base_mva
    # radiality is enforced while parsing, so reaching here means yes
    print(f"{net.n} buses, {len(net.branches)} branches, radial: yes")
    print(f"total load: {p.sum() * base:.4f} MW / {q.sum() * base:.4f} MVar (base {base:g} MVA)")
    return EXIT_OK


def _v_star(mode: str, net, mat, inverters, availability: float) -> np.ndarray:
    inj = InjectionVector.from_network(net)
    if mode == "flat":
        return np.ones(mat.size)
    if mode == "loadflow":
        return solve_linear(mat, inj, net.v0).raise_if_invalid().v
    _, v = find_fixed_point(net, mat, inverters, inj, net.v0, availability={c.bus: availability for c in inverters})
    return v


def cmd_analyze(args) -> int:
    net = load_case(args.case)
    if args.v0 is not None:
        net = replace(net, v0=args.v0)
    mat = build_sensitivity(net)
    inverters, availability = load_inverters(args.inverters) if args.inverters else ([], 1.0)
    v_star = _v_star(args.v_star, net, mat, inverters, availability)
    eta_all = eta(mat, v_star)
    by_bus = {b: float(eta_all[mat.position(b)]) for b in net.bus_ids if b != net.substation_id}
    report = check_criterion([(c, OperatingPoint.from_rating(c, availability)) for c in inverters], by_bus)
    out = report.to_dict()
    out["v_star_mode"] = args.v_star
    out["availability"] = availability
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    worst = report.worst()
    verdict = "stable" if report.verdict else "criterion violated"
    where = f" (smallest margin {worst.margin:.4g} at bus {worst.bus})" if worst else ""
    print(f"verdict: {verdict}{where}", file=sys.stderr)
    return EXIT_OK


def _summary(series, scenario, sfile, case_mode: int, window: float) -> dict:
    v_T = sfile.v_T
    fires = series.firing_times()
    env = envelope_stats(series, window)
    post = {}
    for j, b in enumerate(series.inverter_buses):
        if fires[b]:
            k = int(round(fires[b][0] / scenario.dt))
            post[str(b)] = float(series.flicker[k + 1:, j].max()) if k + 1 < len(series.t) else None
    return {
        "scenario": sfile.name,
        "case_mode": case_mode,
        "seed": scenario.seed,
        "steps": len(series.t),
        "dt": scenario.dt,
        "all_steps_valid": bool(series.valid.all()),
        "policy_periods": {str(c.bus): c.policy_period for c in scenario.inverters},
        "firings": {str(b): t for b, t in fires.items()},
        "adjustments": series.adjustments,
        "final_flicker": {str(b): float(series.flicker[-1, j]) for j, b in enumerate(series.inverter_buses)},
        "max_flicker_after_first_firing": post,
        "sustained_oscillation": {
            str(b): sustained_oscillation(series, b, v_T) for b in series.inverter_buses
        },
        "envelope": env.summary(),
    }


def _write_envelope_csv(path: Path, series, env) -> None:
    rows = ["t,mean_upper,mean_lower,var_upper,var_lower"]
    fmt = "{:.10g}".format
    for k in range(len(series.t)):
        vals = (series.t[k], env.mean_upper[k], env.mean_lower[k], env.var_upper[k], env.var_lower[k])
        rows.append(",".join(fmt(x) for x in vals))
    path.write_text("\n".join(rows) + "\n")


def cmd_simulate(args) -> int:
    overrides = {
        "dt": args.dt,
        "horizon": args.horizon,
        "seed": args.seed,
        "v_T": args.v_T,
        "eps": args.eps,
        "T_d": args.T_d,
        "envelope_window": args.envelope_window,
        "case": str(Path(args.case).resolve()) if args.case else None,
    }
    scenario, sfile = load_scenario(args.config, args.case_mode, overrides)
    log.info("running %s, case mode %d, %d steps", sfile.name, args.case_mode, scenario.steps)
    series = run(scenario)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timeseries.csv").write_text(series.to_csv())
    summary = _summary(series, scenario, sfile, args.case_mode, sfile.envelope_window)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_envelope_csv(out / "envelope.csv", series, envelope_stats(series, sfile.envelope_window))

    fired = sum(len(t) for t in summary["firings"].values())
    print(f"{sfile.name} case {args.case_mode}: {len(series.t)} steps, {fired} policy firing(s); wrote {out}")
    if not summary["all_steps_valid"]:
        print("error: squared voltage became non-positive during the run", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit status 2 is reserved for numerics
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridstab", description="Droop-controlled inverter stability on radial feeders.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse a MATPOWER case and report its shape")
    p.add_argument("case")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="static stability check of an inverter set")
    p.add_argument("case")
    p.add_argument("--inverters", help="inverter JSON file; omitted means no inverters")
    p.add_argument("--v-star", choices=("flat", "loadflow", "fixedpoint"), default="loadflow")
    p.add_argument("--v0", type=float, help="substation voltage (pu); default from the case")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a scenario and write CSV and JSON outputs")
    p.add_argument("--config", required=True, help="scenario JSON file or packaged scenario name")
    p.add_argument("--case-mode", type=int, choices=(1, 2, 3), default=3,
                   help="1: no inverters, 2: inverters without policy, 3: inverters with policy")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="gridstab-out")
    p.add_argument("--case", help="override the scenario's case file")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--T-d", dest="T_d", type=float, help="uniform policy period for every inverter")
    p.add_argument("--v-T", dest="v_T", type=float, help="flicker threshold (pu)")
    p.add_argument("--eps", type=float, help="stability margin used by the policy")
    p.add_argument("--envelope-window", type=float)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GridstabError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
