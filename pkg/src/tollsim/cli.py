"""Command-line entry point.

Subcommands:
  generate   build a synthetic scenario directory
  run        execute a reference / congestion / congestion_plus run
  compare    full report suite for a policy run against a reference run
  tax        fleet energy-tax projection, optionally against toll revenue

Every output directory is self-describing: a manifest records inputs,
configuration hashes and artifact checksums, and rerunning with the same
flags reproduces identical files.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, taxmodel
from .mobsim import write_event_log
from .replanning import RunState, run_loop
from .scenario import (Scenario, ScenarioError, SynthSpec, apply_modifiers,
                       generate_synthetic, load_scenario, plan_from_json, plan_to_json,
                       save_scenario)
from .taxmodel import TaxModelError
from .tolling import TollSchedule, n_intervals, read_schedule, write_schedule

SCENARIO_KINDS = ("reference", "congestion", "congestion_plus")
MANIFEST_NAME = "manifest.json"

KIND_PRESETS = {
    "reference": dict(toll_enabled=False, capacity_multiplier=1.0, pt_constant_multiplier=1.0),
    "congestion": dict(toll_enabled=True, capacity_multiplier=1.0, pt_constant_multiplier=1.0),
    "congestion_plus": dict(toll_enabled=True, capacity_multiplier=1.1,
                            pt_constant_multiplier=0.8),
}


class CliError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, payload: dict, artifact_names: list) -> None:
    payload = dict(payload)
    payload["format"] = "tollsim-manifest"
    payload["version"] = 1
    payload["checksums"] = {name: _sha256(out_dir / name) for name in sorted(artifact_names)}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _read_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        raise CliError(f"no manifest in {run_dir}")
    return json.loads(path.read_text())


def _config_hash(scenario: Scenario) -> str:
    from .scenario import _config_to_json
    blob = json.dumps(_config_to_json(scenario.config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    spec = SynthSpec(kind=args.kind, n_agents=args.agents, rings=args.rings,
                     spokes=args.spokes, n_freight=args.freight,
                     sample_scale=args.sample_scale, k_p=args.k_p)
    scenario = generate_synthetic(spec, seed=args.seed)
    out = Path(args.out)
    save_scenario(scenario, out)
    _write_manifest(out, {
        "command": "generate", "kind": args.kind, "seed": args.seed,
        "agents": args.agents, "config_hash": _config_hash(scenario),
    }, ["network.json", "population.json", "zones.json", "config.json"])
    print(f"generated {args.kind} scenario with {len(scenario.population)} agents at {out}")
    return 0


# ---------------------------------------------------------------------------
# run


def _load_warm_state(run_dir: Path, scenario: Scenario) -> RunState:
    manifest = _read_manifest(run_dir)
    n_links = len(scenario.network.link_order)
    interval = scenario.config.toll.interval_s
    bins = n_intervals(interval)
    tt_table = np.zeros((n_links, bins))
    with open(run_dir / "travel_times_final.csv") as fh:
        next(fh)
        for line in fh:
            lid, b, value = line.strip().split(",")
            tt_table[scenario.network.link_index[lid], int(b)] = float(value)
    schedule = read_schedule(run_dir / "toll_state.csv", scenario.network.link_index,
                             n_links, interval)
    state_doc = json.loads((run_dir / "population_state.json").read_text())
    by_id = scenario.population.by_id
    for entry in state_doc["agents"]:
        agent = by_id[entry["id"]]
        agent.plans = [plan_from_json(p) for p in entry["plans"]]
        agent.selected = entry["selected"]
    return RunState(completed_iterations=manifest["completed_iterations"],
                    tt_table=tt_table, toll_schedule=schedule)


def _save_run_state(out: Path, scenario: Scenario, state: RunState) -> None:
    doc = {"agents": [{"id": a.id, "selected": a.selected,
                       "plans": [plan_to_json(p) for p in a.plans]}
                      for a in scenario.population.agents]}
    (out / "population_state.json").write_text(json.dumps(doc, sort_keys=True) + "\n")
    lines = ["link,interval,seconds"]
    link_ids = scenario.network.link_order
    for i, lid in enumerate(link_ids):
        for b in range(state.tt_table.shape[1]):
            lines.append(f"{lid},{b},{float(state.tt_table[i, b])!r}")
    (out / "travel_times_final.csv").write_text("\n".join(lines) + "\n")
    write_schedule(state.toll_schedule, link_ids, out / "toll_state.csv")


def cmd_run(args) -> int:
    scenario_dir = Path(args.scenario)
    scenario = load_scenario(scenario_dir)
    population_hash = _sha256(scenario_dir / "population.json")
    preset = KIND_PRESETS[args.kind]
    scenario.config.toll_enabled = preset["toll_enabled"]
    scenario.config.capacity_multiplier = preset["capacity_multiplier"]
    scenario.config.pt_constant_multiplier = preset["pt_constant_multiplier"]
    if args.seed is not None:
        scenario.config.rng_seed = args.seed
    scenario = apply_modifiers(scenario)

    state = None
    if args.warm_start:
        warm_dir = Path(args.warm_start)
        warm_manifest = _read_manifest(warm_dir)
        if warm_manifest["population_hash"] != population_hash:
            raise CliError(
                "warm start population mismatch: run has "
                f"{warm_manifest['population_hash'][:12]}…, scenario has "
                f"{population_hash[:12]}…")
        state = _load_warm_state(warm_dir, scenario)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_loop(scenario, iterations=args.iterations, out_dir=out,
                      state=state, quiet=not args.verbose)

    write_event_log(result.final_event_log, out / "events_final.csv")
    legs = []
    for agent_id in sorted(result.final_executed):
        for i, leg in enumerate(result.final_executed[agent_id]):
            legs.append(analysis.LegRecord(
                agent=agent_id, index=i, mode=leg.mode, departure_s=leg.departure_s,
                arrival_s=leg.arrival_s, distance_m=leg.distance_m,
                toll_paid=-leg.money_amount))
    analysis.write_leg_records(legs, out / "legs_final.csv")
    agent_rows = []
    for agent in scenario.population.agents:
        scores = result.score_history[agent.id]
        tolls = result.toll_history[agent.id]
        agent_rows.append(analysis.AgentRecord(
            id=agent.id, income=agent.income, home_zone=agent.home_zone,
            beta_m_n=result.beta_m_n[agent.id], score_final=scores[-1],
            score_last10=float(np.mean(scores[-10:])), toll_final=tolls[-1],
            toll_last10=float(np.mean(tolls[-10:]))))
    analysis.write_agent_records(agent_rows, out / "agents_final.csv")
    _save_run_state(out, scenario, result.state)

    iterations_run = len(result.kpis)
    artifacts = ["events_final.csv", "legs_final.csv", "agents_final.csv",
                 "iteration_kpis.csv", "score_stats.csv", "population_state.json",
                 "travel_times_final.csv", "toll_state.csv"]
    _write_manifest(out, {
        "command": "run", "kind": args.kind, "scenario_path": str(scenario_dir.resolve()),
        "seed": scenario.config.rng_seed, "iterations": iterations_run,
        "completed_iterations": result.state.completed_iterations,
        "sample_scale": scenario.config.sample_scale,
        "capacity_multiplier": preset["capacity_multiplier"],
        "pt_constant_multiplier": preset["pt_constant_multiplier"],
        "toll_enabled": preset["toll_enabled"],
        "money_cpi_factor": scenario.config.money_cpi_factor,
        "population_hash": population_hash, "config_hash": _config_hash(scenario),
    }, artifacts)
    final = result.kpis[-1]
    print(f"run {args.kind}: {iterations_run} iterations, final delay "
          f"{final.car_delay_hours:.2f} h, revenue {final.toll_revenue:.2f}, "
          f"car trips {final.car_trips}")
    return 0


# ---------------------------------------------------------------------------
# compare


def _mean_last_revenue(run_dir: Path, n: int = 10) -> float:
    rows = (run_dir / "iteration_kpis.csv").read_text().splitlines()[1:]
    values = [float(line.split(",")[4]) for line in rows[-n:]]
    return float(np.mean(values))


def cmd_compare(args) -> int:
    ref_dir, pol_dir = Path(args.reference), Path(args.policy)
    ref_manifest, pol_manifest = _read_manifest(ref_dir), _read_manifest(pol_dir)
    if ref_manifest["population_hash"] != pol_manifest["population_hash"]:
        raise CliError(
            "population hash mismatch: reference "
            f"{ref_manifest['population_hash']} vs policy {pol_manifest['population_hash']}")
    scenario = load_scenario(Path(ref_manifest["scenario_path"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    from .mobsim import read_event_log
    sample_scale = ref_manifest["sample_scale"]
    cpi_factor = ref_manifest.get("money_cpi_factor", 1.0)
    reports = {}
    legs = {}
    agents = {}
    for name, run_dir in (("reference", ref_dir), ("policy", pol_dir)):
        events = read_event_log(run_dir / "events_final.csv")
        legs[name] = analysis.read_leg_records(run_dir / "legs_final.csv")
        agents[name] = analysis.read_agent_records(run_dir / "agents_final.csv")
        reports[name] = analysis.traffic_kpis(events, legs[name], scenario.network,
                                              sample_scale, cpi_factor)

    deltas = analysis.compare_kpis(reports["reference"], reports["policy"])
    analysis.write_kpi_comparison(deltas, out / "kpis.csv")

    shift = analysis.behavioral_shift(legs["reference"], legs["policy"],
                                      threshold_s=args.shift_threshold)
    analysis.write_shift_report(shift, out / "shifts.csv")

    ref_by_id = {a.id: a for a in agents["reference"]}
    delta_utils = {}
    tolls = {}
    beta = {}
    for a in agents["policy"]:
        ref = ref_by_id.get(a.id)
        if ref is None:
            raise CliError(f"agent {a.id} missing from the reference run")
        delta_utils[a.id] = a.score_last10 - ref.score_last10
        tolls[a.id] = a.toll_last10
        beta[a.id] = a.beta_m_n

    revenue = _mean_last_revenue(pol_dir)
    welfare_report = analysis.welfare(revenue, delta_utils, beta)
    analysis.write_welfare_report(welfare_report, out / "welfare.csv")

    vertical = analysis.vertical_distribution(agents["policy"], tolls, delta_utils)
    analysis.write_decile_report(vertical, out / "deciles.csv")
    zone_rows = analysis.horizontal_distribution(agents["policy"], scenario.zones,
                                                 tolls, delta_utils)
    analysis.write_zone_report(zone_rows, out / "zones.csv")

    _write_manifest(out, {
        "command": "compare", "reference": str(ref_dir.resolve()),
        "policy": str(pol_dir.resolve()),
        "population_hash": ref_manifest["population_hash"],
    }, ["kpis.csv", "shifts.csv", "welfare.csv", "deciles.csv", "zones.csv"])
    print(f"compared {pol_dir.name} against {ref_dir.name}: net welfare "
          f"{welfare_report.net_welfare:.2f} per day (sample scale)")
    return 0


# ---------------------------------------------------------------------------
# tax


def cmd_tax(args) -> int:
    data = taxmodel.load_fleet_dir(args.tables)
    baseline = args.baseline_years
    report = taxmodel.tax_report(data, args.target_year, baseline_years=baseline,
                                 phev_electric_share=args.phev_electric_share)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    taxmodel.write_tax_report(report, out / "tax_report.csv")
    print(f"target {report.target_year}: shortfall {report.shortfall / 1e6:.1f}M "
          f"vs baseline {report.baseline_years[0]}-{report.baseline_years[-1]}; "
          f"effective rates {report.effective_fuel_per_km:.4f}/km fuel, "
          f"{report.effective_e_per_km:.4f}/km electricity")
    artifacts = ["tax_report.csv"]
    if args.run_dir:
        run_dir = Path(args.run_dir)
        manifest = _read_manifest(run_dir)
        daily = _mean_last_revenue(run_dir)
        annual = analysis.upscale(daily, manifest["sample_scale"]) \
            * manifest.get("money_cpi_factor", 1.0)
        surplus = annual - report.shortfall
        lines = ["quantity,value",
                 f"energy_tax_shortfall,{report.shortfall!r}",
                 f"annual_toll_revenue,{annual!r}",
                 f"surplus,{surplus!r}",
                 f"covers_shortfall,{int(surplus >= 0)}"]
        (out / "tax_vs_toll.csv").write_text("\n".join(lines) + "\n")
        artifacts.append("tax_vs_toll.csv")
        print(f"toll revenue {annual / 1e6:.1f}M vs shortfall "
              f"{report.shortfall / 1e6:.1f}M -> "
              f"{'surplus' if surplus >= 0 else 'deficit'} {abs(surplus) / 1e6:.1f}M")
    _write_manifest(out, {"command": "tax", "tables": str(args.tables),
                          "target_year": args.target_year}, artifacts)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tollsim",
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a synthetic scenario directory")
    g.add_argument("--kind", choices=("corridor", "radial"), default="corridor")
    g.add_argument("--agents", type=int, default=1000)
    g.add_argument("--rings", type=int, default=3)
    g.add_argument("--spokes", type=int, default=8)
    g.add_argument("--freight", type=int, default=120)
    g.add_argument("--sample-scale", type=float, default=0.1)
    g.add_argument("--k-p", type=float, default=0.005,
                   help="toll controller gain, currency per second of delay")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run a scenario for N iterations")
    r.add_argument("scenario", help="scenario directory")
    r.add_argument("--kind", choices=SCENARIO_KINDS, required=True)
    r.add_argument("--iterations", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--warm-start", default=None,
                   help="continue from a previous run directory")
    r.add_argument("--out", required=True)
    r.add_argument("--verbose", action="store_true")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="report suite: policy run vs reference run")
    c.add_argument("reference")
    c.add_argument("policy")
    c.add_argument("--shift-threshold", type=int, default=300,
                   help="departure shift threshold in seconds")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("tax", help="fleet energy-tax projection and shortfall")
    t.add_argument("--tables", default="berlin_brandenburg",
                   help="table directory or bundled preset name")
    t.add_argument("--target-year", type=int, default=2030)
    t.add_argument("--baseline-years", type=int, default=10,
                   help="number of most recent observed years in the baseline")
    t.add_argument("--phev-electric-share", type=float, default=0.5)
    t.add_argument("--run-dir", default=None,
                   help="compare the shortfall against this run's toll revenue")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tax)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, TaxModelError, CliError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
