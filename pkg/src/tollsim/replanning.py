"""Co-evolutionary replanning: selection and innovation strategies plus the
iteration loop (mobsim -> scoring -> toll update -> replanning).

Innovation (reroute, departure-time mutation, mode change) runs only while
the iteration count stays within the configured innovation fraction of the
run; afterwards agents merely select among their memorized plans. Every
random decision draws from a per-agent stream derived from (seed, iteration,
agent index), so results do not depend on scheduling order.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .mobsim import MobsimResult, NetworkArrays, build_event_log, run_mobsim
from .scenario import (DAY_S, NETWORK_MODES, Activity, Leg, Plan, Scenario,
                       StrategyConfig)
from .scoring import ExecutedLeg, ScoringParams, marginal_utility_of_money, score_plan
from .tolling import TollSchedule, n_intervals, update_tolls, write_schedule

STRATEGY_ORDER = ("select_exp_beta", "reroute", "time_mutate", "mode_change")
CHANGEABLE_MODES = ("car", "pt", "bicycle", "walk")


class ReplanningError(RuntimeError):
    pass


def agent_rng(seed: int, iteration: int, agent_index: int) -> np.random.Generator:
    """Counter-style per-agent stream: independent of processing order and
    stable across warm starts (iteration is the global index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration, agent_index)))


# ---------------------------------------------------------------------------
# selection


def select_plan(agent, temperature: float, rng: np.random.Generator) -> int:
    """Multinomial choice with probability proportional to exp(score/T).

    Plans that were never scored are selected first, one at a time, so every
    plan gets executed at least once. Temperature zero degenerates to argmax.
    """
    if not agent.plans:
        raise ReplanningError(f"agent {agent.id} has no plans")
    for i, plan in enumerate(agent.plans):
        if plan.score is None:
            return i
    scores = np.array([p.score for p in agent.plans])
    if temperature <= 1e-12:
        return int(np.argmax(scores))
    weights = np.exp((scores - scores.max()) / temperature)
    probs = weights / weights.sum()
    return int(rng.choice(len(probs), p=probs))


# ---------------------------------------------------------------------------
# innovation operators


def mutate_times(plan: Plan, mutation_range_s: int, rng: np.random.Generator) -> Plan:
    """Shift every planned activity end by an independent uniform draw in
    [-range, +range], clamped to the day; legs keep in sync."""
    new = copy.deepcopy(plan)
    new.score = None
    for element in new.elements:
        if isinstance(element, Activity) and element.planned_end_s is not None:
            shift = int(rng.integers(-mutation_range_s, mutation_range_s + 1))
            element.planned_end_s = int(np.clip(element.planned_end_s + shift, 0, DAY_S - 1))
    _sync_departures(new)
    return new


def _sync_departures(plan: Plan) -> None:
    acts, legs = plan.activities, plan.legs
    for i, leg in enumerate(legs):
        leg.departure_s = acts[i].planned_end_s


@dataclass
class Router:
    """Time-dependent least-generalized-cost routing over the previous
    iteration's travel times and the current toll schedule."""
    arrays: NetworkArrays
    tt_table: np.ndarray
    toll_schedule: TollSchedule
    params: ScoringParams
    eps: float = 1e-6

    def route(self, from_link: str, to_link: str, departure_s: int, beta_m_n: float) -> list:
        routes = self.route_many([(from_link, to_link, departure_s, beta_m_n)])
        return routes[0]

    def route_many(self, queries: list) -> list:
        """queries: (from_link, to_link, departure_s, beta_m_n) tuples."""
        arrays = self.arrays
        direct = []
        q_from = np.empty(len(queries), dtype=np.int64)
        q_to = np.empty(len(queries), dtype=np.int64)
        q_dep = np.empty(len(queries))
        q_beta = np.empty(len(queries))
        for i, (from_link, to_link, dep, beta) in enumerate(queries):
            fi, ti = arrays.link_index[from_link], arrays.link_index[to_link]
            direct.append(from_link == to_link)
            q_from[i] = arrays.to_node[fi]
            q_to[i] = arrays.from_node[ti]
            q_dep[i] = dep
            q_beta[i] = beta
        paths, offsets, ok = kernels.route_batch(
            arrays.csr_start, arrays.csr_link, arrays.from_node, arrays.to_node,
            arrays.length, self.tt_table, self.toll_schedule.m,
            np.int64(self.toll_schedule.interval_s), q_from, q_to, q_dep, q_beta,
            -self.params.beta_trav["car"] / 3600.0, -self.params.gamma_d["car"], self.eps)
        routes = []
        for i, (from_link, to_link, _, _) in enumerate(queries):
            if direct[i]:
                routes.append([from_link])
                continue
            if not ok[i]:
                raise ReplanningError(f"no route from {from_link!r} to {to_link!r}")
            middle = [arrays.link_ids[j] for j in paths[offsets[i]:offsets[i + 1]]]
            routes.append([from_link] + middle + [to_link])
        return routes


def reroute(plan: Plan, router: Router, beta_m_n: float) -> Plan:
    """Replace the route of every network leg by the current least-cost path."""
    new = copy.deepcopy(plan)
    new.score = None
    acts, legs = new.activities, new.legs
    queries, targets = [], []
    for i, leg in enumerate(legs):
        if leg.mode in NETWORK_MODES:
            queries.append((acts[i].link, acts[i + 1].link, leg.departure_s, beta_m_n))
            targets.append(leg)
    if queries:
        for leg, route in zip(targets, router.route_many(queries)):
            leg.route = route
    return new


def tours_of(plan: Plan) -> list:
    """Home-based tours as (first leg index, last leg index) pairs; tour
    boundaries sit at activities typed like the first one."""
    acts = plan.activities
    anchor = acts[0].type
    bounds = [i for i, act in enumerate(acts) if act.type == anchor]
    tours = []
    for a, b in zip(bounds, bounds[1:]):
        tours.append((a, b - 1))
    return tours


def change_mode(plan: Plan, agent, router: Router, beta_m_n: float,
                rng: np.random.Generator) -> Plan:
    """Flip one whole home-based tour to a different feasible mode."""
    new = copy.deepcopy(plan)
    new.score = None
    tours = tours_of(new)
    if not tours:
        raise ReplanningError(f"plan of {agent.id} has no tour")
    first, last = tours[int(rng.integers(len(tours)))]
    legs, acts = new.legs, new.activities
    current = legs[first].mode
    feasible = [m for m in CHANGEABLE_MODES
                if (m != "car" or agent.car_available) and m != current]
    if not feasible:
        raise ReplanningError(f"no feasible alternative mode for {agent.id}")
    mode = feasible[int(rng.integers(len(feasible)))]
    queries = []
    for i in range(first, last + 1):
        legs[i].mode = mode
        if mode == "car":
            queries.append((acts[i].link, acts[i + 1].link, legs[i].departure_s, beta_m_n))
        else:
            legs[i].route = []
    if queries:
        routes = router.route_many(queries)
        for k, i in enumerate(range(first, last + 1)):
            legs[i].route = routes[k]
    return new


def trim_memory(agent, memory_max: int) -> None:
    """Drop the lowest-scored plans until the memory fits; the selected plan
    survives, unscored plans are kept in favour of scored ones."""
    while len(agent.plans) > memory_max:
        worst, worst_score = -1, math.inf
        for i, plan in enumerate(agent.plans):
            if i == agent.selected:
                continue
            score = math.inf if plan.score is None else plan.score
            if score < worst_score:
                worst, worst_score = i, score
        if worst < 0:   # everything except the selected plan is unscored
            worst = 0 if agent.selected != 0 else 1
        agent.plans.pop(worst)
        if worst < agent.selected:
            agent.selected -= 1


# ---------------------------------------------------------------------------
# the iteration loop


def innovation_cutoff(iterations: int, fraction: float) -> int:
    return int(math.floor(iterations * fraction + 1e-9))


@dataclass
class IterationKpis:
    iteration: int
    mean_executed_score: float
    car_trips: int
    car_delay_hours: float
    toll_revenue: float
    innovation_active: bool


@dataclass
class ScoreStats:
    iteration: int
    mean_executed: float
    mean_best: float
    mean_worst: float


@dataclass
class RunState:
    """Everything a warm start needs besides the scenario itself."""
    completed_iterations: int = 0
    tt_table: np.ndarray | None = None
    toll_schedule: TollSchedule | None = None


@dataclass
class RunResult:
    kpis: list
    score_stats: list
    final_result: MobsimResult
    final_event_log: object
    final_executed: dict          # agent id -> list[ExecutedLeg]
    score_history: dict           # agent id -> per-iteration executed scores
    toll_history: dict            # agent id -> per-iteration toll payments
    state: RunState
    beta_m_n: dict


def executed_legs_by_agent(result: MobsimResult) -> dict:
    out: dict = {}
    for i, task in enumerate(result.tasks):
        if task.owner_kind != "person":
            continue
        out.setdefault(task.owner, []).append(ExecutedLeg(
            mode=task.mode, departure_s=int(result.leg_dep[i]),
            arrival_s=int(result.leg_arr[i]), distance_m=task.distance_m,
            money_amount=-float(result.leg_toll[i])))
    return out


def _car_kpis(result: MobsimResult) -> tuple:
    """Daily passenger-car trips and delay hours."""
    trips = 0
    car_legs = np.zeros(len(result.tasks), dtype=bool)
    for i, task in enumerate(result.tasks):
        if task.owner_kind == "person" and task.mode == "car":
            trips += 1
            car_legs[i] = True
    delays = result.traversal_delays()
    mask = car_legs[result.trav_leg]
    return trips, float(delays[mask].sum()) / 3600.0


def run_loop(scenario: Scenario, iterations: int | None = None,
             toll_enabled: bool | None = None, out_dir=None,
             state: RunState | None = None, quiet: bool = True,
             on_iteration=None) -> RunResult:
    """Run the full day-to-day loop for ``iterations`` days.

    A warm start passes the ``state`` of a previous run; global iteration
    numbering then continues where that run stopped, while the innovation
    cutoff applies to the new run's own length. ``on_iteration(k, scenario)``
    fires after each iteration's replanning, with k the within-run index.
    """
    config = scenario.config
    iterations = iterations or config.iterations
    toll_enabled = config.toll_enabled if toll_enabled is None else toll_enabled
    state = state or RunState()
    arrays = NetworkArrays.build(scenario.network, config.sample_scale)
    bins = n_intervals(config.toll.interval_s)

    agents = scenario.population.agents
    params = config.scoring
    if params.population_average_income is None:
        params.population_average_income = scenario.population.average_income()
    beta_m_n = {a.id: marginal_utility_of_money(params.beta_m,
                                                params.population_average_income, a.income)
                for a in agents}

    tt_table = state.tt_table
    if tt_table is None:
        tt_table = np.tile(arrays.t_free_f[:, None], (1, bins))
    toll_schedule = state.toll_schedule or TollSchedule.zero(arrays.n_links,
                                                             config.toll.interval_s)
    if not toll_enabled:
        toll_schedule = TollSchedule.zero(arrays.n_links, config.toll.interval_s)

    cutoff = innovation_cutoff(iterations, config.innovation_fraction)
    strategy = config.strategy
    kpis: list[IterationKpis] = []
    stats: list[ScoreStats] = []
    score_history: dict = {a.id: [] for a in agents}
    toll_history: dict = {a.id: [] for a in agents}
    result = None
    executed = None

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for k in range(1, iterations + 1):
        global_iter = state.completed_iterations + k
        selected = {a.id: a.selected_plan for a in agents}
        result = run_mobsim(scenario, selected, toll_schedule, arrays)
        executed = executed_legs_by_agent(result)

        for agent in agents:
            scored = score_plan(agent.selected_plan, executed.get(agent.id, []),
                                params, beta_m_n[agent.id])
            agent.selected_plan.score = scored.total
            score_history[agent.id].append(scored.total)
            toll_history[agent.id].append(-scored.money_total)

        trips, delay_h = _car_kpis(result)
        executed_scores = np.array([score_history[a.id][-1] for a in agents])
        best = np.array([max(p.score for p in a.plans if p.score is not None)
                         for a in agents])
        worst = np.array([min(p.score for p in a.plans if p.score is not None)
                          for a in agents])
        kpis.append(IterationKpis(iteration=global_iter,
                                  mean_executed_score=float(executed_scores.mean()),
                                  car_trips=trips, car_delay_hours=delay_h,
                                  toll_revenue=result.total_revenue(),
                                  innovation_active=k <= cutoff))
        stats.append(ScoreStats(iteration=global_iter, mean_executed=float(executed_scores.mean()),
                                mean_best=float(best.mean()), mean_worst=float(worst.mean())))
        if out_dir is not None:
            write_schedule(toll_schedule, arrays.link_ids,
                           out_dir / f"tolls_iter_{global_iter:04d}.csv")
        if not quiet:
            print(f"iter {global_iter}: score {executed_scores.mean():.2f} "
                  f"delay {delay_h:.1f} h revenue {result.total_revenue():.2f}")

        if toll_enabled:
            toll_schedule = update_tolls(result.delay_table(), config.toll,
                                         previous=toll_schedule)
        tt_table = result.travel_time_table()

        if k < iterations:
            innovate = (k + 1) <= cutoff
            router = Router(arrays=arrays, tt_table=tt_table, toll_schedule=toll_schedule,
                            params=params)
            _replan_all(agents, strategy, innovate, router, beta_m_n,
                        config.rng_seed, global_iter)
        if on_iteration is not None:
            on_iteration(k, scenario)

    if out_dir is not None:
        _write_kpis(out_dir / "iteration_kpis.csv", kpis)
        _write_stats(out_dir / "score_stats.csv", stats)

    final_state = RunState(completed_iterations=state.completed_iterations + iterations,
                           tt_table=tt_table, toll_schedule=toll_schedule)
    return RunResult(kpis=kpis, score_stats=stats, final_result=result,
                     final_event_log=build_event_log(result), final_executed=executed,
                     score_history=score_history, toll_history=toll_history,
                     state=final_state, beta_m_n=beta_m_n)


def _replan_all(agents, strategy: StrategyConfig, innovate: bool, router: Router,
                beta_m_n: dict, seed: int, global_iter: int) -> None:
    names = [n for n in STRATEGY_ORDER if innovate or n == "select_exp_beta"]
    weights = np.array([strategy.weights.get(n, 0.0) for n in names])
    if weights.sum() <= 0:
        weights = np.array([1.0] + [0.0] * (len(names) - 1))
    probs = np.cumsum(weights / weights.sum())
    for idx, agent in enumerate(agents):
        rng = agent_rng(seed, global_iter, idx)
        u = rng.random()
        choice = names[min(int(np.searchsorted(probs, u, side="right")), len(names) - 1)]
        if choice == "select_exp_beta":
            agent.selected = select_plan(agent, strategy.selection_temperature, rng)
            continue
        base = agent.selected_plan
        if choice == "reroute":
            plan = reroute(base, router, beta_m_n[agent.id])
        elif choice == "time_mutate":
            plan = mutate_times(base, strategy.time_mutation_range_s, rng)
        else:
            try:
                plan = change_mode(base, agent, router, beta_m_n[agent.id], rng)
            except ReplanningError:
                agent.selected = select_plan(agent, strategy.selection_temperature, rng)
                continue
        agent.plans.append(plan)
        agent.selected = len(agent.plans) - 1
        trim_memory(agent, strategy.plan_memory_max)


KPI_HEADER = "iteration,mean_executed_score,car_trips,car_delay_hours,toll_revenue,innovation_active"
STATS_HEADER = "iteration,mean_executed,mean_best,mean_worst"


def _write_kpis(path, kpis) -> None:
    lines = [KPI_HEADER]
    for row in kpis:
        lines.append(f"{row.iteration},{row.mean_executed_score!r},{row.car_trips},"
                     f"{row.car_delay_hours!r},{row.toll_revenue!r},{int(row.innovation_active)}")
    path.write_text("\n".join(lines) + "\n")


def _write_stats(path, stats) -> None:
    lines = [STATS_HEADER]
    for row in stats:
        lines.append(f"{row.iteration},{row.mean_executed!r},{row.mean_best!r},{row.mean_worst!r}")
    path.write_text("\n".join(lines) + "\n")
