"""Post-processing: KPIs, upscaling, behavioural shifts, emissions, welfare
and distributional breakdowns.

Everything here is a pure function over completed run artifacts (event logs,
leg records, per-agent scores). Monetary annualization applies the
configured CPI factor; volumes scale linearly with the inverse sample share
and 365 days.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mobsim import EVENT_KINDS, EventLog
from .scenario import Network, Zones

DEFAULT_SAMPLE_SCALE = 0.1
DEFAULT_DEPARTURE_SHIFT_S = 300
EF_KM_G_PER_VKM = 181.887     # fleet-average exhaust CO2 per vehicle-km
EF_HOUR_KG_PER_H = 11.56      # CO2 per congested vehicle-hour


class AnalysisError(ValueError):
    pass


def upscale(daily_sample_value: float, sample_scale: float = DEFAULT_SAMPLE_SCALE) -> float:
    """Linear upscaling of a daily sample aggregate to a full-population
    annual value: divide by the sample share, multiply by 365 days."""
    return daily_sample_value * (1.0 / sample_scale) * 365.0


# ---------------------------------------------------------------------------
# records exchanged between runs and analyses


@dataclass
class LegRecord:
    agent: str
    index: int
    mode: str
    departure_s: int
    arrival_s: int
    distance_m: float
    toll_paid: float


@dataclass
class AgentRecord:
    id: str
    income: float
    home_zone: int
    beta_m_n: float
    score_final: float
    score_last10: float
    toll_final: float
    toll_last10: float


# ---------------------------------------------------------------------------
# traffic KPIs


@dataclass
class KpiReport:
    sample_scale: float
    cpi_factor: float
    toll_revenue: float = 0.0
    avg_toll_per_trip: float = 0.0
    max_toll_per_trip: float = 0.0
    avg_toll_per_km: float = 0.0
    car_delay_hours: float = 0.0
    car_trips: int = 0
    car_km: float = 0.0
    avg_km_per_trip: float = 0.0

    # annual, full-population values; monetary rows are CPI-adjusted
    @property
    def annual_toll_revenue(self) -> float:
        return upscale(self.toll_revenue, self.sample_scale) * self.cpi_factor

    @property
    def annual_car_delay_hours(self) -> float:
        return upscale(self.car_delay_hours, self.sample_scale)

    @property
    def annual_car_trips(self) -> float:
        return upscale(self.car_trips, self.sample_scale)

    @property
    def annual_car_km(self) -> float:
        return upscale(self.car_km, self.sample_scale)

    @property
    def adjusted_avg_toll_per_trip(self) -> float:
        return self.avg_toll_per_trip * self.cpi_factor

    @property
    def adjusted_max_toll_per_trip(self) -> float:
        return self.max_toll_per_trip * self.cpi_factor

    @property
    def adjusted_avg_toll_per_km(self) -> float:
        return self.avg_toll_per_km * self.cpi_factor


def total_revenue(events: EventLog) -> float:
    money = EVENT_KINDS.index("money")
    mask = events.kind == money
    return float(-events.amount[mask].sum()) if mask.any() else 0.0


def car_delay_hours(events: EventLog, legs: list, network: Network) -> float:
    """Total queueing delay of passenger-car traversals, in hours.

    A traversal counts when it falls inside one of the agent's car legs;
    freight and teleported movements never produce matching legs.
    """
    car_windows: dict = {}
    for leg in legs:
        if leg.mode == "car":
            car_windows.setdefault(leg.agent, []).append((leg.departure_s, leg.arrival_s))
    for windows in car_windows.values():
        windows.sort()
    t_free = {lid: max(1, math.ceil(network.links[lid].free_flow_time))
              for lid in network.links}
    enter_kind = EVENT_KINDS.index("link_enter")
    leave_kind = EVENT_KINDS.index("link_leave")
    open_enter: dict = {}
    total = 0.0
    for i in range(len(events)):
        k = events.kind[i]
        if k == enter_kind:
            open_enter[(events.agent[i], events.link[i])] = int(events.time[i])
        elif k == leave_kind:
            agent = events.agent[i]
            enter_t = open_enter.pop((agent, events.link[i]))
            windows = car_windows.get(agent)
            if not windows:
                continue
            deps = [w[0] for w in windows]
            j = bisect_right(deps, enter_t) - 1
            if j < 0 or windows[j][1] < int(events.time[i]):
                continue
            total += max(0, int(events.time[i]) - enter_t - t_free[events.link[i]])
    return total / 3600.0


def traffic_kpis(events: EventLog, legs: list, network: Network,
                 sample_scale: float, cpi_factor: float = 1.0) -> KpiReport:
    """Daily traffic KPIs of one run: one car leg counts as one trip."""
    car_legs = [l for l in legs if l.mode == "car"]
    revenue = total_revenue(events)
    trips = len(car_legs)
    car_km = sum(l.distance_m for l in car_legs) / 1000.0
    report = KpiReport(sample_scale=sample_scale, cpi_factor=cpi_factor,
                       toll_revenue=revenue, car_trips=trips, car_km=car_km)
    report.car_delay_hours = car_delay_hours(events, legs, network)
    if trips:
        report.avg_toll_per_trip = revenue / trips
        report.max_toll_per_trip = max(l.toll_paid for l in car_legs)
        report.avg_km_per_trip = car_km / trips
    if car_km:
        report.avg_toll_per_km = revenue / car_km
    return report


@dataclass
class KpiDelta:
    metric: str
    reference: float
    policy: float
    delta: float
    pct: float


def compare_kpis(reference: KpiReport, policy: KpiReport) -> list:
    """Annual policy-minus-reference deltas for the volume KPIs plus the
    monetary levels of the policy run."""
    if reference.car_trips == 0 and policy.car_trips > 0:
        raise AnalysisError("reference run is empty, nothing to compare against")
    rows = []
    for metric, attr in (("annual_car_delay_hours", "annual_car_delay_hours"),
                         ("annual_car_trips", "annual_car_trips"),
                         ("annual_car_km", "annual_car_km")):
        ref, pol = getattr(reference, attr), getattr(policy, attr)
        delta = pol - ref
        rows.append(KpiDelta(metric=metric, reference=ref, policy=pol, delta=delta,
                             pct=(100.0 * delta / ref) if ref else math.nan))
    for metric in ("annual_toll_revenue", "adjusted_avg_toll_per_trip",
                   "adjusted_max_toll_per_trip", "adjusted_avg_toll_per_km",
                   "avg_km_per_trip"):
        ref, pol = getattr(reference, metric), getattr(policy, metric)
        rows.append(KpiDelta(metric=metric, reference=ref, policy=pol,
                             delta=pol - ref, pct=math.nan))
    return rows


# ---------------------------------------------------------------------------
# behavioural shifts


TRANSITION_CLASSES = ("car2car", "car2pt", "pt2car", "pt2pt", "other")


@dataclass
class ShiftReport:
    counts: dict
    departure_shift_share: dict     # per transition class
    car_to_pt_km: float
    matched_trips: int
    unmatched_trips: int
    threshold_s: int


def _transition(ref_mode: str, pol_mode: str) -> str:
    if ref_mode == "car" and pol_mode == "car":
        return "car2car"
    if ref_mode == "car" and pol_mode == "pt":
        return "car2pt"
    if ref_mode == "pt" and pol_mode == "car":
        return "pt2car"
    if ref_mode == "pt" and pol_mode == "pt":
        return "pt2pt"
    return "other"


def behavioral_shift(ref_legs: list, pol_legs: list,
                     threshold_s: int = DEFAULT_DEPARTURE_SHIFT_S) -> ShiftReport:
    """Classify per-trip mode transitions and departure-time shifts between a
    reference and a policy run of the same population."""
    ref_by_agent: dict = {}
    for leg in ref_legs:
        ref_by_agent.setdefault(leg.agent, []).append(leg)
    pol_by_agent: dict = {}
    for leg in pol_legs:
        pol_by_agent.setdefault(leg.agent, []).append(leg)
    counts = {c: 0 for c in TRANSITION_CLASSES}
    shifted = {c: 0 for c in TRANSITION_CLASSES}
    car_to_pt_km = 0.0
    matched = 0
    unmatched = 0
    for agent in sorted(set(ref_by_agent) | set(pol_by_agent)):
        ref_trips = sorted(ref_by_agent.get(agent, []), key=lambda l: l.index)
        pol_trips = sorted(pol_by_agent.get(agent, []), key=lambda l: l.index)
        n = min(len(ref_trips), len(pol_trips))
        unmatched += abs(len(ref_trips) - len(pol_trips))
        for i in range(n):
            cls = _transition(ref_trips[i].mode, pol_trips[i].mode)
            counts[cls] += 1
            matched += 1
            if abs(pol_trips[i].departure_s - ref_trips[i].departure_s) > threshold_s:
                shifted[cls] += 1
            if cls == "car2pt":
                car_to_pt_km += ref_trips[i].distance_m / 1000.0
    share = {c: (shifted[c] / counts[c] if counts[c] else math.nan)
             for c in TRANSITION_CLASSES}
    return ShiftReport(counts=counts, departure_shift_share=share,
                       car_to_pt_km=car_to_pt_km, matched_trips=matched,
                       unmatched_trips=unmatched, threshold_s=threshold_s)


# ---------------------------------------------------------------------------
# emissions and welfare


def emissions_delta(car_km_delta: float, delay_hours_delta: float,
                    ef_km_g_per_vkm: float = EF_KM_G_PER_VKM,
                    ef_hour_kg_per_h: float = EF_HOUR_KG_PER_H) -> float:
    """CO2 change in tonnes from changed car mileage and congestion time."""
    if ef_km_g_per_vkm < 0 or ef_hour_kg_per_h < 0:
        raise AnalysisError("emission factors must be >= 0")
    return car_km_delta * ef_km_g_per_vkm / 1e6 + delay_hours_delta * ef_hour_kg_per_h / 1e3


@dataclass
class WelfareReport:
    toll_revenue: float
    monetized_utility_change: float
    net_welfare: float
    mean_utility_change_money: float


def welfare(toll_revenue: float, delta_utils: dict, beta_m_n: dict) -> WelfareReport:
    """Net welfare: revenue plus the monetized sum of utility changes, each
    agent converted at their own marginal utility of money."""
    missing = [a for a in delta_utils if a not in beta_m_n]
    if missing:
        raise AnalysisError(f"no marginal utility of money for {missing[:3]}")
    money = [delta_utils[a] / beta_m_n[a] for a in delta_utils]
    total = float(sum(money))
    return WelfareReport(toll_revenue=toll_revenue, monetized_utility_change=total,
                         net_welfare=toll_revenue + total,
                         mean_utility_change_money=(total / len(money) if money else 0.0))


# ---------------------------------------------------------------------------
# distributional breakdowns


@dataclass
class DecileRow:
    decile: int                  # 1 = highest income
    population: int
    mean_income: float
    mean_toll: float             # currency per day
    mean_toll_utils: float       # toll converted per agent before averaging
    mean_delta_utility: float
    revenue_share: float


@dataclass
class VerticalReport:
    rows: list
    spread_money_normalized: float   # (max - min) decile mean toll over overall mean
    spread_utils_normalized: float


def vertical_distribution(agents: list, tolls: dict, delta_utils: dict,
                          n_deciles: int = 10) -> VerticalReport:
    """Break toll burden and utility change down by income decile.

    Decile 1 holds the highest incomes; decile populations differ by at most
    one agent. The utils-denominated burden applies each agent's own
    marginal utility of money before averaging.
    """
    if not agents:
        raise AnalysisError("no agents to rank")
    ordered = sorted(agents, key=lambda a: (-a.income, a.id))
    base, extra = divmod(len(ordered), n_deciles)
    rows = []
    total_revenue_paid = sum(tolls.get(a.id, 0.0) for a in agents)
    start = 0
    all_money, all_utils = [], []
    for d in range(1, n_deciles + 1):
        size = base + (1 if d <= extra else 0)
        group = ordered[start:start + size]
        start += size
        if not group:
            raise AnalysisError(f"income decile {d} is empty")
        toll_values = [tolls.get(a.id, 0.0) for a in group]
        util_values = [tolls.get(a.id, 0.0) * a.beta_m_n for a in group]
        delta_values = [delta_utils.get(a.id, 0.0) for a in group]
        rows.append(DecileRow(
            decile=d, population=len(group),
            mean_income=float(np.mean([a.income for a in group])),
            mean_toll=float(np.mean(toll_values)),
            mean_toll_utils=float(np.mean(util_values)),
            mean_delta_utility=float(np.mean(delta_values)),
            revenue_share=(sum(toll_values) / total_revenue_paid
                           if total_revenue_paid else 0.0)))
        all_money.append(rows[-1].mean_toll)
        all_utils.append(rows[-1].mean_toll_utils)
    money_mean = float(np.mean(all_money))
    utils_mean = float(np.mean(all_utils))
    return VerticalReport(
        rows=rows,
        spread_money_normalized=((max(all_money) - min(all_money)) / money_mean
                                 if money_mean else 0.0),
        spread_utils_normalized=((max(all_utils) - min(all_utils)) / utils_mean
                                 if utils_mean else 0.0))


@dataclass
class ZoneRow:
    zone: int
    classification: str
    population: int
    total_toll: float
    total_delta_utility: float
    mean_toll_per_resident: float
    mean_delta_utility_per_resident: float


def horizontal_distribution(agents: list, zones: Zones, tolls: dict,
                            delta_utils: dict) -> list:
    """Break toll burden and utility change down by home zone."""
    by_zone: dict = {z.id: [] for z in zones.zones}
    for agent in agents:
        if agent.home_zone not in by_zone:
            raise AnalysisError(f"agent {agent.id} has unresolved zone {agent.home_zone}")
        by_zone[agent.home_zone].append(agent)
    rows = []
    for zone in zones.zones:
        group = by_zone[zone.id]
        toll_total = sum(tolls.get(a.id, 0.0) for a in group)
        delta_total = sum(delta_utils.get(a.id, 0.0) for a in group)
        n = len(group)
        rows.append(ZoneRow(zone=zone.id, classification=zone.classification,
                            population=n, total_toll=toll_total,
                            total_delta_utility=delta_total,
                            mean_toll_per_resident=toll_total / n if n else 0.0,
                            mean_delta_utility_per_resident=delta_total / n if n else 0.0))
    return rows


# ---------------------------------------------------------------------------
# delimited report files


def write_kpi_comparison(rows: list, path: str | Path) -> None:
    lines = ["metric,reference,policy,delta,pct"]
    for r in rows:
        pct = "" if math.isnan(r.pct) else repr(r.pct)
        lines.append(f"{r.metric},{r.reference!r},{r.policy!r},{r.delta!r},{pct}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_shift_report(report: ShiftReport, path: str | Path) -> None:
    lines = ["transition,trips,departure_shift_share"]
    for c in TRANSITION_CLASSES:
        share = report.departure_shift_share[c]
        lines.append(f"{c},{report.counts[c]},"
                     f"{'' if math.isnan(share) else repr(share)}")
    lines.append(f"car_to_pt_km,{report.car_to_pt_km!r},")
    lines.append(f"matched_trips,{report.matched_trips},")
    lines.append(f"unmatched_trips,{report.unmatched_trips},")
    Path(path).write_text("\n".join(lines) + "\n")


def write_decile_report(report: VerticalReport, path: str | Path) -> None:
    lines = ["decile,population,mean_income,mean_toll,mean_toll_utils,"
             "mean_delta_utility,revenue_share"]
    for r in report.rows:
        lines.append(f"{r.decile},{r.population},{r.mean_income!r},{r.mean_toll!r},"
                     f"{r.mean_toll_utils!r},{r.mean_delta_utility!r},{r.revenue_share!r}")
    lines.append(f"# spread_money_normalized,{report.spread_money_normalized!r}")
    lines.append(f"# spread_utils_normalized,{report.spread_utils_normalized!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_zone_report(rows: list, path: str | Path) -> None:
    lines = ["zone,classification,population,total_toll,total_delta_utility,"
             "mean_toll_per_resident,mean_delta_utility_per_resident"]
    for r in rows:
        lines.append(f"{r.zone},{r.classification},{r.population},{r.total_toll!r},"
                     f"{r.total_delta_utility!r},{r.mean_toll_per_resident!r},"
                     f"{r.mean_delta_utility_per_resident!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_welfare_report(report: WelfareReport, path: str | Path) -> None:
    lines = ["quantity,value",
             f"toll_revenue,{report.toll_revenue!r}",
             f"monetized_utility_change,{report.monetized_utility_change!r}",
             f"net_welfare,{report.net_welfare!r}",
             f"mean_utility_change_money,{report.mean_utility_change_money!r}"]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# run-directory records IO (written by the CLI after a run)

LEGS_HEADER = "agent,leg_index,mode,departure_s,arrival_s,distance_m,toll_paid"
AGENTS_HEADER = ("agent,income,home_zone,beta_m_n,score_final,score_last10,"
                 "toll_final,toll_last10")


def write_leg_records(legs: list, path: str | Path) -> None:
    lines = [LEGS_HEADER]
    for l in legs:
        lines.append(f"{l.agent},{l.index},{l.mode},{l.departure_s},{l.arrival_s},"
                     f"{l.distance_m!r},{l.toll_paid!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_leg_records(path: str | Path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [LegRecord(agent=r["agent"], index=int(r["leg_index"]), mode=r["mode"],
                          departure_s=int(r["departure_s"]), arrival_s=int(r["arrival_s"]),
                          distance_m=float(r["distance_m"]), toll_paid=float(r["toll_paid"]))
                for r in reader]


def write_agent_records(agents: list, path: str | Path) -> None:
    lines = [AGENTS_HEADER]
    for a in agents:
        lines.append(f"{a.id},{a.income!r},{a.home_zone},{a.beta_m_n!r},{a.score_final!r},"
                     f"{a.score_last10!r},{a.toll_final!r},{a.toll_last10!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_agent_records(path: str | Path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [AgentRecord(id=r["agent"], income=float(r["income"]),
                            home_zone=int(r["home_zone"]), beta_m_n=float(r["beta_m_n"]),
                            score_final=float(r["score_final"]),
                            score_last10=float(r["score_last10"]),
                            toll_final=float(r["toll_final"]),
                            toll_last10=float(r["toll_last10"]))
                for r in reader]
