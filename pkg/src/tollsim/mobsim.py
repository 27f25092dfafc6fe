"""Deterministic queue-based network loading.

Executes every agent's selected plan for one day on the link network and
produces the event log, per-leg outcomes, per-link travel times and delays.
Car-class vehicles (car, ride, freight) move through FIFO link queues with
token-bucket outflow capacity and storage-limited spillback; other modes are
teleported along the beeline.

The heavy lifting happens in :func:`tollsim.kernels.simulate_day`; this
module translates between the domain model and the kernel's array world.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .scenario import (CELL_LENGTH_M, DAY_S, NETWORK_MODES, Network, Scenario,
                       TELEPORTED_MODES)
from .tolling import DelayTable, TollSchedule, n_intervals

T_MAX = 2 * DAY_S   # hard horizon; traffic still moving past it is an error

EVENT_KINDS = ("act_start", "act_end", "leg_depart", "link_enter", "link_leave",
               "leg_arrive", "money")


class MobsimError(RuntimeError):
    pass


def teleport_leg(mode: str, beeline_distance_m: float, teleport_params: dict) -> tuple:
    """Travel time (s) and recorded distance (m) of a teleported leg."""
    if mode not in teleport_params:
        raise MobsimError(f"unknown teleported mode {mode!r}")
    if beeline_distance_m < 0:
        raise MobsimError("beeline distance must be >= 0")
    spec = teleport_params[mode]
    distance = beeline_distance_m * spec.beeline_factor
    return distance / spec.speed_ms, distance


@dataclass
class NetworkArrays:
    """Index-space view of a network, shared by the simulator and the router."""
    link_ids: list
    node_ids: list
    link_index: dict
    from_node: np.ndarray
    to_node: np.ndarray
    length: np.ndarray
    t_free_f: np.ndarray         # exact free-flow time, seconds
    t_free_s: np.ndarray         # quantized traversal time used by the queue model
    cap_per_s: np.ndarray
    bucket_max: np.ndarray
    storage_cap: np.ndarray
    csr_start: np.ndarray
    csr_link: np.ndarray

    @classmethod
    def build(cls, network: Network, sample_scale: float) -> "NetworkArrays":
        link_ids = network.link_order
        node_ids = network.node_order
        n_links = len(link_ids)
        from_node = np.empty(n_links, dtype=np.int64)
        to_node = np.empty(n_links, dtype=np.int64)
        length = np.empty(n_links)
        t_free_f = np.empty(n_links)
        cap_per_s = np.empty(n_links)
        storage_cap = np.empty(n_links, dtype=np.int64)
        for i, lid in enumerate(link_ids):
            link = network.links[lid]
            from_node[i] = network.node_index[link.from_node]
            to_node[i] = network.node_index[link.to_node]
            length[i] = link.length
            t_free_f[i] = link.free_flow_time
            cap_per_s[i] = link.capacity * sample_scale / 3600.0
            storage_cap[i] = max(
                1, int(math.floor(link.length * link.lanes / CELL_LENGTH_M * sample_scale)))
        t_free_s = np.maximum(1, np.ceil(t_free_f).astype(np.int64))
        bucket_max = np.maximum(1.0, cap_per_s)
        order = np.argsort(from_node, kind="stable")  # links already id-sorted
        csr_start = np.zeros(len(node_ids) + 1, dtype=np.int64)
        np.add.at(csr_start, from_node + 1, 1)
        csr_start = np.cumsum(csr_start)
        csr_link = order.astype(np.int64)
        return cls(link_ids=list(link_ids), node_ids=list(node_ids),
                   link_index=dict(network.link_index), from_node=from_node,
                   to_node=to_node, length=length, t_free_f=t_free_f, t_free_s=t_free_s,
                   cap_per_s=cap_per_s, bucket_max=bucket_max, storage_cap=storage_cap,
                   csr_start=csr_start, csr_link=csr_link)

    @property
    def n_links(self) -> int:
        return len(self.link_ids)


@dataclass
class LegTask:
    """One flattened vehicle/teleport task handed to the kernel."""
    owner: str               # agent id or background trip id
    owner_kind: str          # "person" | "background"
    plan_leg_index: int      # index into the owner's plan legs, -1 for background
    mode: str
    route_idx: np.ndarray    # int link indices (network legs)
    distance_m: float
    tele_tt_s: int
    from_act_link: str = ""
    to_act_link: str = ""


@dataclass
class MobsimResult:
    arrays: NetworkArrays
    tasks: list
    leg_dep: np.ndarray
    leg_arr: np.ndarray
    leg_toll: np.ndarray
    trav_leg: np.ndarray
    trav_link: np.ndarray
    trav_enter: np.ndarray
    trav_leave: np.ndarray
    money_leg: np.ndarray
    money_link: np.ndarray
    money_time: np.ndarray
    money_amount: np.ndarray
    stuck_count: int
    interval_s: int

    def total_revenue(self) -> float:
        return float(-self.money_amount.sum()) if len(self.money_amount) else 0.0

    def delay_table(self) -> DelayTable:
        """Per-vehicle delays aggregated per link and exit interval; every
        car-class vehicle on the network counts."""
        delays = self.traversal_delays()
        return DelayTable.from_observations(self.trav_link, self.trav_leave, delays,
                                            self.arrays.n_links, self.interval_s)

    def traversal_delays(self) -> np.ndarray:
        """Nonnegative queueing delay per traversal, measured against the
        quantized free-flow time so an empty network reads exactly zero."""
        actual = self.trav_leave - self.trav_enter
        return np.maximum(0.0, actual - self.arrays.t_free_s[self.trav_link]).astype(float)

    def travel_time_table(self) -> np.ndarray:
        """Mean traversal time per link per interval, binned by entry time;
        cells without observations fall back to free-flow time."""
        bins = n_intervals(self.interval_s)
        table = np.tile(self.arrays.t_free_f[:, None], (1, bins))
        if len(self.trav_link):
            b = np.minimum(self.trav_enter // self.interval_s, bins - 1)
            tt_sum = np.zeros((self.arrays.n_links, bins))
            count = np.zeros((self.arrays.n_links, bins))
            np.add.at(tt_sum, (self.trav_link, b), (self.trav_leave - self.trav_enter).astype(float))
            np.add.at(count, (self.trav_link, b), 1.0)
            seen = count > 0
            table[seen] = tt_sum[seen] / count[seen]
        return table


def build_leg_tasks(scenario: Scenario, selected_plans: dict) -> tuple:
    """Flatten selected plans plus background trips into kernel arrays.

    Returns (tasks, kernel argument dict). Chains preserve plan order so a
    delayed arrival pushes the next departure.
    """
    network = scenario.network
    teleport = scenario.config.teleport
    exempt = set(scenario.config.toll.exempt_modes)
    tasks: list[LegTask] = []
    chain_lengths: list[int] = []

    for agent_id in sorted(selected_plans):
        plan = selected_plans[agent_id]
        legs = plan.legs
        acts = plan.activities
        if not legs:
            continue
        for i, leg in enumerate(legs):
            anchors = dict(from_act_link=acts[i].link, to_act_link=acts[i + 1].link)
            if leg.mode in NETWORK_MODES:
                route_idx = np.array([network.link_index[lid] for lid in leg.route],
                                     dtype=np.int64)
                for lid in leg.route:
                    if leg.mode not in network.links[lid].modes:
                        raise MobsimError(
                            f"leg of {agent_id} uses link {lid!r} that bans {leg.mode!r}")
                distance = float(sum(network.links[lid].length for lid in leg.route[1:]))
                tasks.append(LegTask(owner=agent_id, owner_kind="person", plan_leg_index=i,
                                     mode=leg.mode, route_idx=route_idx,
                                     distance_m=distance, tele_tt_s=0, **anchors))
            elif leg.mode in TELEPORTED_MODES:
                beeline = network.beeline(acts[i].link, acts[i + 1].link)
                tt, distance = teleport_leg(leg.mode, beeline, teleport)
                tasks.append(LegTask(owner=agent_id, owner_kind="person", plan_leg_index=i,
                                     mode=leg.mode, route_idx=np.empty(0, dtype=np.int64),
                                     distance_m=distance, tele_tt_s=int(math.ceil(tt)),
                                     **anchors))
            else:
                raise MobsimError(f"unroutable leg mode {leg.mode!r} for {agent_id}")
        chain_lengths.append(len(legs))

    for trip in scenario.population.background:
        route_idx = np.array([network.link_index[lid] for lid in trip.route], dtype=np.int64)
        tasks.append(LegTask(owner=trip.id, owner_kind="background", plan_leg_index=-1,
                             mode="freight", route_idx=route_idx,
                             distance_m=float(sum(network.links[lid].length
                                                  for lid in trip.route[1:])),
                             tele_tt_s=0))
        chain_lengths.append(1)

    n = len(tasks)
    leg_kind = np.empty(n, dtype=np.int64)
    planned_dep = np.empty(n, dtype=np.int64)
    tele_tt = np.zeros(n, dtype=np.int64)
    tollable = np.zeros(n, dtype=np.bool_)
    next_leg = np.full(n, -1, dtype=np.int64)
    route_off = np.zeros(n + 1, dtype=np.int64)
    route_parts = []
    chain_heads = []

    j = 0
    for length_of_chain in chain_lengths:
        chain_heads.append(j)
        for k in range(length_of_chain):
            if k > 0:
                next_leg[j - 1] = j
            j += 1
    assert j == n

    cursor = 0
    pos = 0
    for agent_id in sorted(selected_plans):
        plan = selected_plans[agent_id]
        for leg in plan.legs:
            planned_dep[pos] = leg.departure_s
            pos += 1
    for trip in scenario.population.background:
        planned_dep[pos] = trip.departure_s
        pos += 1

    for i, task in enumerate(tasks):
        leg_kind[i] = kernels.LEG_TELEPORT if task.mode in TELEPORTED_MODES else kernels.LEG_NETWORK
        tele_tt[i] = task.tele_tt_s
        tollable[i] = task.mode in NETWORK_MODES and task.mode not in exempt
        route_parts.append(task.route_idx)
        cursor += len(task.route_idx)
        route_off[i + 1] = cursor
    route_links = (np.concatenate(route_parts) if route_parts
                   else np.empty(0, dtype=np.int64)).astype(np.int64)

    kernel_args = dict(leg_kind=leg_kind, planned_dep=planned_dep, tele_tt=tele_tt,
                       route_off=route_off, route_links=route_links, tollable=tollable,
                       next_leg=next_leg,
                       chain_heads=np.array(chain_heads, dtype=np.int64))
    return tasks, kernel_args


def run_mobsim(scenario: Scenario, selected_plans: dict,
               toll_schedule: TollSchedule | None = None,
               arrays: NetworkArrays | None = None) -> MobsimResult:
    """Execute one simulated day. Deterministic: identical inputs give
    identical outputs, including the event log bytes."""
    config = scenario.config
    arrays = arrays or NetworkArrays.build(scenario.network, config.sample_scale)
    interval_s = config.toll.interval_s
    if toll_schedule is None:
        toll_schedule = TollSchedule.zero(arrays.n_links, interval_s)
    tasks, kernel_args = build_leg_tasks(scenario, selected_plans)

    out = kernels.simulate_day(
        arrays.t_free_s, arrays.cap_per_s, arrays.bucket_max, arrays.storage_cap,
        toll_schedule.m, np.int64(toll_schedule.interval_s),
        kernel_args["leg_kind"], kernel_args["planned_dep"], kernel_args["tele_tt"],
        kernel_args["route_off"], kernel_args["route_links"], kernel_args["tollable"],
        kernel_args["next_leg"], kernel_args["chain_heads"],
        np.int64(config.stuck_time_s), np.int64(T_MAX))
    (leg_dep, leg_arr, leg_toll, trav_leg, trav_link, trav_enter, trav_leave,
     money_leg, money_link, money_time, money_amount, stuck_count, unfinished) = out
    if unfinished:
        raise MobsimError(f"{unfinished} vehicles never arrived within the horizon")
    return MobsimResult(arrays=arrays, tasks=tasks, leg_dep=leg_dep, leg_arr=leg_arr,
                        leg_toll=leg_toll, trav_leg=trav_leg, trav_link=trav_link,
                        trav_enter=trav_enter, trav_leave=trav_leave, money_leg=money_leg,
                        money_link=money_link, money_time=money_time,
                        money_amount=money_amount, stuck_count=int(stuck_count),
                        interval_s=interval_s)


# ---------------------------------------------------------------------------
# event log


@dataclass
class EventLog:
    """Flat, time-sorted event stream; the contract between the simulation
    and every analysis."""
    time: np.ndarray      # i8
    kind: np.ndarray      # i2 index into EVENT_KINDS
    agent: list           # str per event
    link: list            # str per event, "" where not applicable
    amount: np.ndarray    # f8, nan where not applicable

    def __len__(self) -> int:
        return len(self.time)

    def kinds(self) -> np.ndarray:
        return np.array([EVENT_KINDS[k] for k in self.kind])


def build_event_log(result: MobsimResult) -> EventLog:
    """Assemble the canonical event stream from kernel outputs.

    Within one second, events follow activity-end, departure, traffic
    (leave/enter/money in kernel emission order), arrival, activity-start
    order; ties beyond that keep a stable construction order.
    """
    arrays = result.arrays
    rows = []   # (time, phase, seq, kind_idx, agent, link, amount)
    seq = 0

    def add(time, phase, kind, agent, link="", amount=math.nan):
        nonlocal seq
        rows.append((int(time), phase, seq, EVENT_KINDS.index(kind), agent, link, amount))
        seq += 1

    for i, task in enumerate(result.tasks):
        dep, arr = int(result.leg_dep[i]), int(result.leg_arr[i])
        if task.owner_kind == "person":
            add(dep, 0, "act_end", task.owner, task.from_act_link)
        add(dep, 1, "leg_depart", task.owner,
            arrays.link_ids[task.route_idx[0]] if len(task.route_idx) else "")
        if len(task.route_idx) > 1:
            dest = int(task.route_idx[-1])
            add(arr - int(arrays.t_free_s[dest]), 3, "link_enter", task.owner,
                arrays.link_ids[dest])
        add(arr, 4, "leg_arrive", task.owner,
            arrays.link_ids[task.route_idx[-1]] if len(task.route_idx) else "")
        if task.owner_kind == "person":
            add(arr, 5, "act_start", task.owner, task.to_act_link)

    for n in range(len(result.trav_link)):
        task = result.tasks[int(result.trav_leg[n])]
        lid = arrays.link_ids[int(result.trav_link[n])]
        add(result.trav_enter[n], 2, "link_enter", task.owner, lid)
        add(result.trav_leave[n], 2, "link_leave", task.owner, lid)
    for n in range(len(result.money_link)):
        task = result.tasks[int(result.money_leg[n])]
        add(result.money_time[n], 2, "money", task.owner,
            arrays.link_ids[int(result.money_link[n])], float(result.money_amount[n]))

    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return EventLog(
        time=np.array([r[0] for r in rows], dtype=np.int64),
        kind=np.array([r[3] for r in rows], dtype=np.int16),
        agent=[r[4] for r in rows],
        link=[r[5] for r in rows],
        amount=np.array([r[6] for r in rows]),
    )


EVENT_FILE_HEADER = "time,kind,agent,link,amount"


def write_event_log(log: EventLog, path: str | Path) -> None:
    lines = [EVENT_FILE_HEADER]
    for i in range(len(log)):
        amount = "" if math.isnan(log.amount[i]) else repr(float(log.amount[i]))
        lines.append(f"{log.time[i]},{EVENT_KINDS[log.kind[i]]},{log.agent[i]},"
                     f"{log.link[i]},{amount}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_event_log(path: str | Path) -> EventLog:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != EVENT_FILE_HEADER:
        raise MobsimError(f"not an event log: {path}")
    time, kind, agent, link, amount = [], [], [], [], []
    for line in lines[1:]:
        t, k, a, l, m = line.split(",")
        time.append(int(t))
        kind.append(EVENT_KINDS.index(k))
        agent.append(a)
        link.append(l)
        amount.append(float(m) if m else math.nan)
    return EventLog(time=np.array(time, dtype=np.int64), kind=np.array(kind, dtype=np.int16),
                    agent=agent, link=link, amount=np.array(amount))


def measure_delay_events(log: EventLog, network: Network, interval_s: int) -> dict:
    """Per-vehicle delays keyed by (link id, interval index), from the event
    log alone. Delay = (leave - enter) - quantized free-flow time, floored at
    zero; each vehicle counts toward the interval containing its exit."""
    enter_idx = EVENT_KINDS.index("link_enter")
    leave_idx = EVENT_KINDS.index("link_leave")
    t_free = {lid: max(1, math.ceil(network.links[lid].free_flow_time))
              for lid in network.links}
    open_enter: dict = {}
    cells: dict = {}
    for i in range(len(log)):
        k = log.kind[i]
        if k == enter_idx:
            open_enter[(log.agent[i], log.link[i])] = int(log.time[i])
        elif k == leave_idx:
            key = (log.agent[i], log.link[i])
            enter_t = open_enter.pop(key)
            leave_t = int(log.time[i])
            delay = max(0, (leave_t - enter_t) - t_free[log.link[i]])
            cell = (log.link[i], leave_t // interval_s)
            cells.setdefault(cell, []).append(float(delay))
    return cells
