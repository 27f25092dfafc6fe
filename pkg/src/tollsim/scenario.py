"""Domain model: road network, population, zones, scenario IO and synthesis.

A scenario directory holds four JSON documents (``network.json``,
``population.json``, ``zones.json``, ``config.json``). All times are integer
seconds-of-day, distances are meters, money is decimal currency units.
Scenarios are immutable after loading; every loader validates referential
integrity before returning.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scoring import ScoringParams
from .tolling import TollControllerParams

MODES = ("car", "ride", "pt", "bicycle", "walk", "freight")
NETWORK_MODES = ("car", "ride", "freight")  # simulated on links
TELEPORTED_MODES = ("pt", "bicycle", "walk")

CELL_LENGTH_M = 7.5  # storage consumed by one queued vehicle
DAY_S = 86400

FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Missing file, schema violation or dangling reference in scenario data."""

    def __init__(self, message: str, *, file: str | None = None,
                 record: str | None = None, field: str | None = None):
        context = ", ".join(
            f"{k}={v}" for k, v in (("file", file), ("record", record), ("field", field)) if v
        )
        super().__init__(f"{message} [{context}]" if context else message)
        self.file = file
        self.record = record
        self.field = field


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float        # m
    free_speed: float    # m/s
    capacity: float      # veh/h, before sample scaling
    lanes: int = 1
    modes: frozenset = frozenset(NETWORK_MODES)

    @property
    def free_flow_time(self) -> float:
        return self.length / self.free_speed


class Network:
    """Directed link graph. Link indices follow sorted link-id order, which is
    also the deterministic tie-break order used by the router."""

    def __init__(self, nodes: list[Node], links: list[Link]):
        self.nodes = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ScenarioError("duplicate node id", file="network", field="id")
        self.links = {l.id: l for l in links}
        if len(self.links) != len(links):
            raise ScenarioError("duplicate link id", file="network", field="id")
        self.link_order = sorted(self.links)
        self.link_index = {lid: i for i, lid in enumerate(self.link_order)}
        self.node_order = sorted(self.nodes)
        self.node_index = {nid: i for i, nid in enumerate(self.node_order)}
        self._validate()

    def _validate(self) -> None:
        for link in self.links.values():
            for attr in ("length", "free_speed", "capacity"):
                value = getattr(link, attr)
                if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                    raise ScenarioError(f"link {attr} must be finite and > 0",
                                        file="network", record=link.id, field=attr)
            if link.lanes < 1:
                raise ScenarioError("link lanes must be >= 1",
                                    file="network", record=link.id, field="lanes")
            for endpoint in (link.from_node, link.to_node):
                if endpoint not in self.nodes:
                    raise ScenarioError(f"link references unknown node {endpoint!r}",
                                        file="network", record=link.id, field="from/to")

    def __eq__(self, other) -> bool:
        return isinstance(other, Network) and self.nodes == other.nodes and self.links == other.links

    def link_midpoint(self, link_id: str) -> tuple[float, float]:
        link = self.links[link_id]
        a, b = self.nodes[link.from_node], self.nodes[link.to_node]
        return (a.x + b.x) / 2.0, (a.y + b.y) / 2.0

    def beeline(self, from_link: str, to_link: str) -> float:
        ax, ay = self.link_midpoint(from_link)
        bx, by = self.link_midpoint(to_link)
        return math.hypot(bx - ax, by - ay)


# ---------------------------------------------------------------------------
# zones


@dataclass(frozen=True)
class Zone:
    id: int
    classification: str          # "inner" | "outer"
    links: frozenset


class Zones:
    def __init__(self, zones: list[Zone]):
        self.zones = sorted(zones, key=lambda z: z.id)
        self.by_id = {z.id: z for z in self.zones}
        self.link_zone: dict[str, int] = {}
        for zone in self.zones:
            if zone.classification not in ("inner", "outer"):
                raise ScenarioError("zone classification must be inner or outer",
                                    file="zones", record=str(zone.id), field="classification")
            for lid in zone.links:
                if lid in self.link_zone:
                    raise ScenarioError(f"link {lid!r} assigned to two zones",
                                        file="zones", record=str(zone.id), field="links")
                self.link_zone[lid] = zone.id

    def zone_of_link(self, link_id: str) -> int | None:
        return self.link_zone.get(link_id)

    def __eq__(self, other) -> bool:
        return isinstance(other, Zones) and self.zones == other.zones


# ---------------------------------------------------------------------------
# plans and agents


@dataclass
class Activity:
    type: str
    link: str
    typical_duration_s: int
    planned_end_s: int | None = None     # None for the last activity of the day
    earliest_end_s: int | None = None
    latest_start_s: int | None = None


@dataclass
class Leg:
    mode: str
    departure_s: int
    route: list = field(default_factory=list)   # link ids, origin..destination, network modes only


@dataclass
class Plan:
    elements: list = field(default_factory=list)   # Activity, Leg, Activity, ...
    score: float | None = None

    @property
    def activities(self) -> list[Activity]:
        return [e for e in self.elements if isinstance(e, Activity)]

    @property
    def legs(self) -> list[Leg]:
        return [e for e in self.elements if isinstance(e, Leg)]


@dataclass
class Agent:
    id: str
    income: float            # currency / year
    home_zone: int
    car_available: bool
    plans: list = field(default_factory=list)
    selected: int = 0

    @property
    def selected_plan(self) -> Plan:
        return self.plans[self.selected]


@dataclass
class BackgroundTrip:
    """Fixed daily vehicle trip (freight etc.) that never replans."""
    id: str
    departure_s: int
    route: list


class Population:
    def __init__(self, agents: list[Agent], background: list[BackgroundTrip] | None = None):
        self.agents = sorted(agents, key=lambda a: a.id)
        self.by_id = {a.id: a for a in self.agents}
        if len(self.by_id) != len(self.agents):
            raise ScenarioError("duplicate agent id", file="population", field="id")
        self.background = sorted(background or [], key=lambda t: t.id)

    def __len__(self) -> int:
        return len(self.agents)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Population) and self.agents == other.agents
                and self.background == other.background)

    def average_income(self) -> float:
        return float(np.mean([a.income for a in self.agents]))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TeleportMode:
    speed_ms: float
    beeline_factor: float


DEFAULT_TELEPORT = {
    "walk": TeleportMode(1.25, 1.3),
    "bicycle": TeleportMode(4.17, 1.3),
    "pt": TeleportMode(8.0, 1.3),
}


@dataclass
class StrategyConfig:
    """Replanning strategy weights and knobs for the co-evolutionary loop."""
    weights: dict = field(default_factory=lambda: {
        "select_exp_beta": 0.7, "reroute": 0.1, "time_mutate": 0.1, "mode_change": 0.1,
    })
    time_mutation_range_s: int = 1800
    selection_temperature: float = 0.1
    plan_memory_max: int = 5

    def validate(self) -> None:
        if any(w < 0 for w in self.weights.values()) or sum(self.weights.values()) <= 0:
            raise ScenarioError("strategy weights must be >= 0 with positive sum",
                                file="config", field="strategy.weights")
        if self.plan_memory_max < 1:
            raise ScenarioError("plan memory must hold at least one plan",
                                file="config", field="strategy.plan_memory_max")


@dataclass
class ScenarioConfig:
    sample_scale: float = 0.1
    capacity_multiplier: float = 1.0
    pt_constant_multiplier: float = 1.0
    iterations: int = 100
    innovation_fraction: float = 0.8
    rng_seed: int = 1
    toll_enabled: bool = False
    stuck_time_s: int = 3600
    money_cpi_factor: float = 1.0     # applied when annualizing monetary results
    scoring: ScoringParams = field(default_factory=ScoringParams)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    toll: TollControllerParams = field(default_factory=TollControllerParams)
    teleport: dict = field(default_factory=lambda: dict(DEFAULT_TELEPORT))

    def validate(self) -> None:
        if not (0.0 < self.sample_scale <= 1.0):
            raise ScenarioError("sample_scale must lie in (0, 1]", file="config", field="sample_scale")
        for name in ("capacity_multiplier", "pt_constant_multiplier"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"{name} must be > 0", file="config", field=name)
        if not (0.0 <= self.innovation_fraction <= 1.0):
            raise ScenarioError("innovation_fraction must lie in [0, 1]",
                                file="config", field="innovation_fraction")
        if self.iterations < 1:
            raise ScenarioError("iterations must be >= 1", file="config", field="iterations")
        self.strategy.validate()
        self.scoring.validate()
        self.toll.validate()


@dataclass
class Scenario:
    network: Network
    population: Population
    zones: Zones
    config: ScenarioConfig

    def __eq__(self, other) -> bool:
        return (isinstance(other, Scenario)
                and self.network == other.network
                and self.population == other.population
                and self.zones == other.zones
                and self.config == other.config)


# ---------------------------------------------------------------------------
# validation of cross references


def validate_scenario(scenario: Scenario) -> None:
    """Referential integrity and invariant checks; raises ScenarioError."""
    net, zones = scenario.network, scenario.zones
    scenario.config.validate()
    for agent in scenario.population.agents:
        if not (agent.income > 0 and math.isfinite(agent.income)):
            raise ScenarioError(
                "agent income must be > 0: the marginal utility of money divides "
                "by income, so a zero income is a divide-by-zero",
                file="population", record=agent.id, field="income")
        if agent.home_zone not in zones.by_id:
            raise ScenarioError(f"home zone {agent.home_zone} not defined",
                                file="population", record=agent.id, field="home_zone")
        if not agent.plans:
            raise ScenarioError("agent has no plans", file="population", record=agent.id,
                                field="plans")
        if not (0 <= agent.selected < len(agent.plans)):
            raise ScenarioError("selected plan index out of range", file="population",
                                record=agent.id, field="selected")
        for plan in agent.plans:
            _validate_plan(plan, agent.id, net)
        home_link = agent.plans[0].activities[0].link
        resolved = zones.zone_of_link(home_link)
        if resolved is None:
            raise ScenarioError(f"home link {home_link!r} belongs to no zone",
                                file="population", record=agent.id, field="home_zone")
        if resolved != agent.home_zone:
            raise ScenarioError(
                f"home link {home_link!r} lies in zone {resolved}, not {agent.home_zone}",
                file="population", record=agent.id, field="home_zone")
    for trip in scenario.population.background:
        _validate_route(trip.route, "freight", trip.id, net, file="population")


def _validate_plan(plan: Plan, agent_id: str, net: Network) -> None:
    elements = plan.elements
    if len(elements) % 2 == 0 or not elements:
        raise ScenarioError("plan must alternate activity/leg and start and end with an activity",
                            file="population", record=agent_id, field="plans")
    for i, element in enumerate(elements):
        expected = Activity if i % 2 == 0 else Leg
        if not isinstance(element, expected):
            raise ScenarioError(f"plan element {i} must be a {expected.__name__.lower()}",
                                file="population", record=agent_id, field="plans")
    acts, legs = plan.activities, plan.legs
    if acts[0].type != acts[-1].type:
        raise ScenarioError("first and last activity must share a type (closed day)",
                            file="population", record=agent_id, field="plans")
    for act in acts:
        if act.typical_duration_s <= 0:
            raise ScenarioError("typical_duration must be > 0", file="population",
                                record=agent_id, field="typical_duration_s")
        if act.link not in net.links:
            raise ScenarioError(f"activity on nonexistent link {act.link!r}",
                                file="population", record=agent_id, field="link")
    for i, act in enumerate(acts[:-1]):
        if act.planned_end_s is None:
            raise ScenarioError("every activity but the last needs a planned end time",
                                file="population", record=agent_id, field="planned_end_s")
        if legs[i].departure_s != act.planned_end_s:
            raise ScenarioError("leg departure must equal the preceding activity end",
                                file="population", record=agent_id, field="departure_s")
    for i, leg in enumerate(legs):
        if leg.mode not in MODES:
            raise ScenarioError(f"unknown mode {leg.mode!r}", file="population",
                                record=agent_id, field="mode")
        if leg.mode in NETWORK_MODES:
            _validate_route(leg.route, leg.mode, agent_id, net, file="population")
            if leg.route[0] != acts[i].link or leg.route[-1] != acts[i + 1].link:
                raise ScenarioError("route endpoints must match the adjacent activity links",
                                    file="population", record=agent_id, field="route")


def _validate_route(route: list, mode: str, record: str, net: Network, *, file: str) -> None:
    if not route:
        raise ScenarioError("network-mode leg needs a route", file=file, record=record, field="route")
    for lid in route:
        if lid not in net.links:
            raise ScenarioError(f"route references nonexistent link {lid!r}",
                                file=file, record=record, field="route")
        if mode not in net.links[lid].modes:
            raise ScenarioError(f"link {lid!r} does not allow mode {mode!r}",
                                file=file, record=record, field="route")
    for a, b in zip(route, route[1:]):
        if net.links[a].to_node != net.links[b].from_node:
            raise ScenarioError(f"route break between {a!r} and {b!r}",
                                file=file, record=record, field="route")


# ---------------------------------------------------------------------------
# JSON serialization

_OPT_ACT_FIELDS = ("planned_end_s", "earliest_end_s", "latest_start_s")


def _activity_to_json(act: Activity) -> dict:
    out = {"kind": "activity", "type": act.type, "link": act.link,
           "typical_duration_s": act.typical_duration_s}
    for name in _OPT_ACT_FIELDS:
        value = getattr(act, name)
        if value is not None:
            out[name] = value
    return out


def _leg_to_json(leg: Leg) -> dict:
    out = {"kind": "leg", "mode": leg.mode, "departure_s": leg.departure_s}
    if leg.route:
        out["route"] = list(leg.route)
    return out


def plan_to_json(plan: Plan) -> dict:
    return {
        "score": plan.score,
        "elements": [
            _activity_to_json(e) if isinstance(e, Activity) else _leg_to_json(e)
            for e in plan.elements
        ],
    }


def plan_from_json(obj: dict) -> Plan:
    elements = []
    for raw in obj["elements"]:
        if raw["kind"] == "activity":
            elements.append(Activity(
                type=raw["type"], link=raw["link"],
                typical_duration_s=int(raw["typical_duration_s"]),
                planned_end_s=raw.get("planned_end_s"),
                earliest_end_s=raw.get("earliest_end_s"),
                latest_start_s=raw.get("latest_start_s")))
        else:
            elements.append(Leg(mode=raw["mode"], departure_s=int(raw["departure_s"]),
                                route=list(raw.get("route", []))))
    return Plan(elements=elements, score=obj.get("score"))


def _config_to_json(cfg: ScenarioConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["teleport"] = {m: dataclasses.asdict(t) for m, t in cfg.teleport.items()}
    return out


def _config_from_json(obj: dict) -> ScenarioConfig:
    data = dict(obj)
    scoring = ScoringParams(**data.pop("scoring", {}))
    strategy = StrategyConfig(**data.pop("strategy", {}))
    toll = TollControllerParams(**data.pop("toll", {}))
    teleport = {m: TeleportMode(**t) for m, t in data.pop("teleport", {}).items()}
    if not teleport:
        teleport = dict(DEFAULT_TELEPORT)
    try:
        return ScenarioConfig(scoring=scoring, strategy=strategy, toll=toll,
                              teleport=teleport, **data)
    except TypeError as exc:
        raise ScenarioError(f"bad config field: {exc}", file="config") from exc


def _dump(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _read_json(path: Path, name: str) -> dict:
    file = path / name
    if not file.exists():
        raise ScenarioError("missing scenario file", file=name)
    try:
        return json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}", file=name) from exc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    net = scenario.network
    _dump(path / "network.json", {
        "format": "tollsim-network", "version": FORMAT_VERSION,
        "nodes": [{"id": n.id, "x": float(n.x), "y": float(n.y)}
                  for n in sorted(net.nodes.values(), key=lambda n: n.id)],
        "links": [{"id": l.id, "from": l.from_node, "to": l.to_node,
                   "length_m": float(l.length), "free_speed_ms": float(l.free_speed),
                   "capacity_vph": float(l.capacity), "lanes": int(l.lanes),
                   "modes": sorted(l.modes)}
                  for l in sorted(net.links.values(), key=lambda l: l.id)],
    })
    _dump(path / "population.json", {
        "format": "tollsim-population", "version": FORMAT_VERSION,
        "persons": [{"id": a.id, "income": float(a.income), "home_zone": int(a.home_zone),
                     "car_available": bool(a.car_available), "selected": int(a.selected),
                     "plans": [plan_to_json(p) for p in a.plans]}
                    for a in scenario.population.agents],
        "background_trips": [{"id": t.id, "departure_s": t.departure_s, "route": list(t.route)}
                             for t in scenario.population.background],
    })
    _dump(path / "zones.json", {
        "format": "tollsim-zones", "version": FORMAT_VERSION,
        "zones": [{"id": z.id, "classification": z.classification, "links": sorted(z.links)}
                  for z in scenario.zones.zones],
    })
    _dump(path / "config.json", {
        "format": "tollsim-config", "version": FORMAT_VERSION,
        **_config_to_json(scenario.config),
    })


def load_scenario(path: str | Path) -> Scenario:
    """Load and fully validate a scenario directory."""
    path = Path(path)
    if not path.is_dir():
        raise ScenarioError("scenario directory does not exist", file=str(path))
    raw_net = _read_json(path, "network.json")
    try:
        nodes = [Node(id=n["id"], x=float(n["x"]), y=float(n["y"])) for n in raw_net["nodes"]]
        links = [Link(id=l["id"], from_node=l["from"], to_node=l["to"],
                      length=float(l["length_m"]), free_speed=float(l["free_speed_ms"]),
                      capacity=float(l["capacity_vph"]), lanes=int(l.get("lanes", 1)),
                      modes=frozenset(l.get("modes", NETWORK_MODES)))
                 for l in raw_net["links"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"network schema violation: {exc}", file="network.json") from exc
    network = Network(nodes, links)

    raw_zones = _read_json(path, "zones.json")
    try:
        zones = Zones([Zone(id=int(z["id"]), classification=z["classification"],
                            links=frozenset(z["links"])) for z in raw_zones["zones"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"zones schema violation: {exc}", file="zones.json") from exc

    raw_pop = _read_json(path, "population.json")
    try:
        agents = [Agent(id=p["id"], income=float(p["income"]), home_zone=int(p["home_zone"]),
                        car_available=bool(p["car_available"]),
                        plans=[plan_from_json(pl) for pl in p["plans"]],
                        selected=int(p.get("selected", 0)))
                  for p in raw_pop["persons"]]
        background = [BackgroundTrip(id=t["id"], departure_s=int(t["departure_s"]),
                                     route=list(t["route"]))
                      for t in raw_pop.get("background_trips", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"population schema violation: {exc}", file="population.json") from exc
    population = Population(agents, background)

    raw_cfg = _read_json(path, "config.json")
    raw_cfg.pop("format", None)
    raw_cfg.pop("version", None)
    config = _config_from_json(raw_cfg)

    scenario = Scenario(network=network, population=population, zones=zones, config=config)
    validate_scenario(scenario)
    return scenario


# ---------------------------------------------------------------------------
# scenario modifiers


def apply_modifiers(scenario: Scenario, config: ScenarioConfig | None = None) -> Scenario:
    """Return a copy with link capacities and the PT mode constant scaled.

    Capacity is multiplied by ``capacity_multiplier`` on every link; the PT
    constant in the scoring parameters is multiplied by
    ``pt_constant_multiplier``. Everything else is unchanged.
    """
    config = config or scenario.config
    cap_mult = config.capacity_multiplier
    pt_mult = config.pt_constant_multiplier
    links = [dataclasses.replace(l, capacity=l.capacity * cap_mult)
             for l in scenario.network.links.values()]
    network = Network(list(scenario.network.nodes.values()), links)
    new_config = copy.deepcopy(config)
    new_config.scoring.mode_constant = dict(new_config.scoring.mode_constant)
    new_config.scoring.mode_constant["pt"] = new_config.scoring.mode_constant["pt"] * pt_mult
    return Scenario(network=network, population=copy.deepcopy(scenario.population),
                    zones=scenario.zones, config=new_config)




# ---------------------------------------------------------------------------
# synthetic scenarios


@dataclass
class SynthSpec:
    """Shape parameters for the synthetic desk-scale scenarios.

    ``kind`` selects the layout: ``corridor`` builds a linear commuter town
    with one congestible main road and a longer bypass; ``radial`` builds a
    ring-and-spoke city whose workplaces sit in the innermost ring.
    """
    kind: str = "corridor"
    n_agents: int = 1000
    income_median: float = 30000.0
    income_sigma: float = 0.6
    rings: int = 3            # radial only
    spokes: int = 8           # radial only
    n_freight: int = 120
    sample_scale: float = 0.1
    k_p: float = 0.005        # controller gain written into the config preset
    d_min_s: float = 1.0
    toll_interval_s: int = 900
    shop_share: float = 0.2   # agents with a three-activity chain
    car_ownership_base: float = 0.30
    car_ownership_slope: float = 0.65  # added ownership probability at the top income rank

    def validate(self) -> None:
        if self.n_agents < 1:
            raise ScenarioError("synthetic spec needs at least one agent", field="n_agents")
        if self.kind not in ("corridor", "radial"):
            raise ScenarioError(f"unknown synthetic kind {self.kind!r}", field="kind")
        if self.kind == "radial" and self.rings < 2:
            raise ScenarioError("radial layout needs at least two rings", field="rings")


def free_flow_route(net: Network, from_link: str, to_link: str) -> list:
    """Free-flow shortest path as a link sequence from one anchor link to another.

    The vehicle starts at the downstream node of ``from_link`` and must end by
    entering ``to_link``; both anchors are part of the returned route. Ties are
    broken toward the smallest link id, so results are deterministic.
    """
    import heapq

    if from_link == to_link:
        return [from_link]
    start = net.links[from_link].to_node
    goal = net.links[to_link].from_node
    out_links: dict[str, list] = {nid: [] for nid in net.nodes}
    for lid in net.link_order:
        out_links[net.links[lid].from_node].append(lid)
    best: dict[str, float] = {start: 0.0}
    parent: dict[str, str] = {}
    heap: list = [(0.0, start)]
    visited: set = set()
    while heap:
        cost, node = heapq.heappop(heap)
        if node in visited:
            continue
        visited.add(node)
        if node == goal:
            break
        for lid in out_links[node]:
            link = net.links[lid]
            nxt = link.to_node
            new = cost + link.free_flow_time + 1e-9
            if nxt not in visited and new < best.get(nxt, math.inf):
                best[nxt] = new
                parent[nxt] = lid
                heapq.heappush(heap, (new, nxt))
    if goal not in best:
        raise ScenarioError(f"no route from {from_link!r} to {to_link!r}", file="network")
    path = []
    node = goal
    while node != start:
        lid = parent[node]
        path.append(lid)
        node = net.links[lid].from_node
    path.reverse()
    return [from_link] + path + [to_link]


def _two_way(links: list, a: str, b: str, length: float, speed: float, cap: float,
             lanes: int = 1) -> None:
    links.append(Link(id=f"{a}-{b}", from_node=a, to_node=b, length=length,
                      free_speed=speed, capacity=cap, lanes=lanes))
    links.append(Link(id=f"{b}-{a}", from_node=b, to_node=a, length=length,
                      free_speed=speed, capacity=cap, lanes=lanes))


def _corridor_network() -> tuple:
    """Linear town: west home links -> junction a -> main road or bypass -> b -> work links."""
    nodes = [Node("h4", -5200, 0), Node("h3", -4400, 0), Node("h2", -3600, 0),
             Node("h1", -2800, 0), Node("h0", -2000, 0), Node("a", -1200, 0),
             Node("m1", -400, 0), Node("m2", 400, 0), Node("b", 1200, 0),
             Node("p1", -800, 1800), Node("p2", 600, 1800),
             Node("w0", 2000, 0), Node("w1", 2800, 0), Node("w2", 3600, 0)]
    links = []
    chain = ["h4", "h3", "h2", "h1", "h0", "a"]
    for x, y in zip(chain, chain[1:]):
        _two_way(links, x, y, 800, 13.89, 3600, lanes=2)
    # main road with a capacity bottleneck in the middle sections
    _two_way(links, "a", "m1", 800, 13.89, 2400)
    _two_way(links, "m1", "m2", 800, 13.89, 1200)
    _two_way(links, "m2", "b", 800, 13.89, 1200)
    # bypass: longer but practically uncongestible
    _two_way(links, "a", "p1", 2000, 16.67, 3600, lanes=2)
    _two_way(links, "p1", "p2", 1600, 16.67, 3600, lanes=2)
    _two_way(links, "p2", "b", 2000, 16.67, 3600, lanes=2)
    chain = ["b", "w0", "w1", "w2"]
    for x, y in zip(chain, chain[1:]):
        _two_way(links, x, y, 800, 13.89, 3600, lanes=2)
    net = Network(nodes, links)
    meta = {
        "home_links": ["h1-h0", "h2-h1", "h3-h2", "h4-h3", "h0-a"],
        "work_links": ["b-w0", "w0-w1", "w1-w2"],
        "shop_links": ["m1-m2", "w0-w1"],
        "center_links": sorted({"a-m1", "m1-m2", "m2-b", "m1-a", "m2-m1", "b-m2",
                                "a-p1", "p1-p2", "p2-b", "p1-a", "p2-p1", "b-p2"}),
    }
    return net, meta


def _corridor_zones(net: Network, meta: dict) -> Zones:
    center = set(meta["center_links"])
    for lid in net.links:
        a = net.links[lid]
        if a.from_node.startswith("w") or a.to_node.startswith("w") or "b" in (a.from_node, a.to_node):
            center.add(lid)
    rest = set(net.links) - center
    return Zones([Zone(0, "inner", frozenset(center)), Zone(1, "outer", frozenset(rest))])


def _radial_network(spec: SynthSpec) -> tuple:
    """Ring-and-spoke city. Ring 0 is the congestible center holding the jobs."""
    rings, spokes = spec.rings, spec.spokes
    nodes = [Node("c", 0.0, 0.0)]
    radius = [600.0 + 1400.0 * r for r in range(rings)]
    for r in range(rings):
        for s in range(spokes):
            angle = 2 * math.pi * s / spokes
            nodes.append(Node(f"r{r}s{s}", radius[r] * math.cos(angle),
                              radius[r] * math.sin(angle)))
    links = []
    ring_of_link = {}
    for s in range(spokes):
        # the center is the congestible bottleneck of the city
        _two_way(links, "c", f"r0s{s}", radius[0], 13.89, 450)
        ring_of_link[f"c-r0s{s}"] = 0
        ring_of_link[f"r0s{s}-c"] = 0
        for r in range(1, rings):
            a, b = f"r{r - 1}s{s}", f"r{r}s{s}"
            length = radius[r] - radius[r - 1]
            cap = 700 if r == 1 else 2400
            _two_way(links, a, b, length, 13.89, cap)
            ring_of_link[f"{a}-{b}"] = r
            ring_of_link[f"{b}-{a}"] = r
    for r in range(rings):
        for s in range(spokes):
            a, b = f"r{r}s{s}", f"r{r}s{(s + 1) % spokes}"
            length = 2 * radius[r] * math.sin(math.pi / spokes)
            _two_way(links, a, b, length, 13.89, 1200 if r == 0 else 3600, lanes=2)
            ring_of_link[f"{a}-{b}"] = r
            ring_of_link[f"{b}-{a}"] = r
    net = Network(nodes, links)
    return net, {"ring_of_link": ring_of_link, "radius": radius}


def _radial_zones(net: Network, meta: dict, rings: int) -> Zones:
    by_ring = {r: set() for r in range(rings)}
    for lid in net.links:
        by_ring[meta["ring_of_link"][lid]].add(lid)
    return Zones([Zone(r, "inner" if r == 0 else "outer", frozenset(by_ring[r]))
                  for r in range(rings)])


def _incomes(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    draw = rng.normal(0.0, 1.0, spec.n_agents)
    return np.round(spec.income_median * np.exp(spec.income_sigma * draw), 2)


def _commute_estimate_s(net: Network, from_link: str, to_link: str) -> int:
    """Commute budget anchoring the work arrival commitment: generous enough
    for the slowest reasonable mode, so switching to transit stays feasible
    while car commuters keep slack for shifting their departure."""
    route = free_flow_route(net, from_link, to_link)
    car_s = sum(net.links[lid].free_flow_time for lid in route[1:])
    pt = DEFAULT_TELEPORT["pt"]
    pt_s = net.beeline(from_link, to_link) * pt.beeline_factor / pt.speed_ms
    return int(math.ceil(max(car_s, pt_s)))


def _make_agent(net: Network, agent_id: str, income: float, zone: int, car: bool,
                mode: str, chain: list, t_home_end: int, work_hours: float) -> Agent:
    """Build a closed-day plan over the activity chain [(type, link), ...].

    Workers commit to an arrival time matching their usual commute and to not
    leaving early, which keeps schedules peaked: departure shifts only pay
    off when they buy real travel-time or toll savings.
    """
    def leg(dep: int, a_link: str, b_link: str) -> Leg:
        if mode in NETWORK_MODES:
            return Leg(mode=mode, departure_s=dep, route=free_flow_route(net, a_link, b_link))
        return Leg(mode=mode, departure_s=dep, route=[])

    typical = {"home": 12 * 3600, "work": 8 * 3600, "shop": 2400}
    ends = [t_home_end, t_home_end + int(work_hours * 3600)]
    if len(chain) == 4:
        ends.append(ends[1] + 3000)
    elements = []
    for i, (act_type, link) in enumerate(chain):
        last = i == len(chain) - 1
        act = Activity(act_type, link, typical_duration_s=typical[act_type],
                       planned_end_s=None if last else ends[i])
        if i == 0:
            act.earliest_end_s = t_home_end - 120   # morning routine pins the departure
        if act_type == "work":
            commute = _commute_estimate_s(net, chain[0][1], link)
            act.latest_start_s = t_home_end + commute + 120
            if not last:
                act.earliest_end_s = ends[i] - 120
        elements.append(act)
        if not last:
            elements.append(leg(ends[i], link, chain[i + 1][1]))
    return Agent(id=agent_id, income=income, home_zone=zone, car_available=car,
                 plans=[Plan(elements=elements)])


def _draw_day(rng: np.random.Generator) -> tuple:
    t_home_end = int(np.clip(int(rng.normal(7.5 * 3600, 2400)), 5 * 3600, 10 * 3600))
    work_hours = float(np.clip(rng.normal(8.0, 0.5), 6.5, 9.5))
    return t_home_end, work_hours


def _generate_corridor(spec: SynthSpec, rng: np.random.Generator) -> Scenario:
    net, meta = _corridor_network()
    zones = _corridor_zones(net, meta)
    incomes = _incomes(rng, spec)
    ranks = np.argsort(np.argsort(incomes, kind="stable"), kind="stable")
    pct = (ranks + 0.5) / spec.n_agents
    agents = []
    for i in range(spec.n_agents):
        car = bool(rng.random() < spec.car_ownership_base + spec.car_ownership_slope * pct[i])
        home = meta["home_links"][int(rng.integers(len(meta["home_links"])))]
        work = meta["work_links"][int(rng.integers(len(meta["work_links"])))]
        chain = [("home", home), ("work", work)]
        if rng.random() < spec.shop_share:
            chain.append(("shop", meta["shop_links"][int(rng.integers(len(meta["shop_links"])))]))
        chain.append(("home", home))
        t_home_end, work_hours = _draw_day(rng)
        agents.append(_make_agent(net, f"p{i:05d}", float(incomes[i]),
                                  zones.zone_of_link(home), car,
                                  "car" if car else "pt", chain, t_home_end, work_hours))
    background = []
    for i in range(spec.n_freight):
        dep = int(rng.integers(5 * 3600, 20 * 3600))
        route = (free_flow_route(net, "h0-a", "b-w0") if i % 2 == 0
                 else free_flow_route(net, "w0-b", "a-h0"))
        background.append(BackgroundTrip(id=f"f{i:04d}", departure_s=dep, route=route))
    scenario = Scenario(net, Population(agents, background), zones, _base_config(spec))
    validate_scenario(scenario)
    return scenario


def _generate_radial(spec: SynthSpec, rng: np.random.Generator) -> Scenario:
    net, meta = _radial_network(spec)
    zones = _radial_zones(net, meta, spec.rings)
    incomes = _incomes(rng, spec)
    ranks = np.argsort(np.argsort(incomes, kind="stable"), kind="stable")
    pct = (ranks + 0.5) / spec.n_agents
    agents = []
    for i in range(spec.n_agents):
        car = bool(rng.random() < spec.car_ownership_base + spec.car_ownership_slope * pct[i])
        s = int(rng.integers(spec.spokes))
        home_ring = int(rng.choice(np.arange(spec.rings),
                                   p=_ring_weights(spec.rings, float(pct[i]))))
        if home_ring == 0:
            home = f"r0s{s}-r0s{(s + 1) % spec.spokes}"
        else:
            home = f"r{home_ring}s{s}-r{home_ring - 1}s{s}"
        work = f"c-r0s{int(rng.integers(spec.spokes))}"
        chain = [("home", home), ("work", work), ("home", home)]
        t_home_end, work_hours = _draw_day(rng)
        agents.append(_make_agent(net, f"p{i:05d}", float(incomes[i]),
                                  zones.zone_of_link(home), car,
                                  "car" if car else "pt", chain, t_home_end, work_hours))
    background = []
    for i in range(spec.n_freight):
        s = i % spec.spokes
        dep = int(rng.integers(5 * 3600, 20 * 3600))
        route = free_flow_route(net, f"r{spec.rings - 1}s{s}-r{spec.rings - 2}s{s}",
                                f"c-r0s{(s + 3) % spec.spokes}")
        background.append(BackgroundTrip(id=f"f{i:04d}", departure_s=dep, route=route))
    scenario = Scenario(net, Population(agents, background), zones, _base_config(spec))
    validate_scenario(scenario)
    return scenario


def _ring_weights(rings: int, income_pct: float = 0.5) -> np.ndarray:
    """Home-ring distribution: population grows with the ring circumference,
    the congestible center stays small, and higher earners tend toward the
    suburban outer rings (longer, more tolled commutes)."""
    weights = [0.15]
    for r in range(1, rings):
        tilt = 0.0
        if rings > 2:
            tilt = 2.0 * (r - 1) / (rings - 2) - 1.0   # -1 innermost .. +1 outermost
        weights.append((1.0 + 0.6 * r) * max(0.05, 1.0 + 1.2 * (income_pct - 0.5) * tilt))
    weights = np.array(weights)
    return weights / weights.sum()


def _base_config(spec: SynthSpec) -> ScenarioConfig:
    return ScenarioConfig(
        sample_scale=spec.sample_scale,
        toll=TollControllerParams(interval_s=spec.toll_interval_s, k_p=spec.k_p,
                                  d_min_s=spec.d_min_s,
                                  exempt_modes=["freight", "ride"]),
    )


def generate_synthetic(spec: SynthSpec, seed: int) -> Scenario:
    """Deterministic synthetic scenario: same spec and seed give identical files."""
    spec.validate()
    rng = np.random.default_rng(seed)
    if spec.kind == "corridor":
        scenario = _generate_corridor(spec, rng)
    else:
        scenario = _generate_radial(spec, rng)
    scenario.config.rng_seed = seed
    return scenario
