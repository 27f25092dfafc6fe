import numpy as np
import pytest

from tollsim.scenario import (Activity, Agent, Leg, Link, Network, Node, Plan,
                              Population, Scenario, ScenarioConfig, Zone, Zones)


def make_network(link_specs, coords=None):
    """Build a network from (id, from, to, length, speed, cap_vph[, lanes]) tuples."""
    node_ids = sorted({s[1] for s in link_specs} | {s[2] for s in link_specs})
    coords = coords or {}
    nodes = [Node(nid, *coords.get(nid, (float(i) * 100.0, 0.0)))
             for i, nid in enumerate(node_ids)]
    links = [Link(id=s[0], from_node=s[1], to_node=s[2], length=float(s[3]),
                  free_speed=float(s[4]), capacity=float(s[5]),
                  lanes=s[6] if len(s) > 6 else 1)
             for s in link_specs]
    return Network(nodes, links)


def simple_agent(agent_id, route, depart_s, income=30000.0, mode="car", zone=0,
                 back_route=None, return_depart_s=None):
    """Closed-day plan with one leg (or two when back_route is given)."""
    origin, destination = route[0], route[-1]
    as_route = list(route) if mode in ("car", "ride", "freight") else []
    elements = [
        Activity("home", origin, typical_duration_s=12 * 3600, planned_end_s=depart_s),
        Leg(mode=mode, departure_s=depart_s, route=as_route),
    ]
    if back_route is None:
        elements.append(Activity("home", destination, typical_duration_s=12 * 3600))
    else:
        t2 = return_depart_s if return_depart_s is not None else depart_s + 8 * 3600
        as_back = list(back_route) if mode in ("car", "ride", "freight") else []
        elements += [
            Activity("work", destination, typical_duration_s=8 * 3600, planned_end_s=t2),
            Leg(mode=mode, departure_s=t2, route=as_back),
            Activity("home", back_route[-1] if back_route else origin,
                     typical_duration_s=12 * 3600),
        ]
    return Agent(id=agent_id, income=income, home_zone=zone, car_available=(mode == "car"),
                 plans=[Plan(elements=elements)])


def make_scenario(network, agents, sample_scale=1.0, background=None, zones=None,
                  **config_kwargs):
    if zones is None:
        zones = Zones([Zone(0, "inner", frozenset(network.links))])
    config = ScenarioConfig(sample_scale=sample_scale, **config_kwargs)
    return Scenario(network=network, population=Population(agents, background or []),
                    zones=zones, config=config)


@pytest.fixture
def line_net():
    # generous feeder S, measured link L (500 m at 10 m/s), sink D
    return make_network([
        ("S", "a", "b", 100, 10, 7200),
        ("L", "b", "c", 500, 10, 3600),
        ("D", "c", "d", 100, 10, 7200),
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
