#!/usr/bin/env python3
"""Benchmark: compiled kernels vs the pure-Python/numpy fallback.

Runs the queue day-simulation and the batched router on a synthetic corridor
with both execution paths and reports timings plus the speedup. The outputs
are also compared element for element, which doubles as an equivalence
check.

Usage:
    python benchmarks/bench_kernels.py [--agents N] [--days N] [--seed N]

Set TOLLSIM_DISABLE_JIT=1 to see the package-wide fallback behaviour.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tollsim import kernels
from tollsim._jit import JIT_ENABLED, py_func
from tollsim.mobsim import NetworkArrays, build_leg_tasks
from tollsim.scenario import SynthSpec, generate_synthetic
from tollsim.tolling import TollSchedule


def build(agents: int, seed: int):
    scenario = generate_synthetic(
        SynthSpec(kind="corridor", n_agents=agents, n_freight=agents // 8), seed=seed)
    arrays = NetworkArrays.build(scenario.network, scenario.config.sample_scale)
    selected = {a.id: a.selected_plan for a in scenario.population.agents}
    _, kw = build_leg_tasks(scenario, selected)
    schedule = TollSchedule.zero(arrays.n_links, 900)
    schedule.m[:, 28:44] = 0.25
    day_args = (arrays.t_free_s, arrays.cap_per_s, arrays.bucket_max, arrays.storage_cap,
                schedule.m, np.int64(900),
                kw["leg_kind"], kw["planned_dep"], kw["tele_tt"], kw["route_off"],
                kw["route_links"], kw["tollable"], kw["next_leg"], kw["chain_heads"],
                np.int64(3600), np.int64(2 * 86400))

    rng = np.random.default_rng(seed)
    bins = 96
    tt = np.tile(arrays.t_free_f[:, None], (1, bins)) * rng.uniform(1.0, 2.5,
                                                                    (arrays.n_links, bins))
    n_nodes = len(arrays.node_ids)
    nq = max(200, agents // 2)
    route_args = (arrays.csr_start, arrays.csr_link, arrays.from_node, arrays.to_node,
                  arrays.length, tt, schedule.m, np.int64(900),
                  rng.integers(0, n_nodes, nq).astype(np.int64),
                  rng.integers(0, n_nodes, nq).astype(np.int64),
                  rng.uniform(0, 86000, nq), rng.uniform(0.3, 3.0, nq),
                  6.0 / 3600.0, 0.0002, 1e-6)
    return day_args, route_args


def time_fn(fn, args, repeats: int) -> tuple:
    out = fn(*args)          # warmup / compile
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def equal(a, b) -> bool:
    return all(np.array_equal(x, y) if isinstance(x, np.ndarray) else x == y
               for x, y in zip(a, b))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--agents", type=int, default=1000)
    parser.add_argument("--days", type=int, default=5, help="timing repeats")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    if not JIT_ENABLED:
        print("note: JIT disabled by environment; both columns run the fallback")
    day_args, route_args = build(args.agents, args.seed)

    print(f"{'kernel':<16}{'jit (s)':>12}{'python (s)':>14}{'speedup':>10}   match")
    for name, fn, fn_args in (("simulate_day", kernels.simulate_day, day_args),
                              ("route_batch", kernels.route_batch, route_args)):
        t_jit, out_jit = time_fn(fn, fn_args, args.days)
        t_py, out_py = time_fn(py_func(fn), fn_args, max(1, args.days // 2))
        ok = equal(out_jit, out_py)
        print(f"{name:<16}{t_jit:>12.4f}{t_py:>14.4f}{t_py / t_jit:>10.1f}x   {ok}")
        if not ok:
            print("MISMATCH between execution paths")
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
