"""Hot inner loops: the queue-based day simulation and the batched router.

Both functions are nopython-compatible and compiled with numba unless
``TOLLSIM_DISABLE_JIT`` is set, in which case the identical Python code runs
over the same numpy arrays (see :mod:`tollsim._jit`). No fastmath is used, so
the two paths agree bit for bit.

Array conventions: times are int64 seconds, link/node/leg indices int64,
money float64. A "leg" here is one vehicle traversal task; chains of legs
belonging to one agent are linked through ``next_leg``.
"""
import numpy as np

from ._jit import njit

LEG_NETWORK = 0
LEG_TELEPORT = 1


@njit(cache=True)
def simulate_day(
    # network
    t_free_s,        # i8[n_links] quantized free-flow traversal time, >= 1
    cap_per_s,       # f8[n_links] outflow tokens per second (sample-scaled)
    bucket_max,      # f8[n_links] token bucket ceiling, >= 1.0
    storage_cap,     # i8[n_links] max vehicles traversing the link
    # tolls
    toll,            # f8[n_links, n_bins] charge at link exit
    toll_interval,   # i8
    # legs
    leg_kind,        # i8[n_legs] 0 network / 1 teleport
    planned_dep,     # i8[n_legs]
    tele_tt,         # i8[n_legs] teleport travel time (0 for network legs)
    route_off,       # i8[n_legs+1] into route_links
    route_links,     # i8[total_route] origin..destination link indices
    tollable,        # b1[n_legs]
    next_leg,        # i8[n_legs] next leg of the same chain, -1 if last
    chain_heads,     # i8[n_chains] first leg of every chain
    # control
    stuck_time,      # i8 seconds a blocked queue head waits before being forced
    t_max,           # i8 simulation horizon
):
    n_links = t_free_s.shape[0]
    n_legs = leg_kind.shape[0]
    n_bins = toll.shape[1]

    tokens = bucket_max.copy()          # buckets start full
    last_upd = np.zeros(n_links, dtype=np.int64)
    occ = np.zeros(n_links, dtype=np.int64)
    blocked_since = np.full(n_links, -1, dtype=np.int64)
    tq_head = np.full(n_links, -1, dtype=np.int64)
    tq_tail = np.full(n_links, -1, dtype=np.int64)
    wq_head = np.full(n_links, -1, dtype=np.int64)
    wq_tail = np.full(n_links, -1, dtype=np.int64)

    q_next = np.full(n_legs, -1, dtype=np.int64)
    pos = np.full(n_legs, -1, dtype=np.int64)
    ready = np.zeros(n_legs, dtype=np.int64)
    enter_t = np.zeros(n_legs, dtype=np.int64)

    cal_start_head = np.full(t_max + 1, -1, dtype=np.int64)
    cal_start_tail = np.full(t_max + 1, -1, dtype=np.int64)
    cal_start_next = np.full(n_legs, -1, dtype=np.int64)
    cal_arr_head = np.full(t_max + 1, -1, dtype=np.int64)
    cal_arr_tail = np.full(t_max + 1, -1, dtype=np.int64)
    cal_arr_next = np.full(n_legs, -1, dtype=np.int64)

    leg_dep = np.full(n_legs, -1, dtype=np.int64)
    leg_arr = np.full(n_legs, -1, dtype=np.int64)
    leg_toll = np.zeros(n_legs, dtype=np.float64)

    trav_cap = 0
    for j in range(n_legs):
        if leg_kind[j] == LEG_NETWORK:
            rl = route_off[j + 1] - route_off[j]
            if rl > 1:
                trav_cap += rl - 1
    trav_leg = np.empty(trav_cap, dtype=np.int64)
    trav_link = np.empty(trav_cap, dtype=np.int64)
    trav_enter = np.empty(trav_cap, dtype=np.int64)
    trav_leave = np.empty(trav_cap, dtype=np.int64)
    money_leg = np.empty(trav_cap, dtype=np.int64)
    money_link = np.empty(trav_cap, dtype=np.int64)
    money_time = np.empty(trav_cap, dtype=np.int64)
    money_amount = np.empty(trav_cap, dtype=np.float64)
    n_trav = 0
    n_money = 0
    stuck_count = 0

    for i in range(chain_heads.shape[0]):
        h = chain_heads[i]
        dep = planned_dep[h]
        if dep > t_max:
            dep = t_max
        if cal_start_tail[dep] == -1:
            cal_start_head[dep] = h
        else:
            cal_start_next[cal_start_tail[dep]] = h
        cal_start_tail[dep] = h

    n_arrived = 0
    n_inflight = 0
    t = np.int64(0)
    while t <= t_max and n_arrived < n_legs:
        # drain same-second cascades: arrivals release storage and spawn next
        # legs, starts may schedule zero-length arrivals back into this second
        while cal_arr_head[t] != -1 or cal_start_head[t] != -1:
            j = cal_arr_head[t]
            cal_arr_head[t] = -1
            cal_arr_tail[t] = -1
            while j != -1:
                nxt = cal_arr_next[j]
                cal_arr_next[j] = -1
                if leg_kind[j] == LEG_NETWORK and pos[j] >= 1:
                    occ[route_links[route_off[j] + pos[j]]] -= 1
                leg_arr[j] = t
                n_arrived += 1
                n_inflight -= 1
                k = next_leg[j]
                if k != -1:
                    dep = planned_dep[k]
                    if dep < t:
                        dep = t
                    if dep > t_max:
                        dep = t_max
                    if cal_start_tail[dep] == -1:
                        cal_start_head[dep] = k
                    else:
                        cal_start_next[cal_start_tail[dep]] = k
                    cal_start_tail[dep] = k
                j = nxt
            j = cal_start_head[t]
            cal_start_head[t] = -1
            cal_start_tail[t] = -1
            while j != -1:
                nxt = cal_start_next[j]
                cal_start_next[j] = -1
                leg_dep[j] = t
                n_inflight += 1
                if leg_kind[j] == LEG_TELEPORT:
                    ta = t + tele_tt[j]
                    if ta > t_max:
                        ta = t_max
                    if cal_arr_tail[ta] == -1:
                        cal_arr_head[ta] = j
                    else:
                        cal_arr_next[cal_arr_tail[ta]] = j
                    cal_arr_tail[ta] = j
                else:
                    rl = route_off[j + 1] - route_off[j]
                    if rl == 1:
                        # depart and arrive on the same link, nothing traversed
                        if cal_arr_tail[t] == -1:
                            cal_arr_head[t] = j
                        else:
                            cal_arr_next[cal_arr_tail[t]] = j
                        cal_arr_tail[t] = j
                    else:
                        o = route_links[route_off[j]]
                        pos[j] = 0
                        if wq_tail[o] == -1:
                            wq_head[o] = j
                        else:
                            q_next[wq_tail[o]] = j
                        wq_tail[o] = j
                j = nxt

        if n_inflight > 0:
            for r in range(n_links):
                if tq_head[r] == -1 and wq_head[r] == -1:
                    continue
                dt = t - last_upd[r]
                if dt > 0:
                    tk = tokens[r] + dt * cap_per_s[r]
                    if tk > bucket_max[r]:
                        tk = bucket_max[r]
                    tokens[r] = tk
                    last_upd[r] = t
                while tokens[r] >= 1.0:
                    cand = np.int64(-1)
                    from_tq = False
                    h = tq_head[r]
                    if h != -1 and ready[h] <= t:
                        cand = h
                        from_tq = True
                    elif wq_head[r] != -1:
                        cand = wq_head[r]
                    if cand == -1:
                        break
                    p = pos[cand]
                    s = route_links[route_off[cand] + p + 1]
                    if occ[s] >= storage_cap[s]:
                        if blocked_since[r] == -1:
                            blocked_since[r] = t
                            break
                        if t - blocked_since[r] < stuck_time:
                            break
                        # gridlock guard: force the move ignoring storage
                        stuck_count += 1
                        blocked_since[r] = -1
                    else:
                        blocked_since[r] = -1
                    if from_tq:
                        tq_head[r] = q_next[cand]
                        if tq_head[r] == -1:
                            tq_tail[r] = -1
                        occ[r] -= 1
                        trav_leg[n_trav] = cand
                        trav_link[n_trav] = r
                        trav_enter[n_trav] = enter_t[cand]
                        trav_leave[n_trav] = t
                        n_trav += 1
                        if tollable[cand]:
                            b = t // toll_interval
                            if b >= n_bins:
                                b = n_bins - 1
                            amt = toll[r, b]
                            if amt > 0.0:
                                money_leg[n_money] = cand
                                money_link[n_money] = r
                                money_time[n_money] = t
                                money_amount[n_money] = -amt
                                n_money += 1
                                leg_toll[cand] += amt
                    else:
                        wq_head[r] = q_next[cand]
                        if wq_head[r] == -1:
                            wq_tail[r] = -1
                    q_next[cand] = -1
                    tokens[r] -= 1.0
                    occ[s] += 1
                    pos[cand] = p + 1
                    enter_t[cand] = t
                    if p + 2 == route_off[cand + 1] - route_off[cand]:
                        ta = t + t_free_s[s]
                        if ta > t_max:
                            ta = t_max
                        if cal_arr_tail[ta] == -1:
                            cal_arr_head[ta] = cand
                        else:
                            cal_arr_next[cal_arr_tail[ta]] = cand
                        cal_arr_tail[ta] = cand
                    else:
                        ready[cand] = t + t_free_s[s]
                        if tq_tail[s] == -1:
                            tq_head[s] = cand
                        else:
                            q_next[tq_tail[s]] = cand
                        tq_tail[s] = cand
        t += 1

    unfinished = n_legs - n_arrived
    return (leg_dep, leg_arr, leg_toll,
            trav_leg[:n_trav], trav_link[:n_trav], trav_enter[:n_trav], trav_leave[:n_trav],
            money_leg[:n_money], money_link[:n_money], money_time[:n_money],
            money_amount[:n_money],
            stuck_count, unfinished)


@njit(cache=True)
def route_batch(
    csr_start,        # i8[n_nodes+1] out-link offsets per node, links ascending
    csr_link,         # i8[E]
    link_from_node,   # i8[n_links]
    link_to_node,     # i8[n_links]
    link_len,         # f8[n_links]
    tt_table,         # f8[n_links, n_bins] expected travel time by entry bin
    toll,             # f8[n_links, n_bins] charge by exit bin
    bin_s,            # i8
    q_from,           # i8[nq] start node (downstream node of the origin link)
    q_to,             # i8[nq] goal node (upstream node of the destination link)
    q_dep,            # f8[nq] departure time
    q_beta_m_n,       # f8[nq] marginal utility of money of the traveller
    time_cost_per_s,  # f8 utils per second of travel (positive)
    dist_cost_per_m,  # f8 currency per meter (positive)
    eps,              # f8 arc cost floor
):
    """Batched time-dependent least-generalized-cost search.

    Arc cost of entering link e at time T:
    time_cost_per_s * tt(e, T) + beta_m_n * (toll(e, T + tt) + dist_cost_per_m * len(e)),
    floored at eps. Node times follow the best-cost path, ties break toward
    the smaller link index.
    """
    n_nodes = csr_start.shape[0] - 1
    n_bins = tt_table.shape[1]
    nq = q_from.shape[0]
    heap_cap = csr_link.shape[0] + 2
    hcost = np.empty(heap_cap, dtype=np.float64)
    hnode = np.empty(heap_cap, dtype=np.int64)
    dist = np.empty(n_nodes, dtype=np.float64)
    time_at = np.empty(n_nodes, dtype=np.float64)
    par = np.empty(n_nodes, dtype=np.int64)
    done = np.empty(n_nodes, dtype=np.bool_)
    buf = np.empty(n_nodes + 1, dtype=np.int64)

    paths = np.empty(nq * (n_nodes + 1), dtype=np.int64)
    offsets = np.zeros(nq + 1, dtype=np.int64)
    ok = np.zeros(nq, dtype=np.bool_)
    cursor = 0

    for qi in range(nq):
        start = q_from[qi]
        goal = q_to[qi]
        beta = q_beta_m_n[qi]
        for i in range(n_nodes):
            dist[i] = np.inf
            done[i] = False
            par[i] = -1
        dist[start] = 0.0
        time_at[start] = q_dep[qi]
        hsize = 1
        hcost[0] = 0.0
        hnode[0] = start
        found = start == goal
        while hsize > 0 and not found:
            # pop the minimum (cost, node)
            top_c = hcost[0]
            top_n = hnode[0]
            hsize -= 1
            hcost[0] = hcost[hsize]
            hnode[0] = hnode[hsize]
            i = 0
            while True:
                l = 2 * i + 1
                rgt = l + 1
                m = i
                if l < hsize and (hcost[l] < hcost[m]
                                  or (hcost[l] == hcost[m] and hnode[l] < hnode[m])):
                    m = l
                if rgt < hsize and (hcost[rgt] < hcost[m]
                                    or (hcost[rgt] == hcost[m] and hnode[rgt] < hnode[m])):
                    m = rgt
                if m == i:
                    break
                hcost[i], hcost[m] = hcost[m], hcost[i]
                hnode[i], hnode[m] = hnode[m], hnode[i]
                i = m
            if done[top_n] or top_c > dist[top_n]:
                continue
            done[top_n] = True
            if top_n == goal:
                found = True
                break
            t_here = time_at[top_n]
            for ei in range(csr_start[top_n], csr_start[top_n + 1]):
                e = csr_link[ei]
                v = link_to_node[e]
                if done[v]:
                    continue
                b = np.int64(t_here) // bin_s
                if b >= n_bins:
                    b = n_bins - 1
                if b < 0:
                    b = 0
                tt = tt_table[e, b]
                b2 = np.int64(t_here + tt) // bin_s
                if b2 >= n_bins:
                    b2 = n_bins - 1
                if b2 < 0:
                    b2 = 0
                c = time_cost_per_s * tt + beta * (toll[e, b2] + dist_cost_per_m * link_len[e])
                if c < eps:
                    c = eps
                new_cost = dist[top_n] + c
                if new_cost < dist[v]:
                    dist[v] = new_cost
                    time_at[v] = t_here + tt
                    par[v] = e
                    # push
                    i = hsize
                    hcost[i] = new_cost
                    hnode[i] = v
                    hsize += 1
                    while i > 0:
                        pi = (i - 1) // 2
                        if (hcost[i] < hcost[pi]
                                or (hcost[i] == hcost[pi] and hnode[i] < hnode[pi])):
                            hcost[i], hcost[pi] = hcost[pi], hcost[i]
                            hnode[i], hnode[pi] = hnode[pi], hnode[i]
                            i = pi
                        else:
                            break
        offsets[qi] = cursor
        if found:
            ok[qi] = True
            n = 0
            node = goal
            while node != start:
                e = par[node]
                buf[n] = e
                n += 1
                node = link_from_node[e]
            for i in range(n):
                paths[cursor + i] = buf[n - 1 - i]
            cursor += n
    offsets[nq] = cursor
    return paths[:cursor].copy(), offsets, ok
