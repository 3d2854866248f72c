"""Exact per-scenario replacement optimization, in scaled integer arithmetic.

Given the surviving panel's per-value headcounts, a replacement-size cap and
per-class availability of alternates (a class is a distinct feature vector;
members of a class are interchangeable), find replacements minimizing the
normalized L1 quota deviation. All penalties are scaled by the lcm of the
upper quotas so every computation is pure integer arithmetic; divide by
`scale` to recover the exact rational deviation.

Solvers by feature count:
  1-2 features  successive-shortest-path min-cost flow on the value
                bipartite graph with convex node costs. Unit marginals are
                nondecreasing, so augmenting along cheapest residual paths
                until none is negative is exact. A single zero-cost dummy
                value stands in for the second side when there is only one
                feature.
  3+ features   depth-first search over class allocations with an
                admissible per-feature relaxation bound (small inputs only).

The binary deviation needs no separate solver: the quotas are restorable
iff the minimal L1 deviation is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .._ratio import Q
from ..domain import Agent, FeatureSchema, Quotas

_INF = 1 << 62


class ReplacementSpace:
    """Precomputed quota geometry for one (schema, quotas) pair.

    mode "l1" penalizes shortfall and excess; mode "below" penalizes
    shortfall below the lower quota only.
    """

    def __init__(self, schema: FeatureSchema, quotas: Quotas, mode: str = "l1"):
        if mode not in ("l1", "below"):
            raise ValueError(f"unknown penalty mode {mode!r}")
        self.schema = schema
        self.quotas = quotas
        self.mode = mode
        self.nf = schema.num_features
        self.sizes = [len(vals) for vals in schema.values]
        uppers = []
        self.lower: list[list[int]] = []
        self.upper: list[list[int]] = []
        for f, vals in zip(schema.features, schema.values):
            self.lower.append([quotas.lower[(f, v)] for v in vals])
            self.upper.append([quotas.upper[(f, v)] for v in vals])
            uppers.extend(self.upper[-1])
        self.scale = math.lcm(*uppers)
        self.weight = [[self.scale // u for u in per] for per in self.upper]

    # -- basic penalty arithmetic (scaled integers) ----------------------

    def pen(self, fi: int, vi: int, count: int) -> int:
        l, u, w = self.lower[fi][vi], self.upper[fi][vi], self.weight[fi][vi]
        if count < l:
            return (l - count) * w
        if self.mode == "l1" and count > u:
            return (count - u) * w
        return 0

    def marginal(self, fi: int, vi: int, count_after: int) -> int:
        """Penalty change when the count rises from count_after-1 to count_after."""
        return self.pen(fi, vi, count_after) - self.pen(fi, vi, count_after - 1)

    def base_penalty(self, counts) -> int:
        total = 0
        for fi in range(self.nf):
            row = counts[fi]
            for vi in range(self.sizes[fi]):
                total += self.pen(fi, vi, row[vi])
        return total

    # -- agents -> classes / counts ---------------------------------------

    def class_key(self, agent: Agent) -> tuple[int, ...]:
        return tuple(self.schema.value_index(fi, v)
                     for fi, v in enumerate(agent.vector))

    def counts_of(self, agents: Iterable[Agent]) -> tuple[tuple[int, ...], ...]:
        rows = [[0] * s for s in self.sizes]
        for a in agents:
            for fi, v in enumerate(a.vector):
                rows[fi][self.schema.value_index(fi, v)] += 1
        return tuple(tuple(r) for r in rows)

    def ratio(self, scaled: int):
        return Q(scaled, self.scale)


@dataclass(frozen=True)
class Profile:
    """One replacement scenario: surviving counts and the replacement cap.

    cap None means the uncapped policy (any number of replacements)."""

    counts: tuple[tuple[int, ...], ...]
    cap: int | None


class ReplacementEngine:
    """Solves replacement problems over a fixed class list, with caching."""

    def __init__(self, space: ReplacementSpace, classes: Sequence[tuple[int, ...]]):
        self.space = space
        self.classes = tuple(classes)
        self._cache: dict = {}
        self._profiles: list[Profile] = []
        self._base: list[int] = []
        self._pid_by_profile: dict[Profile, int] = {}
        self._tables: list = []

    def register_profile(self, profile: Profile) -> int:
        """Profiles are deduplicated: equal (counts, cap) share one id, so
        work caches across distributions over the same instance."""
        pid = self._pid_by_profile.get(profile)
        if pid is not None:
            return pid
        pid = len(self._profiles)
        self._pid_by_profile[profile] = pid
        self._profiles.append(profile)
        self._base.append(self.space.base_penalty(profile.counts))
        self._tables.append(None)
        return pid

    def _penalty_tables(self, pid: int, cap: int):
        """Per-profile pen(base + t) tables, grown on demand."""
        entry = self._tables[pid]
        if entry is None or entry[0] < cap:
            space = self.space
            counts = self._profiles[pid].counts
            l1 = space.mode == "l1"
            length = cap + 1  # tables are indexed up to one past the cap
            pen1 = [_pen_table(space.lower[0][v], space.upper[0][v],
                               space.weight[0][v], counts[0][v], length, l1)
                    for v in range(space.sizes[0])]
            if space.nf == 2:
                pen2 = [_pen_table(space.lower[1][w], space.upper[1][w],
                                   space.weight[1][w], counts[1][w], length, l1)
                        for w in range(space.sizes[1])]
            else:
                pen2 = [[0] * (length + 1)]
            entry = (cap, pen1, pen2)
            self._tables[pid] = entry
        return entry[1], entry[2]

    def profile(self, pid: int) -> Profile:
        return self._profiles[pid]

    def base_penalty(self, pid: int) -> int:
        return self._base[pid]

    def solve(self, pid: int, avail: Sequence[int]) -> tuple[int, tuple[int, ...]]:
        """(minimal scaled deviation, per-class replacement counts)."""
        return self.solve_capped(pid, avail, None)

    def solve_capped(self, pid: int, avail: Sequence[int],
                     cap_override: int | None) -> tuple[int, tuple[int, ...]]:
        """As solve, with an extra cap on the total replacement count."""
        profile = self._profiles[pid]
        cap = profile.cap
        if cap_override is not None:
            cap = cap_override if cap is None else min(cap, cap_override)
        total = sum(avail)
        cap = total if cap is None else min(cap, total)
        avail = tuple(a if a < cap else cap for a in avail)
        if cap > total:
            cap = total
        key = (pid, avail, cap)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        base = self._base[pid]
        if cap == 0:
            result = (base, tuple(0 for _ in avail))
        elif self.space.nf <= 2:
            pen1, pen2 = self._penalty_tables(pid, cap)
            delta, r = _flow_solve(self.space, self.classes, pen1, pen2,
                                   avail, cap)
            result = (base + delta, r)
        else:
            delta, r = _dfs_solve(self.space, self.classes,
                                  self._profiles[pid].counts, avail, cap)
            result = (base + delta, r)
        self._cache[key] = result
        return result

    def value(self, pid: int, avail: Sequence[int]) -> int:
        return self.solve(pid, avail)[0]


# ---------------------------------------------------------------------------
# 1-2 features: min-cost flow with convex node costs


def _pen_table(lo: int, up: int, w: int, base: int, length: int, l1: bool) -> list[int]:
    """pen(base + t) for t = 0..length."""
    out = []
    for t in range(length + 1):
        c = base + t
        if c < lo:
            out.append((lo - c) * w)
        elif l1 and c > up:
            out.append((c - up) * w)
        else:
            out.append(0)
    return out


def _flow_solve(space, classes, pen1, pen2, avail, cap):
    """Successive shortest augmenting paths; returns (penalty delta, pushed)."""
    nf = space.nf
    v1n = len(pen1)
    v2n = len(pen2)

    # nodes: 0 = source, 1..v1n = first side, v1n+1..v1n+v2n = second side, last = sink
    n_nodes = 2 + v1n + v2n
    source, sink = 0, n_nodes - 1

    # static arc arrays; per-class lanes carry zero cost and the capacity
    tails: list[int] = []
    heads: list[int] = []
    kinds: list[int] = []  # 0 in1+, 1 in1-, 2 lane+, 3 lane-, 4 in2+, 5 in2-
    pay: list[int] = []
    for v in range(v1n):
        tails.append(source); heads.append(1 + v); kinds.append(0); pay.append(v)
        tails.append(1 + v); heads.append(source); kinds.append(1); pay.append(v)
    lane_of = []
    for j, cls in enumerate(classes):
        if avail[j] <= 0:
            continue
        v = cls[0]
        w = cls[1] if nf == 2 else 0
        lane_of.append(j)
        li = len(lane_of) - 1
        tails.append(1 + v); heads.append(1 + v1n + w); kinds.append(2); pay.append(li)
        tails.append(1 + v1n + w); heads.append(1 + v); kinds.append(3); pay.append(li)
    for w in range(v2n):
        tails.append(1 + v1n + w); heads.append(sink); kinds.append(4); pay.append(w)
        tails.append(sink); heads.append(1 + v1n + w); kinds.append(5); pay.append(w)
    n_arcs = len(tails)

    in1 = [0] * v1n
    in2 = [0] * v2n
    pushed = [0] * len(classes)

    # arc state arrays, refreshed incrementally (augmentations touch at most
    # n_nodes arcs, so only those payloads change between iterations)
    costs = [0] * n_arcs
    enabled = [False] * n_arcs

    def refresh(e):
        k = kinds[e]
        p = pay[e]
        if k == 0:
            t = in1[p]
            enabled[e] = True
            costs[e] = pen1[p][t + 1] - pen1[p][t]
        elif k == 1:
            t = in1[p]
            if t > 0:
                enabled[e] = True
                costs[e] = pen1[p][t - 1] - pen1[p][t]
            else:
                enabled[e] = False
        elif k == 2:
            j = lane_of[p]
            enabled[e] = pushed[j] < avail[j]
        elif k == 3:
            enabled[e] = pushed[lane_of[p]] > 0
        elif k == 4:
            t = in2[p]
            enabled[e] = True
            costs[e] = pen2[p][t + 1] - pen2[p][t]
        else:
            t = in2[p]
            if t > 0:
                enabled[e] = True
                costs[e] = pen2[p][t - 1] - pen2[p][t]
            else:
                enabled[e] = False

    for e in range(n_arcs):
        refresh(e)
    # partner arc of each arc (forward/backward pair share a payload)
    partner = [e + 1 if e % 2 == 0 else e - 1 for e in range(n_arcs)]

    total_delta = 0
    units = 0
    dist = [0] * n_nodes
    parent = [0] * n_nodes
    while units < cap:
        for i in range(n_nodes):
            dist[i] = _INF
            parent[i] = -1
        dist[source] = 0
        for _round in range(n_nodes - 1):
            changed = False
            for e in range(n_arcs):
                if not enabled[e]:
                    continue
                dt = dist[tails[e]]
                if dt == _INF:
                    continue
                nd = dt + costs[e]
                if nd < dist[heads[e]]:
                    dist[heads[e]] = nd
                    parent[heads[e]] = e
                    changed = True
            if not changed:
                break
        d = dist[sink]
        if d == _INF or d >= 0:
            break
        node = sink
        steps = 0
        while node != source:
            e = parent[node]
            k = kinds[e]
            p = pay[e]
            if k == 0:
                in1[p] += 1
            elif k == 1:
                in1[p] -= 1
            elif k == 2:
                pushed[lane_of[p]] += 1
            elif k == 3:
                pushed[lane_of[p]] -= 1
            elif k == 4:
                in2[p] += 1
            else:
                in2[p] -= 1
            node = tails[e]
            refresh(e)
            refresh(partner[e])
            steps += 1
            if steps > n_nodes:  # would indicate a negative cycle
                raise AssertionError("augmenting path extraction looped")
        total_delta += d
        units += 1

    return total_delta, tuple(pushed)


# ---------------------------------------------------------------------------
# 3+ features: bounded depth-first search (small inputs)


def _dfs_solve(space, classes, counts, avail, cap):
    nf = space.nf
    sizes = space.sizes
    order = sorted(range(len(classes)), key=lambda j: classes[j])
    cur = [list(row) for row in counts]

    def suffix_avail(pos):
        per = [[0] * s for s in sizes]
        for oi in range(pos, len(order)):
            j = order[oi]
            if avail[j] <= 0:
                continue
            for fi in range(nf):
                per[fi][classes[j][fi]] += avail[j]
        return per

    suffixes = [suffix_avail(p) for p in range(len(order) + 1)]

    def feature_bound(pos, budget):
        """Optimistic total penalty reachable with `budget` more units."""
        total = 0
        for fi in range(nf):
            pen_now = 0
            gains = []
            for vi in range(sizes[fi]):
                c = cur[fi][vi]
                pen_now += space.pen(fi, vi, c)
                short = max(0, space.lower[fi][vi] - c)
                addable = min(short, suffixes[pos][fi][vi], budget)
                if addable > 0:
                    gains.append((space.weight[fi][vi], addable))
            gains.sort(reverse=True)
            left = budget
            red = 0
            for w, amt in gains:
                take = min(amt, left)
                red += w * take
                left -= take
                if left == 0:
                    break
            total += pen_now - red
        return total

    base = space.base_penalty(counts)
    best = [base, tuple(0 for _ in classes)]
    r = [0] * len(classes)

    def rec(pos, used, pen_cur):
        if pos == len(order):
            if pen_cur < best[0]:
                best[0] = pen_cur
                best[1] = tuple(r)
            return
        if feature_bound(pos, cap - used) >= best[0]:
            return
        j = order[pos]
        hi = min(avail[j], cap - used)
        for take in range(hi, -1, -1):
            delta = 0
            for fi in range(nf):
                vi = classes[j][fi]
                for t in range(take):
                    delta += space.marginal(fi, vi, cur[fi][vi] + t + 1)
            if take:
                for fi in range(nf):
                    cur[fi][classes[j][fi]] += take
            r[j] = take
            rec(pos + 1, used + take, pen_cur + delta)
            r[j] = 0
            if take:
                for fi in range(nf):
                    cur[fi][classes[j][fi]] -= take

    rec(0, 0, base)
    return best[0] - base, best[1]
