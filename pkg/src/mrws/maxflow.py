"""Highest-label push-relabel maximum flow with the gap heuristic.

Capacities may be floats or ``fractions.Fraction``; with fractions every
comparison is exact and ``eps`` should be left at 0.
"""

from __future__ import annotations


class FlowNetwork:
    def __init__(self, n: int, eps=0):
        self.n = n
        self.eps = eps
        self.adj: list[list[int]] = [[] for _ in range(n)]
        self.head: list[int] = []
        self.cap: list = []
        self.orig: list = []
        self.zero = 0

    def add_edge(self, u: int, v: int, cap, rev_cap=0) -> int:
        """Add arc ``u -> v`` (and its residual twin); returns the arc id."""
        if u == v:
            return -1
        k = len(self.head)
        self.head += [v, u]
        self.cap += [cap, rev_cap]
        self.orig += [cap, rev_cap]
        self.adj[u].append(k)
        self.adj[v].append(k + 1)
        return k

    def add_undirected(self, u: int, v: int, cap) -> int:
        return self.add_edge(u, v, cap, cap)

    def net_flow(self, arc: int):
        """Net flow along arc ``arc`` in its forward direction."""
        return (self.orig[arc] - self.cap[arc] - (self.orig[arc ^ 1] - self.cap[arc ^ 1])) / 2

    def max_flow(self, s: int, t: int):
        n, head, cap, adj, eps = self.n, self.head, self.cap, self.adj, self.eps
        if s == t:
            raise ValueError("source and sink coincide")
        height = [0] * n
        excess = [self.zero] * n
        count = [0] * (2 * n + 1)
        buckets: list[list[int]] = [[] for _ in range(2 * n + 1)]
        current = [0] * n
        height[s] = n
        count[0] = n - 1
        count[n] = 1

        for a in adj[s]:
            c = cap[a]
            if c > eps:
                v = head[a]
                cap[a] -= c
                cap[a ^ 1] += c
                excess[v] += c
                excess[s] -= c
        top = 0
        for v in range(n):
            if v != s and v != t and excess[v] > eps:
                buckets[height[v]].append(v)

        while True:
            while top >= 0 and not buckets[top]:
                top -= 1
            if top < 0:
                break
            u = buckets[top].pop()
            if height[u] != top or excess[u] <= eps:
                continue
            # discharge u
            while excess[u] > eps:
                arcs = adj[u]
                if current[u] == len(arcs):
                    old = height[u]
                    new = 2 * n
                    for a in arcs:
                        if cap[a] > eps:
                            h = height[head[a]] + 1
                            if h < new:
                                new = h
                    count[old] -= 1
                    if count[old] == 0 and 0 < old < n:
                        # gap: everything above old (below n) is cut off from t
                        for w in range(n):
                            if old < height[w] < n and w != s:
                                count[height[w]] -= 1
                                height[w] = n + 1
                                count[n + 1] += 1
                                if w != u and w != t and excess[w] > eps:
                                    buckets[n + 1].append(w)
                                    top = max(top, n + 1)
                        new = max(new, n + 1)
                    height[u] = min(new, 2 * n)
                    count[height[u]] += 1
                    current[u] = 0
                    if height[u] >= 2 * n:
                        # no residual arc left: the excess is float round-off, strand it
                        break
                    continue
                a = arcs[current[u]]
                v = head[a]
                if cap[a] > eps and height[u] == height[v] + 1:
                    delta = excess[u] if excess[u] < cap[a] else cap[a]
                    cap[a] -= delta
                    cap[a ^ 1] += delta
                    excess[u] -= delta
                    was_idle = excess[v] <= eps
                    excess[v] += delta
                    if was_idle and v != s and v != t and excess[v] > eps:
                        buckets[height[v]].append(v)
                        if height[v] > top:
                            top = height[v]
                else:
                    current[u] += 1
            if height[u] > top:
                top = height[u]
        self._s, self._t = s, t
        return excess[t]

    def _reach(self, start: int, forward: bool) -> set[int]:
        seen = {start}
        stack = [start]
        head, cap, adj, eps = self.head, self.cap, self.adj, self.eps
        while stack:
            u = stack.pop()
            for a in adj[u]:
                v = head[a]
                # forward: residual u -> v; backward: residual v -> u (the twin arc)
                c = cap[a] if forward else cap[a ^ 1]
                if c > eps and v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def min_cut(self, minimal: bool = True) -> set[int]:
        """Source side of the inclusion-minimal (or maximal) minimum cut."""
        if minimal:
            return self._reach(self._s, forward=True)
        return set(range(self.n)) - self._reach(self._t, forward=False)
