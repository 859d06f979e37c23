"""Independent reference computations used by the tests.

Nothing here calls into the pruning code, the bisection solver or the
split machinery it is checking.
"""
from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np
from scipy.linalg import expm

from dasmc.models import rate_matrix


def transition_expm(params, t):
    """P(t) from a dense matrix exponential of the rate matrix."""
    return expm(rate_matrix(params) * t)


def brute_force_loglik(tree, params, states) -> float:
    """Sum over every internal-node state assignment, site by site.

    ``states`` is an (n_taxa, n_sites) integer array in taxon order.  Edges are
    oriented away from an internal root node, which carries the stationary
    distribution.
    """
    n = tree.n_taxa
    internal = list(range(n, tree.n_nodes))
    root = internal[0]
    parent = {root: None}
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in tree.adj[u]:
            if v not in parent:
                parent[v] = u
                order.append(v)
                queue.append(v)
    P = {v: transition_expm(params, tree.length(v, parent[v])) for v in order if parent[v] is not None}
    pi = params.pi
    total = 0.0
    for site in range(states.shape[1]):
        acc = 0.0
        for assign in itertools.product(range(4), repeat=len(internal)):
            s = dict(zip(internal, assign))
            for leaf in range(n):
                s[leaf] = int(states[leaf, site])
            p = pi[s[root]]
            for v in order[1:]:
                p *= P[v][s[parent[v]], s[v]]
            acc += p
        total += math.log(acc)
    return total


def splits_by_edge_removal(tree) -> set[int]:
    """Nontrivial splits found by deleting each internal edge and flooding."""
    n = tree.n_taxa
    full = (1 << n) - 1
    out = set()
    for u, v in tree.internal_edges():
        seen = {v}
        stack = [v]
        while stack:
            x = stack.pop()
            for y in tree.adj[x]:
                if y not in seen and not (x == v and y == u):
                    seen.add(y)
                    stack.append(y)
        mask = sum(1 << x for x in seen if x < n)
        if mask & 1:
            mask = full ^ mask
        out.add(mask)
    return out


def branch_score_oracle(t1, t2) -> float:
    """Branch score from explicit leaf-set dictionaries (frozensets of names)."""
    def table(t):
        n = t.n_taxa
        out = {}
        for u, v in t.edges():
            seen = {v}
            stack = [v]
            while stack:
                x = stack.pop()
                for y in t.adj[x]:
                    if y not in seen and not (x == v and y == u):
                        seen.add(y)
                        stack.append(y)
            side = frozenset(t.taxa[x] for x in seen if x < n)
            if t.taxa[0] in side:
                side = frozenset(t.taxa) - side
            out[side] = t.length(u, v)
        return out

    a, b = table(t1), table(t2)
    return math.sqrt(sum((a.get(s, 0.0) - b.get(s, 0.0)) ** 2 for s in set(a) | set(b)))


def rcess_direct(W, y, dphi) -> float:
    W = np.asarray(W, float)
    w = np.exp(dphi * np.asarray(y, float))
    return float(np.sum(W * w) ** 2 / np.sum(W * w * w))


def tree_path(tree, a, b) -> list[int]:
    """Node sequence of the unique path from ``a`` to ``b`` (BFS)."""
    prev = {a: None}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        if u == b:
            break
        for v in tree.adj[u]:
            if v not in prev:
                prev[v] = u
                queue.append(v)
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return path[::-1]


def component_leaves(tree, u, v, removed=()) -> int:
    """Leaves reachable from ``v`` without crossing (u, v) or any edge in ``removed``."""
    blocked = {frozenset((u, v))} | {frozenset(e) for e in removed}
    seen = {v}
    stack = [v]
    while stack:
        x = stack.pop()
        for y in tree.adj[x]:
            if y not in seen and frozenset((x, y)) not in blocked:
                seen.add(y)
                stack.append(y)
    return sum(1 for x in seen if x < tree.n_taxa)
