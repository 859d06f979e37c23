"""Small discrete target whose normalizing constant can be enumerated exactly.

Four taxa, branch lengths restricted to a grid, uniform prior over the
3 topologies x grid^5 branch assignments, and symmetric moves (switch
topology, or move one branch to another grid value).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .alignment import Alignment, compress_patterns
from .likelihood import LikelihoodEngine
from .models import ModelParams
from .moves import N_FEATURES, MoveDescriptor, MoveKind, MoveOutcome
from .problem import ParticleState
from .tree import Tree, partition_metric

TAXA = ("A", "B", "C", "D")
# pairs that form the cherry opposite taxon 0's cherry partner
_PAIRINGS = ((1, 2, 3), (2, 1, 3), (3, 1, 2))  # partner of A, then the other cherry


def build_tree(topology: int, lengths) -> Tree:
    """Topology ``i`` pairs A with ``_PAIRINGS[i][0]``; lengths are the four
    leaf edges (taxon order) followed by the internal edge."""
    partner, c, d = _PAIRINGS[topology]
    u, v = 4, 5
    adj = [[] for _ in range(6)]
    blen = {}

    def link(x, y, length):
        adj[x].append(y)
        adj[y].append(x)
        blen[(min(x, y), max(x, y))] = float(length)

    link(0, u, lengths[0])
    link(partner, u, lengths[partner])
    link(u, v, lengths[4])
    link(c, v, lengths[c])
    link(d, v, lengths[d])
    return Tree(TAXA, adj, blen)


def decode(tree: Tree, grid) -> tuple[int, list[int]]:
    partner = next(c for c in tree.adj[tree.adj[0][0]] if c < 4 and c != 0)
    topo = partner - 1
    internal = tree.internal_edges()[0]
    lengths = [tree.length(i, tree.adj[i][0]) for i in range(4)] + [tree.blen[internal]]
    return topo, [grid.index(x) for x in lengths]


class ToyProblem:
    """Enumerable four-taxon target (JC69 likelihood, grid branch lengths).

    Parameters
    ----------
    sites : sequence of str
        Alignment columns, one character per taxon, e.g. ``["AACG", "ACGT"]``.
    grid : sequence of float
    guide_topology : int or None
        Enables the topology reference term ``(PM + 1) ** -2`` around it.
    """

    family = "JC69"

    def __init__(self, sites=("AACC", "ACGT"), grid=(0.05, 0.2, 0.6), guide_topology: int | None = 0,
                 topology_move_prob: float = 0.5):
        cols = np.array([[ "ACGT".index(ch) for ch in col] for col in sites]).T
        self.patterns = compress_patterns(Alignment(TAXA, cols))
        self.taxa = TAXA
        self.grid = tuple(float(g) for g in grid)
        self.params = ModelParams.jc69()
        self.engine = LikelihoodEngine(self.patterns)
        self.guide = build_tree(guide_topology, [self.grid[0]] * 5) if guide_topology is not None else None
        self.topology_move_prob = topology_move_prob
        self.n_states = 3 * len(self.grid) ** 5

    def log_likelihood(self, tree, params):
        return self.engine.log_likelihood(tree, params)

    def log_likelihood_uncounted(self, tree, params):
        return self.engine._compute(tree, params, None)

    def log_prior(self, tree, params):
        return -math.log(self.n_states)

    def log_ref(self, tree, params):
        if self.guide is None:
            return 0.0
        return -2.0 * math.log(partition_metric(self.guide, tree) + 1)

    def make_state(self, tree, params=None):
        params = params or self.params
        ll = self.log_likelihood(tree, params)
        return ParticleState(tree, params, ll, ll, self.log_prior(tree, params), self.log_ref(tree, params))

    def sample_initial(self, rng):
        topo = int(rng.integers(3))
        idx = rng.integers(len(self.grid), size=5)
        tree = build_tree(topo, [self.grid[i] for i in idx])
        state = self.make_state(tree)
        return state, state.log_ref

    def propose(self, state, rng) -> MoveOutcome:
        topo, idx = decode(state.tree, list(self.grid))
        if rng.random() < self.topology_move_prob:
            topo = (topo + 1 + int(rng.integers(2))) % 3
            kind = MoveKind.STNNI
        else:
            e = int(rng.integers(5))
            idx[e] = (idx[e] + 1 + int(rng.integers(len(self.grid) - 1))) % len(self.grid)
            kind = MoveKind.MULTIPLIER
        tree = build_tree(topo, [self.grid[i] for i in idx])
        feats = np.zeros(N_FEATURES)
        feats[-1] = int(kind)
        return MoveOutcome(tree, self.params, 0.0, MoveDescriptor(kind), feats)

    def enumerate(self):
        """Yield every state's (tree, log prior, log likelihood)."""
        for topo in range(3):
            for idx in itertools.product(range(len(self.grid)), repeat=5):
                tree = build_tree(topo, [self.grid[i] for i in idx])
                yield tree, self.log_prior(tree, self.params), self.log_likelihood_uncounted(tree, self.params)

    def exact_log_z(self) -> float:
        return float(logsumexp([lp + ll for _, lp, ll in self.enumerate()]))
