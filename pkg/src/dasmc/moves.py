"""Tree and parameter proposals with Hastings ratios and move features.

Every tree move is described in the vocabulary of an extending subtree
prune-and-regraft (eSPR) move: a pruning edge ``(a, b)`` whose ``b`` side is
the moved subtree, the two other neighbours ``c1`` (walk direction) and
``c2`` of ``a``, a walk ``path = [n1, ..., nk]`` starting at ``n1 = c1``, and a
regrafting edge ``(nk, y)``.  Moves without a rearrangement have no
regrafting edge.

The feature vector has 36 entries: the 35 descriptive features listed in
``FEATURE_NAMES`` followed by an integer move-kind code.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .models import ModelParams
from .tree import Tree, edge_key


class MoveKind(enum.IntEnum):
    ESPR = 0
    STNNI = 1
    MULTIPLIER = 2
    GLOBAL_MULTIPLIER = 3
    KAPPA = 4
    FREQS = 5
    RATES = 6

    @property
    def is_tree_move(self) -> bool:
        return self <= MoveKind.GLOBAL_MULTIPLIER

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    MoveKind.ESPR: "eSPR",
    MoveKind.STNNI: "stNNI",
    MoveKind.MULTIPLIER: "Multiplier",
    MoveKind.GLOBAL_MULTIPLIER: "GlobalMultiplier",
    MoveKind.KAPPA: "KappaMultiplier",
    MoveKind.FREQS: "FreqDirichlet",
    MoveKind.RATES: "RatesDirichlet",
}

FEATURE_NAMES = (
    "move_mode",
    "total_branch_length",
    "longest_branch",
    "branch_length_variance",
    "pruning_branch_length",
    "regrafting_branch_length",
    "prune_regraft_length_ratio",
    "n_species_influenced",
    "total_length_influenced",
    "longest_branch_influenced",
    "variance_influenced",
    "path_topology_distance",
    "path_branch_length",
    "path_longest_branch",
    "path_variance",
    "n_species_subtree1",
    "n_species_subtree2",
    "n_species_subtree3",
    "n_species_subtree4",
    "total_length_subtree1",
    "total_length_subtree2",
    "total_length_subtree3",
    "total_length_subtree4",
    "subtree1_subtree3_ratio",
    "longest_branch_subtree1",
    "longest_branch_subtree2",
    "longest_branch_subtree3",
    "longest_branch_subtree4",
    "variance_subtree1",
    "variance_subtree2",
    "variance_subtree3",
    "variance_subtree4",
    "long_branch_attraction_risk",
    "post_move_length_sum",
    "post_move_length_product",
)
N_DESCRIPTIVE = len(FEATURE_NAMES)
N_FEATURES = N_DESCRIPTIVE + 1
ALL_FEATURE_NAMES = FEATURE_NAMES + ("move_kind",)


@dataclass
class ProposalConfig:
    """Tuning and mixture weights for the proposal mixture.

    ``weights`` maps MoveKind to probability mass and is filled from the
    model family when left empty.
    """

    p_extend: float = 0.8
    multiplier_lambda: float = 2.0 * math.log(1.6)
    global_lambda: float = 2.0 * math.log(1.1)
    kappa_lambda: float = 2.0 * math.log(1.6)
    dirichlet_concentration: float = 100.0
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_extend < 1.0:
            raise ValueError("p_extend must be in [0, 1)")
        for name in ("multiplier_lambda", "global_lambda", "kappa_lambda", "dirichlet_concentration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        self.weights = {MoveKind(k) if not isinstance(k, str) else MoveKind[k.upper()]: float(v)
                        for k, v in self.weights.items()}

    def mixture(self, family: str) -> tuple[list[MoveKind], np.ndarray]:
        w = dict(self.weights) if self.weights else default_weights(family)
        kinds = sorted(k for k, v in w.items() if v > 0)
        for k in kinds:
            if k == MoveKind.KAPPA and family != "K2P":
                raise ValueError("kappa move requires the K2P model")
            if k in (MoveKind.FREQS, MoveKind.RATES) and family != "GTR":
                raise ValueError("Dirichlet parameter moves require the GTR model")
        p = np.array([w[k] for k in kinds])
        return kinds, p / p.sum()

    def to_dict(self):
        return {
            "p_extend": self.p_extend,
            "multiplier_lambda": self.multiplier_lambda,
            "global_lambda": self.global_lambda,
            "kappa_lambda": self.kappa_lambda,
            "dirichlet_concentration": self.dirichlet_concentration,
            "weights": {k.name: v for k, v in self.weights.items()},
        }


def default_weights(family: str) -> dict:
    tree = {MoveKind.ESPR: 0.35, MoveKind.STNNI: 0.35, MoveKind.MULTIPLIER: 0.15, MoveKind.GLOBAL_MULTIPLIER: 0.15}
    if family == "JC69":
        return tree
    w = {k: 0.9 * v for k, v in tree.items()}
    if family == "K2P":
        w[MoveKind.KAPPA] = 0.1
    else:
        w[MoveKind.FREQS] = 0.05
        w[MoveKind.RATES] = 0.05
    return w


@dataclass
class MoveDescriptor:
    """What a proposal did, in eSPR terms (see module docstring)."""

    kind: MoveKind
    prune_edge: tuple | None = None  # (a, b), b = root of the moved subtree
    c1: int | None = None
    c2: int | None = None
    path: list = field(default_factory=list)
    regraft_edge: tuple | None = None  # (nk, y)
    multipliers: dict = field(default_factory=dict)  # edge key in the old tree -> m
    split_fraction: float = 0.5
    log_topology_ratio: float = 0.0
    old_params: ModelParams | None = None
    new_params: ModelParams | None = None

    @property
    def rearranged(self) -> bool:
        return self.regraft_edge is not None


@dataclass
class MoveOutcome:
    tree: Tree
    params: ModelParams
    log_hastings: float
    descriptor: MoveDescriptor
    features: np.ndarray


def _multiplier(lam: float, rng: np.random.Generator) -> float:
    return math.exp(lam * (rng.random() - 0.5))


def _open_unit(rng: np.random.Generator) -> float:
    s = rng.random()
    while s == 0.0:
        s = rng.random()
    return s


# ---------------------------------------------------------------------------
# eSPR
# ---------------------------------------------------------------------------

def _directed_internal_edge(tree: Tree, rng) -> tuple[int, int]:
    """Uniform (a, b) with a internal: 3(n-2) choices."""
    n = tree.n_taxa
    idx = int(rng.integers(3 * (n - 2)))
    a = n + idx // 3
    return a, tree.adj[a][idx % 3]


def apply_espr(tree: Tree, d: MoveDescriptor) -> Tree:
    """Apply an eSPR-style descriptor to a copy of ``tree``."""
    t = tree.copy()
    a, b = d.prune_edge
    m_p = d.multipliers.get(edge_key(a, b), 1.0)
    if d.regraft_edge is not None:
        c1, c2 = d.c1, d.c2
        nk, y = d.regraft_edge
        m_r = d.multipliers.get(edge_key(nk, y), 1.0)
        l1 = t.disconnect(a, c1)
        l2 = t.disconnect(a, c2)
        t.connect(c1, c2, (l1 + l2) / m_r)
        L = t.disconnect(nk, y) * m_r
        t.connect(nk, a, d.split_fraction * L)
        t.connect(a, y, (1.0 - d.split_fraction) * L)
    t.set_length(a, b, tree.length(a, b) * m_p)
    return t


def reverse_espr(tree: Tree, d: MoveDescriptor) -> MoveDescriptor:
    """Descriptor that maps ``apply_espr(tree, d)`` back to ``tree``."""
    a, b = d.prune_edge
    m_p = d.multipliers.get(edge_key(a, b), 1.0)
    if d.regraft_edge is None:
        return MoveDescriptor(d.kind, (a, b), d.c1, d.c2, multipliers={edge_key(a, b): 1.0 / m_p})
    nk, y = d.regraft_edge
    m_r = d.multipliers.get(edge_key(nk, y), 1.0)
    l1, l2 = tree.length(a, d.c1), tree.length(a, d.c2)
    path = list(reversed(d.path))
    return MoveDescriptor(
        d.kind, (a, b), nk, y, path, (path[-1], d.c2),
        multipliers={edge_key(a, b): 1.0 / m_p, edge_key(path[-1], d.c2): m_r},
        split_fraction=l1 / (l1 + l2),
        log_topology_ratio=-d.log_topology_ratio,
    )


def propose_espr(tree: Tree, p_extend: float, lam: float, rng: np.random.Generator) -> MoveOutcome:
    """Extending subtree prune-and-regraft with branch multipliers.

    The pruned subtree hangs below edge (a, b).  The walk starts at one of
    a's two other neighbours (chosen with probability 1/2), repeatedly picks
    one of two onward edges with probability 1/2 and extends past an
    internal node with probability ``p_extend``.  The regrafting edge is
    split uniformly after scaling by a multiplier, and the pruning edge gets
    its own multiplier.
    """
    n = tree.n_taxa
    if n < 4:
        raise ValueError("eSPR needs at least 4 taxa")
    a, b = _directed_internal_edge(tree, rng)
    others = [c for c in tree.adj[a] if c != b]
    j = int(rng.integers(2))
    c1, c2 = others[j], others[1 - j]
    m_p = _multiplier(lam, rng)
    if c1 < n:
        d = MoveDescriptor(MoveKind.ESPR, (a, b), c1, c2, multipliers={edge_key(a, b): m_p})
        return _finish(tree, d, math.log(m_p))
    path = [c1]
    prev, cur = a, c1
    while True:
        nxt = [c for c in tree.adj[cur] if c != prev]
        y = nxt[int(rng.integers(2))]
        if y < n or rng.random() >= p_extend:
            break
        path.append(y)
        prev, cur = cur, y
    nk = path[-1]
    m_r = _multiplier(lam, rng)
    s = _open_unit(rng)
    stop_y = 1.0 if y < n else 1.0 - p_extend
    stop_c2 = 1.0 if c2 < n else 1.0 - p_extend
    log_topo = math.log(stop_c2) - math.log(stop_y)
    d = MoveDescriptor(
        MoveKind.ESPR, (a, b), c1, c2, path, (nk, y),
        multipliers={edge_key(a, b): m_p, edge_key(nk, y): m_r},
        split_fraction=s, log_topology_ratio=log_topo,
    )
    l12 = tree.length(a, c1) + tree.length(a, c2)
    L = tree.length(nk, y)
    if l12 <= 0.0 or L <= 0.0:
        return _finish(tree, d, -math.inf)
    h = math.log(m_p) + math.log(m_r) + math.log(L) - math.log(l12) + log_topo
    return _finish(tree, d, h)


def _finish(tree, d, h) -> MoveOutcome:
    new = apply_espr(tree, d)
    return MoveOutcome(new, None, h, d, extract_features(tree, d))


# ---------------------------------------------------------------------------
# stNNI
# ---------------------------------------------------------------------------

def propose_stnni(tree: Tree, lam: float, rng: np.random.Generator) -> MoveOutcome:
    """Swap two of the four subtrees around a uniformly chosen internal edge.

    The first subtree is uniform over four, the second uniform over the
    remaining three; picking the partner on the same side leaves the
    topology unchanged.  Both chosen subtrees' edges get multipliers.
    """
    n = tree.n_taxa
    if n < 4:
        raise ValueError("stNNI needs at least 4 taxa")
    internal = tree.internal_edges()
    u, v = internal[int(rng.integers(len(internal)))]
    subs = [(u, c) for c in tree.adj[u] if c != v] + [(v, c) for c in tree.adj[v] if c != u]
    i = int(rng.integers(4))
    rest = [k for k in range(4) if k != i]
    j = rest[int(rng.integers(3))]
    m1 = _multiplier(lam, rng)
    m2 = _multiplier(lam, rng)
    (s1, t1), (s2, t2) = subs[i], subs[j]
    mults = {edge_key(s1, t1): m1, edge_key(s2, t2): m2}
    h = math.log(m1) + math.log(m2)
    if s1 == s2:
        other = next(c for c in tree.adj[s1] if c not in (t1, t2))
        d = MoveDescriptor(MoveKind.STNNI, (s1, t1), other, t2, multipliers=mults)
        new = tree.copy()
        for e, m in mults.items():
            new.blen[e] *= m
        return MoveOutcome(new, None, h, d, extract_features(tree, d))
    # Swapping t1 and t2 equals pruning t1 and regrafting it onto the edge
    # to the subtree on the far side that was not chosen.
    stay = next(c for c in tree.adj[s1] if c not in (t1, s2))
    far = next(c for c in tree.adj[s2] if c not in (t2, s1))
    d = MoveDescriptor(MoveKind.STNNI, (s1, t1), s2, stay, [s2], (s2, far), multipliers=mults)
    new = tree.copy()
    l1 = new.disconnect(s1, t1)
    l2 = new.disconnect(s2, t2)
    new.connect(s2, t1, l1 * m1)
    new.connect(s1, t2, l2 * m2)
    return MoveOutcome(new, None, h, d, extract_features(tree, d))


# ---------------------------------------------------------------------------
# Branch-length multipliers
# ---------------------------------------------------------------------------

def _contains_leaf0(tree: Tree, u: int, v: int) -> bool:
    """True if the v side of edge (u, v) holds taxon 0."""
    stack = [(v, u)]
    while stack:
        node, parent = stack.pop()
        if node == 0:
            return True
        for c in tree.adj[node]:
            if c != parent:
                stack.append((c, node))
    return False


def propose_multiplier(tree: Tree, lam: float, rng: np.random.Generator) -> MoveOutcome:
    """Scale one uniformly chosen branch by m = exp(lam (u - 1/2))."""
    edges = tree.edges()
    u, v = edges[int(rng.integers(len(edges)))]
    m = _multiplier(lam, rng)
    a, b = (v, u) if _contains_leaf0(tree, u, v) else (u, v)
    new = tree.copy()
    new.blen[(u, v)] *= m
    d = MoveDescriptor(MoveKind.MULTIPLIER, (a, b), multipliers={(u, v): m})
    return MoveOutcome(new, None, math.log(m), d, extract_features(tree, d))


def propose_global_multiplier(tree: Tree, lam: float, rng: np.random.Generator) -> MoveOutcome:
    """Independent multipliers on every branch."""
    new = tree.copy()
    mults = {}
    h = 0.0
    for e in tree.edges():
        m = _multiplier(lam, rng)
        mults[e] = m
        new.blen[e] *= m
        h += math.log(m)
    d = MoveDescriptor(MoveKind.GLOBAL_MULTIPLIER, multipliers=mults)
    return MoveOutcome(new, None, h, d, extract_features(tree, d))


# ---------------------------------------------------------------------------
# Parameter moves
# ---------------------------------------------------------------------------

def _log_dirichlet_density(x, alpha) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(x)))


def _dirichlet_step(x, conc, rng):
    x = np.asarray(x, dtype=float)
    new = rng.dirichlet(conc * x)
    if new.min() < 1e-10:
        return None, -math.inf
    new = new / new.sum()
    h = _log_dirichlet_density(x, conc * new) - _log_dirichlet_density(new, conc * x)
    return new, h


def propose_param(tree: Tree, params: ModelParams, kind: MoveKind, config: ProposalConfig,
                  rng: np.random.Generator) -> MoveOutcome:
    """Kappa multiplier or Dirichlet proposal centred at the current simplex."""
    kind = MoveKind(kind)
    if kind == MoveKind.KAPPA:
        if params.family != "K2P":
            raise ValueError("kappa move requires K2P")
        m = _multiplier(config.kappa_lambda, rng)
        new, h = ModelParams.k2p(params.kappa * m), math.log(m)
    elif kind in (MoveKind.FREQS, MoveKind.RATES):
        if params.family != "GTR":
            raise ValueError("Dirichlet moves require GTR")
        cur = params.freqs if kind == MoveKind.FREQS else params.rates
        vec, h = _dirichlet_step(cur, config.dirichlet_concentration, rng)
        if vec is None:
            new = params
        elif kind == MoveKind.FREQS:
            new = ModelParams.gtr(params.rates, vec)
        else:
            new = ModelParams.gtr(vec, params.freqs)
    else:
        raise ValueError(f"{kind} is not a parameter move")
    d = MoveDescriptor(kind, old_params=params, new_params=new)
    return MoveOutcome(tree, new, h, d, extract_features(tree, d))


def propose(tree: Tree, params: ModelParams, config: ProposalConfig, rng: np.random.Generator,
            kinds=None, probs=None) -> MoveOutcome:
    """Draw a move kind from the mixture and propose it."""
    if kinds is None:
        kinds, probs = config.mixture(params.family)
    kind = kinds[int(rng.choice(len(kinds), p=probs))] if len(kinds) > 1 else kinds[0]
    return propose_kind(tree, params, kind, config, rng)


def propose_kind(tree, params, kind, config: ProposalConfig, rng) -> MoveOutcome:
    if kind == MoveKind.ESPR:
        out = propose_espr(tree, config.p_extend, config.multiplier_lambda, rng)
    elif kind == MoveKind.STNNI:
        out = propose_stnni(tree, config.multiplier_lambda, rng)
    elif kind == MoveKind.MULTIPLIER:
        out = propose_multiplier(tree, config.multiplier_lambda, rng)
    elif kind == MoveKind.GLOBAL_MULTIPLIER:
        out = propose_global_multiplier(tree, config.global_lambda, rng)
    else:
        return propose_param(tree, params, kind, config, rng)
    out.params = params
    return out


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def _stats(xs) -> tuple[float, float, float]:
    """(sum, max, population variance); zeros when empty."""
    if not xs:
        return 0.0, 0.0, 0.0
    arr = np.asarray(xs, dtype=float)
    return float(arr.sum()), float(arr.max()), float(arr.var())


def _collect(tree: Tree, u: int, v: int, block: tuple | None = None) -> tuple[int, list]:
    """Leaves and edge lengths on the v side of (u, v), not crossing ``block``."""
    n = tree.n_taxa
    leaves = 0
    lengths = []
    stack = [(v, u)]
    while stack:
        node, parent = stack.pop()
        if node < n:
            leaves += 1
            continue
        for c in tree.adj[node]:
            if c == parent:
                continue
            e = edge_key(node, c)
            if e == block:
                continue
            lengths.append(tree.blen[e])
            stack.append((c, node))
    return leaves, lengths


def extract_features(tree: Tree, d: MoveDescriptor) -> np.ndarray:
    """36-entry feature vector of a move, computed on the starting tree."""
    f = np.zeros(N_FEATURES)
    f[35] = int(d.kind)
    all_len = list(tree.blen.values())
    f[1], f[2], f[3] = _stats(all_len)
    f[23] = -1.0
    kind = d.kind
    if kind == MoveKind.GLOBAL_MULTIPLIER:
        post = [tree.blen[e] * d.multipliers[e] for e in sorted(tree.blen)]
        f[4] = f[1]
        f[33] = float(sum(post))
        f[34] = float(np.prod(post))
        return f
    if not kind.is_tree_move:
        return f

    a, b = d.prune_edge
    pe = edge_key(a, b)
    lp = tree.blen[pe]
    lp_post = lp * d.multipliers.get(pe, 1.0)
    f[4] = lp
    n1, len1 = _collect(tree, a, b)

    if not d.rearranged:
        f[0] = 0.0
        n2, len2 = _collect(tree, b, a)
        f[7] = n1
        f[8], f[9], f[10] = _stats(len1 + [lp])
        f[15], f[16] = n1, n2
        (f[19], f[24], f[28]), (f[20], f[25], f[29]) = _stats(len1), _stats(len2)
        f[33] = lp_post
        return f

    c1, c2 = d.c1, d.c2
    nk, y = d.regraft_edge
    re = edge_key(nk, y)
    L = tree.blen[re]
    L_post = L * d.multipliers.get(re, 1.0)
    f[0] = 1.0
    f[5] = L
    f[6] = lp / L if L > 0 else 0.0

    n2, len2 = _collect(tree, a, c2)
    n3, len3 = _collect(tree, nk, y)
    nc1, lenc1 = _collect(tree, a, c1, block=re)
    n4 = nc1

    # influenced region: pruned subtree, pruning edge and everything beyond c1
    infl = len1 + [lp, tree.length(a, c1)] + lenc1 + [L] + len3
    f[7] = n1 + nc1 + n3
    f[8], f[9], f[10] = _stats(infl)

    path = [a] + list(d.path)
    plen = [tree.length(path[i], path[i + 1]) for i in range(len(path) - 1)]
    f[11] = len(d.path)
    f[12], f[13], f[14] = _stats(plen)

    f[15], f[16], f[17], f[18] = n1, n2, n3, n4
    for k, xs in enumerate((len1, len2, len3, lenc1)):
        f[19 + k], f[24 + k], f[28 + k] = _stats(xs)
    f[23] = n1 / n3
    f[32] = n1 * L
    f[33] = lp_post + L_post
    f[34] = lp_post * L_post
    return f
