"""Unrooted binary trees, Newick I/O, splits, tree distances and consensus.

Node numbering convention: for ``n`` taxa, nodes ``0 .. n-1`` are the leaves
(node ``i`` carries taxon ``i``) and nodes ``n .. 2n-3`` are the internal
nodes.  Edges are keyed by the sorted node pair.  Splits are Python integers
used as bitmasks over taxon indices, storing the side that does NOT contain
taxon 0.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class TreeError(ValueError):
    """Invalid tree structure or incompatible taxon sets."""


class NewickError(TreeError):
    """Malformed Newick text.  ``pos`` is a 0-based character index."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


def edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def log_n_topologies(n_taxa: int) -> float:
    """log of (2n-5)!!, the number of unrooted binary topologies on n taxa."""
    if n_taxa < 3:
        raise TreeError("need at least 3 taxa")
    m = n_taxa - 2
    return math.lgamma(2 * m + 1) - m * math.log(2.0) - math.lgamma(m + 1)


class Tree:
    """Unrooted binary leaf-labelled tree with branch lengths.

    Parameters
    ----------
    taxa : sequence of str
        Taxon names; position in the sequence is the taxon (and leaf node) index.
    adj : list of list of int
        Neighbour lists; leaves have one neighbour, internal nodes three.
    blen : dict
        Branch length per edge, keyed by ``edge_key(u, v)``.
    """

    __slots__ = ("taxa", "adj", "blen")

    def __init__(self, taxa: Sequence[str], adj: list[list[int]], blen: dict[tuple[int, int], float]):
        self.taxa = tuple(taxa)
        self.adj = adj
        self.blen = blen

    # -- basic accessors -------------------------------------------------

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    @property
    def n_nodes(self) -> int:
        return len(self.adj)

    def is_leaf(self, v: int) -> bool:
        return v < len(self.taxa)

    def copy(self) -> "Tree":
        return Tree(self.taxa, [list(a) for a in self.adj], dict(self.blen))

    def length(self, u: int, v: int) -> float:
        return self.blen[edge_key(u, v)]

    def set_length(self, u: int, v: int, value: float) -> None:
        self.blen[edge_key(u, v)] = value

    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.blen)

    def internal_edges(self) -> list[tuple[int, int]]:
        n = len(self.taxa)
        return [e for e in sorted(self.blen) if e[0] >= n]

    def lengths(self) -> np.ndarray:
        """Branch lengths in sorted-edge order."""
        return np.array([self.blen[e] for e in sorted(self.blen)])

    def total_length(self) -> float:
        return float(sum(self.blen.values()))

    def root(self) -> int:
        """The internal node adjacent to taxon 0, used as the virtual root."""
        return self.adj[0][0]

    # -- structural edits used by proposals ------------------------------

    def connect(self, u: int, v: int, length: float) -> None:
        self.adj[u].append(v)
        self.adj[v].append(u)
        self.blen[edge_key(u, v)] = length

    def disconnect(self, u: int, v: int) -> float:
        self.adj[u].remove(v)
        self.adj[v].remove(u)
        return self.blen.pop(edge_key(u, v))

    # -- traversal ---------------------------------------------------------

    def postorder(self, root: int | None = None) -> list[tuple[int, int]]:
        """(node, parent) pairs with children listed before their parent.

        The root itself is not included.
        """
        if root is None:
            root = self.adj[0][0]
        adj = self.adj
        out = []
        stack = [(c, root, False) for c in reversed(adj[root])]
        while stack:
            node, parent, expanded = stack.pop()
            if expanded:
                out.append((node, parent))
                continue
            stack.append((node, parent, True))
            for c in reversed(adj[node]):
                if c != parent:
                    stack.append((c, node, False))
        return out

    def side(self, u: int, v: int) -> tuple[int, list[float]]:
        """Leaf count and edge lengths of the component holding ``v`` once
        edge (u, v) is removed.  The (u, v) edge itself is excluded."""
        n = len(self.taxa)
        adj, blen = self.adj, self.blen
        n_leaves = 0
        lengths = []
        stack = [(v, u)]
        while stack:
            node, parent = stack.pop()
            if node < n:
                n_leaves += 1
                continue
            for c in adj[node]:
                if c != parent:
                    lengths.append(blen[(node, c) if node < c else (c, node)])
                    stack.append((c, node))
        return n_leaves, lengths

    # -- splits ------------------------------------------------------------

    def _clade_masks(self) -> list[tuple[int, int, int]]:
        """(node, parent, mask of leaves below node) for every edge."""
        n = len(self.taxa)
        masks = [0] * len(self.adj)
        out = []
        for node, parent in self.postorder():
            if node < n:
                m = 1 << node
            else:
                m = 0
                for c in self.adj[node]:
                    if c != parent:
                        m |= masks[c]
            masks[node] = m
            out.append((node, parent, m))
        return out

    def split_lengths(self) -> dict[int, float]:
        """Branch length of every split, trivial leaf splits included."""
        full = (1 << len(self.taxa)) - 1
        res = {}
        for node, parent, m in self._clade_masks():
            if m & 1:
                m = full ^ m
            res[m] = self.blen[edge_key(node, parent)]
        return res

    def splits(self) -> frozenset[int]:
        """Nontrivial splits, one per internal edge."""
        n = len(self.taxa)
        out = []
        for node, parent, m in self._clade_masks():
            if node >= n and parent >= n:
                out.append(m)
        return frozenset(out)

    # -- validation / conversion ------------------------------------------

    def validate(self) -> None:
        n = len(self.taxa)
        if n < 3:
            raise TreeError("a tree needs at least 3 taxa")
        if len(set(self.taxa)) != n:
            raise TreeError("duplicate taxon names")
        if len(self.adj) != 2 * n - 2:
            raise TreeError(f"expected {2 * n - 2} nodes, found {len(self.adj)}")
        for v, nb in enumerate(self.adj):
            want = 1 if v < n else 3
            if len(nb) != want:
                raise TreeError(f"node {v} has degree {len(nb)}, expected {want}")
        if len(self.blen) != 2 * n - 3:
            raise TreeError(f"expected {2 * n - 3} edges, found {len(self.blen)}")
        for (u, v), x in self.blen.items():
            if v not in self.adj[u]:
                raise TreeError(f"edge ({u}, {v}) missing from adjacency")
            if not (x >= 0.0 and math.isfinite(x)):
                raise TreeError(f"invalid branch length {x} on edge ({u}, {v})")
        if len(self.postorder()) != 2 * n - 3:
            raise TreeError("tree is not connected")

    def reorder_taxa(self, taxa: Sequence[str]) -> "Tree":
        """Same tree with leaves renumbered to follow ``taxa``."""
        taxa = tuple(taxa)
        if taxa == self.taxa:
            return self
        if sorted(taxa) != sorted(self.taxa):
            raise TreeError("taxon sets differ")
        n = len(taxa)
        pos = {name: i for i, name in enumerate(taxa)}
        perm = [pos[name] for name in self.taxa] + list(range(n, len(self.adj)))
        adj = [None] * len(self.adj)
        for v, nb in enumerate(self.adj):
            adj[perm[v]] = [perm[c] for c in nb]
        blen = {edge_key(perm[u], perm[v]): x for (u, v), x in self.blen.items()}
        return Tree(taxa, adj, blen)

    def to_newick(self) -> str:
        return write_newick(self)

    def __repr__(self) -> str:
        return f"Tree(n_taxa={self.n_taxa}, newick={write_newick(self)!r})"


def same_taxa(t1, t2) -> tuple:
    """Return ``t2`` reindexed to ``t1``'s taxon order (or raise)."""
    if t1.taxa == t2.taxa:
        return t2
    if sorted(t1.taxa) != sorted(t2.taxa):
        raise TreeError("trees are defined on different taxon sets")
    return t2.reorder_taxa(t1.taxa)


# ---------------------------------------------------------------------------
# Newick
# ---------------------------------------------------------------------------

_NEEDS_QUOTE = re.compile(r"[\s(),:;\[\]']")


def _fmt_length(x: float) -> str:
    if x == 0.0:
        return "0.000000000000"
    decimals = max(12, 11 - math.floor(math.log10(abs(x))))
    return f"{x:.{decimals}f}"


def _fmt_name(name: str) -> str:
    if _NEEDS_QUOTE.search(name):
        return "'" + name.replace("'", "''") + "'"
    return name


def write_newick(tree: Tree, labels: dict[int, str] | None = None) -> str:
    """Newick string rooted (trifurcating) at the node adjacent to taxon 0.

    ``labels`` optionally maps internal node ids to a label written after the
    closing parenthesis (used for support values).
    """
    n = tree.n_taxa
    root = tree.root()
    parts: dict[int, str] = {}
    for node, parent in tree.postorder(root):
        if node < n:
            s = _fmt_name(tree.taxa[node])
        else:
            kids = [parts.pop(c) for c in tree.adj[node] if c != parent]
            s = "(" + ",".join(kids) + ")"
            if labels and node in labels:
                s += labels[node]
        parts[node] = s + ":" + _fmt_length(tree.length(node, parent))
    return "(" + ",".join(parts.pop(c) for c in tree.adj[root]) + ");"


@dataclass
class _PNode:
    name: str | None = None
    length: float | None = None
    children: list = field(default_factory=list)
    end: int = 0


class _NewickParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg: str, pos: int | None = None):
        raise NewickError(msg, self.pos if pos is None else pos)

    def skip(self):
        t = self.text
        while self.pos < len(t):
            c = t[self.pos]
            if c.isspace():
                self.pos += 1
            elif c == "[":
                close = t.find("]", self.pos)
                if close < 0:
                    self.error("unterminated comment")
                self.pos = close + 1
            else:
                break

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def label(self) -> tuple[str | None, int]:
        self.skip()
        t = self.text
        start = self.pos
        if self.pos < len(t) and t[self.pos] == "'":
            out = []
            self.pos += 1
            while True:
                if self.pos >= len(t):
                    self.error("unterminated quoted label", start)
                c = t[self.pos]
                if c == "'":
                    if t[self.pos + 1: self.pos + 2] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out), self.pos - 1
                out.append(c)
                self.pos += 1
        while self.pos < len(t) and t[self.pos] not in "(),:;[" and not t[self.pos].isspace():
            self.pos += 1
        if self.pos == start:
            return None, start - 1
        return t[start:self.pos], self.pos - 1

    def length(self, node: _PNode, required: bool):
        if self.peek() != ":":
            if required:
                self.error("missing branch length for node", node.end)
            return
        self.pos += 1
        self.skip()
        m = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?").match(self.text, self.pos)
        if not m:
            self.error("invalid branch length")
        node.length = float(m.group(0))
        self.pos = m.end()

    def subtree(self, required_length: bool) -> _PNode:
        node = _PNode()
        if self.peek() == "(":
            self.pos += 1
            while True:
                node.children.append(self.subtree(True))
                c = self.peek()
                if c == ",":
                    self.pos += 1
                    continue
                if c == ")":
                    node.end = self.pos
                    self.pos += 1
                    break
                if c == "":
                    self.error("unexpected end of input")
                self.error(f"unexpected character {c!r}")
            name, end = self.label()
            if name is not None:
                node.name = name
                node.end = end
        else:
            name, end = self.label()
            if name is None:
                c = self.peek()
                self.error("unexpected end of input" if c == "" else f"expected a taxon label, found {c!r}")
            node.name = name
            node.end = end
        self.length(node, required_length)
        return node

    def parse(self) -> _PNode:
        root = self.subtree(False)
        if self.peek() != ";":
            self.error("expected ';'")
        self.pos += 1
        if self.peek() != "":
            self.error("trailing characters after ';'")
        return root


def parse_newick(text: str, taxa: Sequence[str] | None = None, resolve_polytomies: bool = False) -> Tree:
    """Parse a Newick string with branch lengths into an unrooted binary Tree.

    A bifurcating root is removed by merging its two edges.  Internal node
    labels (e.g. support values) are ignored.

    Parameters
    ----------
    text : str
        Newick text ending in ``;``.
    taxa : sequence of str, optional
        Fixes the taxon index order; defaults to order of appearance.
    resolve_polytomies : bool
        If True, multifurcations are resolved with zero-length edges instead
        of raising.
    """
    proot = _NewickParser(text.strip()).parse()

    leaves: list[str] = []
    stack = [proot]
    while stack:
        nd = stack.pop()
        if nd.children:
            stack.extend(reversed(nd.children))
        else:
            leaves.append(nd.name)
    if len(set(leaves)) != len(leaves):
        dup = sorted({x for x in leaves if leaves.count(x) > 1})
        raise TreeError(f"duplicate leaf label(s): {', '.join(dup)}")
    if taxa is None:
        taxa = leaves
    elif sorted(taxa) != sorted(leaves):
        raise TreeError("tree leaves do not match the requested taxon set")
    taxa = tuple(taxa)
    n = len(taxa)
    if n < 3:
        raise TreeError("a tree needs at least 3 taxa")
    index = {name: i for i, name in enumerate(taxa)}

    adj: list[list[int]] = [[] for _ in range(n)]
    blen: dict[tuple[int, int], float] = {}

    def new_internal() -> int:
        adj.append([])
        return len(adj) - 1

    def link(u, v, x):
        adj[u].append(v)
        adj[v].append(u)
        blen[edge_key(u, v)] = x

    def build(nd: _PNode) -> int:
        if not nd.children:
            return index[nd.name]
        kids = [(build(c), c.length) for c in nd.children]
        if len(kids) == 1:
            raise TreeError("internal node with a single child (degree-2 node)")
        if len(kids) > 2 and not resolve_polytomies:
            raise TreeError(f"non-binary internal node with {len(kids)} children")
        top = v = new_internal()
        link(v, kids[0][0], kids[0][1])
        for k in range(1, len(kids) - 1):
            w = new_internal()
            link(v, w, 0.0)
            link(w, kids[k][0], kids[k][1])
            v = w
        link(v, kids[-1][0], kids[-1][1])
        return top

    # Build children of the root directly so the root's degree is handled here.
    root_kids = [(build(c) if c.children else index[c.name], c.length) for c in proot.children]
    if len(root_kids) < 2:
        raise TreeError("root must have at least two children")
    if len(root_kids) == 2:
        (a, la), (b, lb) = root_kids
        if a < n and b < n:
            raise TreeError("a tree needs at least 3 taxa")
        link(a, b, la + lb)
    else:
        if len(root_kids) > 3 and not resolve_polytomies:
            raise TreeError(f"non-binary root with {len(root_kids)} children")
        r = new_internal()
        for k, (c, x) in enumerate(root_kids):
            if k >= 2 and k < len(root_kids) - 1:
                w = new_internal()
                link(r, w, 0.0)
                r = w
            link(r, c, x)
    tree = _renumber(taxa, adj, blen)
    tree.validate()
    return tree


def _renumber(taxa, adj, blen) -> Tree:
    """Compact internal node ids to n .. 2n-3 in first-seen order."""
    n = len(taxa)
    used = sorted({v for e in blen for v in e if v >= n})
    remap = {v: n + i for i, v in enumerate(used)}
    remap.update({i: i for i in range(n)})
    new_adj = [[] for _ in range(n + len(used))]
    for v in list(range(n)) + used:
        new_adj[remap[v]] = [remap[c] for c in adj[v]]
    new_blen = {edge_key(remap[u], remap[v]): x for (u, v), x in blen.items()}
    return Tree(taxa, new_adj, new_blen)


def read_newick_file(path, taxa: Sequence[str] | None = None) -> list[Tree]:
    with open(path) as fh:
        text = fh.read()
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            out.append(parse_newick(chunk.strip() + ";", taxa=taxa))
    return out


# ---------------------------------------------------------------------------
# Random trees
# ---------------------------------------------------------------------------

def sample_random_tree(taxa: Sequence[str], branch_rate: float, rng: np.random.Generator) -> Tree:
    """Uniform random unrooted topology with Exponential(branch_rate) lengths.

    Taxa are attached one at a time to a uniformly chosen existing edge,
    which gives every one of the (2n-5)!! topologies equal probability.
    """
    taxa = tuple(taxa)
    n = len(taxa)
    if n < 3:
        raise TreeError("need at least 3 taxa to build an unrooted binary tree")
    if not branch_rate > 0:
        raise ValueError("branch_rate must be positive")
    adj: list[list[int]] = [[] for _ in range(2 * n - 2)]
    edges: list[tuple[int, int]] = []

    def link(u, v):
        adj[u].append(v)
        adj[v].append(u)
        edges.append(edge_key(u, v))

    for leaf in range(3):
        link(n, leaf)
    for k in range(3, n):
        u, v = edges.pop(int(rng.integers(len(edges))))
        w = n + k - 2
        adj[u].remove(v)
        adj[v].remove(u)
        link(u, w)
        link(w, v)
        link(w, k)
    blen = {e: float(rng.exponential(1.0 / branch_rate)) for e in sorted(edges)}
    return Tree(taxa, adj, blen)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def _split_set(t) -> frozenset[int]:
    return t.splits()


def partition_metric(t1, t2) -> int:
    """Number of nontrivial splits present in exactly one of the two trees."""
    t2 = same_taxa(t1, t2)
    return len(_split_set(t1) ^ _split_set(t2))


def branch_score_distance(t1, t2) -> float:
    """Kuhner-Felsenstein branch score over all splits (leaf splits included)."""
    t2 = same_taxa(t1, t2)
    a = t1.split_lengths()
    b = t2.split_lengths()
    total = 0.0
    for s in set(a) | set(b):
        d = a.get(s, 0.0) - b.get(s, 0.0)
        total += d * d
    return math.sqrt(total)


def compatible(a: int, b: int) -> bool:
    """Two canonical splits (bitmasks excluding taxon 0) can coexist in a tree."""
    return (a & b) == 0 or (a & b) == a or (a & b) == b


# ---------------------------------------------------------------------------
# Sample sets and consensus
# ---------------------------------------------------------------------------

@dataclass
class TreeSampleSet:
    """Weighted collection of trees on a common taxon set."""

    trees: list[Tree]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.trees) != len(self.weights):
            raise ValueError("trees and weights differ in length")
        if len(self.trees) and not (np.all(self.weights >= 0) and 0 < self.weights.sum() < np.inf):
            raise ValueError("weights must be nonnegative with a positive finite sum")

    def __len__(self):
        return len(self.trees)

    @classmethod
    def uniform(cls, trees: Sequence[Tree]) -> "TreeSampleSet":
        return cls(list(trees), np.ones(len(trees)))

    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()


def split_frequencies(samples: TreeSampleSet) -> dict[int, tuple[float, float]]:
    """Weighted frequency and weighted mean length of every split (trivial included)."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    ref = samples.trees[0]
    w = samples.normalized_weights()
    freq: dict[int, float] = {}
    lsum: dict[int, float] = {}
    for tree, wi in zip(samples.trees, w):
        if wi == 0.0:
            continue
        tree = same_taxa(ref, tree)
        for s, x in tree.split_lengths().items():
            freq[s] = freq.get(s, 0.0) + wi
            lsum[s] = lsum.get(s, 0.0) + wi * x
    return {s: (f, lsum[s] / f) for s, f in freq.items()}


@dataclass
class ConsensusTree:
    """Majority-rule consensus: a possibly multifurcating tree with supports.

    ``clusters`` maps every retained split (nontrivial and leaf splits) to
    ``(support, mean_length)``.
    """

    taxa: tuple[str, ...]
    clusters: dict[int, tuple[float, float]]

    @property
    def n_taxa(self):
        return len(self.taxa)

    def splits(self) -> frozenset[int]:
        n = len(self.taxa)
        return frozenset(s for s in self.clusters if 2 <= s.bit_count() <= n - 2)

    def split_lengths(self) -> dict[int, float]:
        return {s: x for s, (_, x) in self.clusters.items()}

    def supports(self) -> dict[int, float]:
        return {s: f for s, (f, _) in self.splits_items()}

    def splits_items(self):
        nontrivial = self.splits()
        return [(s, v) for s, v in self.clusters.items() if s in nontrivial]

    def reorder_taxa(self, taxa):
        taxa = tuple(taxa)
        if taxa == self.taxa:
            return self
        # Remap through a resolved binary tree keeps the bitmask logic in one place.
        pos = {name: i for i, name in enumerate(taxa)}
        perm = [pos[name] for name in self.taxa]
        full = (1 << len(taxa)) - 1
        out = {}
        for s, v in self.clusters.items():
            m = 0
            for i in range(len(self.taxa)):
                if s >> i & 1:
                    m |= 1 << perm[i]
            if m & 1:
                m = full ^ m
            out[m] = v
        return ConsensusTree(taxa, out)

    def _hierarchy(self):
        """Parent cluster for each retained nontrivial cluster, and leaf parents."""
        n = len(self.taxa)
        clusters = sorted(self.splits(), key=lambda s: (s.bit_count(), s))
        parent: dict[int, int | None] = {}
        for i, c in enumerate(clusters):
            parent[c] = None
            for d in clusters[i + 1:]:
                if d != c and (c & d) == c:
                    parent[c] = d
                    break
        leaf_parent = {}
        for leaf in range(1, n):
            bit = 1 << leaf
            leaf_parent[leaf] = None
            for d in clusters:
                if d & bit:
                    leaf_parent[leaf] = d
                    break
        return clusters, parent, leaf_parent

    def to_newick(self, support_digits: int = 4) -> str:
        """Newick with clade supports written as internal node labels."""
        n = len(self.taxa)
        clusters, parent, leaf_parent = self._hierarchy()
        full = (1 << n) - 1
        children: dict[int | None, list] = {None: [("leaf", 0)]}
        for c in clusters:
            children.setdefault(c, [])
        for leaf in range(1, n):
            children.setdefault(leaf_parent[leaf], []).append(("leaf", leaf))
        for c in clusters:
            children[parent[c]].append(("clade", c))

        def leaf_len(i):
            s = full ^ 1 if i == 0 else 1 << i
            return self.clusters.get(s, (0.0, 0.0))[1]

        def render(item):
            kind, key = item
            if kind == "leaf":
                return _fmt_name(self.taxa[key]) + ":" + _fmt_length(leaf_len(key))
            sup, x = self.clusters[key]
            inner = ",".join(render(ch) for ch in sorted(children[key], key=_order_key))
            return f"({inner}){sup:.{support_digits}f}:" + _fmt_length(x)

        top = ",".join(render(ch) for ch in sorted(children[None], key=_order_key))
        return f"({top});"

    def resolved_tree(self) -> Tree:
        """Binary tree carrying every consensus split; polytomies are resolved
        arbitrarily with zero-length edges (likelihood-neutral)."""
        text = self.to_newick()
        return parse_newick(text, taxa=self.taxa, resolve_polytomies=True)


def _order_key(item):
    kind, key = item
    return (0 if kind == "leaf" else 1, key)


def majority_rule_consensus(samples: TreeSampleSet) -> ConsensusTree:
    """Splits with weighted frequency strictly above one half.

    Branch lengths are weighted means over the samples containing the split.
    """
    if len(samples) == 0:
        raise ValueError("empty sample set")
    freqs = split_frequencies(samples)
    kept = {s: v for s, v in freqs.items() if v[0] > 0.5}
    nontrivial = [s for s in kept if 2 <= s.bit_count() <= samples.trees[0].n_taxa - 2]
    for i, a in enumerate(nontrivial):
        for b in nontrivial[i + 1:]:
            if not compatible(a, b):
                raise AssertionError("majority splits are incompatible")
    return ConsensusTree(samples.trees[0].taxa, kept)


def split_table(samples: TreeSampleSet) -> list[dict]:
    """Rows of (taxon bitmask hex, frequency, mean length), most frequent first."""
    rows = [
        {"split": hex(s), "frequency": f, "mean_length": x}
        for s, (f, x) in split_frequencies(samples).items()
    ]
    rows.sort(key=lambda r: (-r["frequency"], int(r["split"], 16)))
    return rows


def write_split_table(samples: TreeSampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["split", "frequency", "mean_length"])
        w.writeheader()
        for row in split_table(samples):
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
