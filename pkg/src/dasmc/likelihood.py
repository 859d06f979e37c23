"""Felsenstein pruning log-likelihood over compressed site patterns."""
from __future__ import annotations

import math
import time

import numpy as np

from .alignment import Alignment, SitePatterns, compress_patterns
from .models import ModelParams, transition_matrices
from .tree import Tree, edge_key

SCALE_THRESHOLD = 1e-150


class LikelihoodError(RuntimeError):
    pass


class LikelihoodEngine:
    """Evaluates log p(D | tree, params) and counts how often it does so.

    Parameters
    ----------
    patterns : SitePatterns or Alignment
        Data; an alignment is compressed on construction.
    """

    def __init__(self, patterns):
        if isinstance(patterns, Alignment):
            patterns = compress_patterns(patterns)
        self.patterns = patterns
        self.n_evals = 0
        self.eval_seconds = 0.0
        self._by_order: dict[tuple, np.ndarray] = {}

    def _states_for(self, taxa: tuple) -> np.ndarray:
        st = self._by_order.get(taxa)
        if st is None:
            if sorted(taxa) != sorted(self.patterns.taxa):
                raise LikelihoodError("tree and alignment taxon sets differ")
            pos = {n: i for i, n in enumerate(self.patterns.taxa)}
            st = np.ascontiguousarray(self.patterns.patterns[[pos[n] for n in taxa]]).astype(np.intp)
            self._by_order[taxa] = st
        return st

    def log_likelihood(self, tree: Tree, params: ModelParams, root: int | None = None) -> float:
        """Exact log-likelihood; ``root`` selects the node the recursion ends at."""
        t0 = time.perf_counter()
        value = self._compute(tree, params, root)
        self.eval_seconds += time.perf_counter() - t0
        self.n_evals += 1
        return value

    def _compute(self, tree: Tree, params: ModelParams, root: int | None) -> float:
        states = self._states_for(tree.taxa)
        n = tree.n_taxa
        npat = states.shape[1]
        if root is None:
            root = tree.adj[0][0]
        order = tree.postorder(root)
        lengths = [tree.blen[edge_key(v, p)] for v, p in order]
        P = transition_matrices(params, lengths)
        adj = tree.adj
        partial: dict[int, np.ndarray] = {}
        log_scale = np.zeros(npat)
        contrib: dict[int, np.ndarray] = {}
        for k, (v, p) in enumerate(order):
            if v < n:
                # contrib[pattern, i] = P[i, leaf_state]
                contrib[v] = P[k][:, states[v]].T
                continue
            acc = None
            for c in adj[v]:
                if c == p:
                    continue
                x = contrib.pop(c)
                acc = x if acc is None else acc * x
            acc = self._rescale(acc, log_scale)
            contrib[v] = acc @ P[k].T
        acc = None
        for c in adj[root]:
            x = contrib.pop(c)
            acc = x if acc is None else acc * x
        if root < n:
            onehot = np.zeros((npat, 4))
            onehot[np.arange(npat), states[root]] = 1.0
            acc = acc * onehot
        site = acc @ params.pi
        with np.errstate(divide="ignore"):
            ll = float(np.dot(self.patterns.counts, np.log(site) + log_scale))
        if not math.isfinite(ll):
            raise LikelihoodError("non-finite log-likelihood")
        return ll

    @staticmethod
    def _rescale(acc: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
        m = acc.max(axis=1)
        small = m < SCALE_THRESHOLD
        if small.any():
            acc = acc.copy()
            rows = np.flatnonzero(small & (m > 0))
            acc[rows] /= m[rows, None]
            log_scale[rows] += np.log(m[rows])
        return acc

    def reset_counter(self):
        self.n_evals = 0
        self.eval_seconds = 0.0


def log_likelihood(tree: Tree, params: ModelParams, patterns) -> float:
    """One-off log-likelihood evaluation."""
    return LikelihoodEngine(patterns).log_likelihood(tree, params)
