"""Reference distributions blended into the annealing path.

The reference density is a product of a parameter part (Gamma for kappa,
Dirichlets for GTR), an Exponential branch-length part, and the unnormalized
topology term ``(PM(t, guide) + 1) ** -2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .models import ModelParams, PriorSpec, log_dirichlet, log_gamma_density
from .tree import Tree, parse_newick, partition_metric


def _log_beta(alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return float(gammaln(alpha).sum() - gammaln(alpha.sum()))


@dataclass
class ReferenceDistribution:
    """Fitted reference; fields left as None contribute nothing."""

    family: str
    guide: Tree | None = None
    kappa_shape: float | None = None
    kappa_scale: float | None = None
    rates_alpha: tuple | None = None
    freqs_alpha: tuple | None = None
    branch_rate: float | None = None

    def log_topology(self, tree: Tree) -> float:
        if self.guide is None:
            return 0.0
        return -2.0 * math.log(partition_metric(self.guide, tree) + 1)

    def log_params(self, params: ModelParams) -> float:
        if params.family == "K2P" and self.kappa_shape is not None:
            return log_gamma_density(params.kappa, self.kappa_shape, self.kappa_scale)
        if params.family == "GTR":
            out = 0.0
            if self.rates_alpha is not None:
                out += log_dirichlet(params.rates, self.rates_alpha)
            if self.freqs_alpha is not None:
                out += log_dirichlet(params.freqs, self.freqs_alpha)
            return out
        return 0.0

    def log_branches(self, tree: Tree) -> float:
        if self.branch_rate is None:
            return 0.0
        x = np.fromiter(tree.blen.values(), dtype=float)
        return float(len(x) * math.log(self.branch_rate) - self.branch_rate * x.sum())

    def log_density(self, tree: Tree, params: ModelParams) -> float:
        """Unnormalized log reference density (topology term unnormalized)."""
        return self.log_topology(tree) + self.log_params(params) + self.log_branches(tree)

    # -- exact sampling from prior x reference for the continuous parts ------

    def sample_with_prior(self, tree_taxa, prior: PriorSpec, rng: np.random.Generator):
        """Draw (tree, params) from prior x reference restricted to the
        continuous coordinates, topology uniform.

        Returns ``(tree, params, log_weight)`` where ``log_weight`` makes the
        draw an importance sample of prior x reference: the normalizers of
        the continuous products plus the topology reference term.
        """
        from .tree import sample_random_tree

        n = len(tree_taxa)
        log_w = 0.0
        # branch lengths: Exp(a) * Exp(b) = (ab/(a+b)) Exp(a+b)
        rate = prior.branch_rate
        if self.branch_rate is not None:
            b = self.branch_rate
            log_w += (2 * n - 3) * (math.log(rate) + math.log(b) - math.log(rate + b))
            rate = rate + b
        tree = sample_random_tree(tree_taxa, rate, rng)
        log_w += self.log_topology(tree)

        family = self.family
        if family == "K2P":
            a1, s1 = prior.kappa_shape, prior.kappa_scale
            if self.kappa_shape is not None:
                a2, s2 = self.kappa_shape, self.kappa_scale
                shape = a1 + a2 - 1.0
                r = 1.0 / s1 + 1.0 / s2
                log_w += (math.lgamma(shape) - shape * math.log(r)
                          - math.lgamma(a1) - a1 * math.log(s1) - math.lgamma(a2) - a2 * math.log(s2))
                params = ModelParams.k2p(rng.gamma(shape, 1.0 / r))
            else:
                params = ModelParams.k2p(rng.gamma(a1, s1))
        elif family == "GTR":
            vecs = []
            for pa, ra in ((prior.rates_alpha, self.rates_alpha), (prior.freqs_alpha, self.freqs_alpha)):
                pa = np.asarray(pa, dtype=float)
                if ra is not None:
                    ra = np.asarray(ra, dtype=float)
                    comb = pa + ra - 1.0
                    log_w += _log_beta(comb) - _log_beta(pa) - _log_beta(ra)
                    vecs.append(_dirichlet(rng, comb))
                else:
                    vecs.append(_dirichlet(rng, pa))
            params = ModelParams.gtr(vecs[0], vecs[1])
        else:
            params = ModelParams.jc69()
        return tree, params, log_w

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "guide": self.guide.to_newick() if self.guide is not None else None,
            "kappa_shape": self.kappa_shape,
            "kappa_scale": self.kappa_scale,
            "rates_alpha": list(self.rates_alpha) if self.rates_alpha is not None else None,
            "freqs_alpha": list(self.freqs_alpha) if self.freqs_alpha is not None else None,
            "branch_rate": self.branch_rate,
        }

    @classmethod
    def from_dict(cls, d: dict, taxa=None) -> "ReferenceDistribution":
        guide = parse_newick(d["guide"], taxa=taxa) if d.get("guide") else None
        return cls(
            d["family"], guide, d.get("kappa_shape"), d.get("kappa_scale"),
            tuple(d["rates_alpha"]) if d.get("rates_alpha") else None,
            tuple(d["freqs_alpha"]) if d.get("freqs_alpha") else None,
            d.get("branch_rate"),
        )


def _dirichlet(rng, alpha):
    x = rng.dirichlet(alpha)
    x = np.maximum(x, 1e-12)
    return x / x.sum()


def fit_gamma_moments(x) -> tuple[float, float]:
    """(shape, scale) with matching mean and variance."""
    x = np.asarray(x, dtype=float)
    m, v = float(x.mean()), float(x.var())
    if not v > 0:
        raise ValueError("cannot fit a Gamma to constant samples")
    return m * m / v, v / m


def fit_dirichlet_moments(x) -> tuple:
    """Concentration vector matching the mean and the average precision
    implied by each component's variance."""
    x = np.asarray(x, dtype=float)
    m = x.mean(axis=0)
    v = x.var(axis=0)
    ok = v > 0
    if not ok.any():
        raise ValueError("cannot fit a Dirichlet to constant samples")
    s = float(np.mean(m[ok] * (1.0 - m[ok]) / v[ok] - 1.0))
    if not s > 0:
        raise ValueError("sample variance too large for a Dirichlet fit")
    return tuple(float(a) for a in m * s)
