"""Nucleotide substitution models (JC69, K2P, GTR), priors and simulation.

State order is (A, C, G, T) throughout.  GTR exchange rates are ordered
(AC, AG, AT, CG, CT, GT).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .tree import Tree, log_n_topologies

STATES = "ACGT"
RATE_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
RATE_NAMES = ("AC", "AG", "AT", "CG", "CT", "GT")
FAMILIES = ("JC69", "K2P", "GTR")
_UNIFORM = (0.25, 0.25, 0.25, 0.25)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Substitution model family plus its free parameters.

    Parameters
    ----------
    family : {"JC69", "K2P", "GTR"}
    kappa : float
        Transition/transversion ratio (K2P only).
    rates : tuple of 6 floats
        GTR exchange rates on the simplex.
    freqs : tuple of 4 floats
        GTR stationary frequencies on the simplex.
    """

    family: str = "JC69"
    kappa: float = 1.0
    rates: tuple = (1 / 6,) * 6
    freqs: tuple = _UNIFORM

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown model family {self.family!r}")
        object.__setattr__(self, "rates", tuple(float(x) for x in self.rates))
        object.__setattr__(self, "freqs", tuple(float(x) for x in self.freqs))
        object.__setattr__(self, "kappa", float(self.kappa))
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise ModelError("kappa must be positive and finite")
        for name, vec, k in (("rates", self.rates, 6), ("freqs", self.freqs, 4)):
            if len(vec) != k:
                raise ModelError(f"{name} needs {k} entries")
            if not all(math.isfinite(x) and x > 0 for x in vec):
                raise ModelError(f"{name} must be positive and finite")
            if abs(sum(vec) - 1.0) > 1e-9:
                raise ModelError(f"{name} must sum to 1")

    @classmethod
    def jc69(cls):
        return cls("JC69")

    @classmethod
    def k2p(cls, kappa: float):
        return cls("K2P", kappa=kappa)

    @classmethod
    def gtr(cls, rates, freqs):
        rates = np.asarray(rates, dtype=float)
        freqs = np.asarray(freqs, dtype=float)
        return cls("GTR", rates=tuple(rates / rates.sum()), freqs=tuple(freqs / freqs.sum()))

    @property
    def pi(self) -> np.ndarray:
        return np.array(self.freqs if self.family == "GTR" else _UNIFORM)

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family == "K2P":
            d["kappa"] = float(f"{self.kappa:.15g}")
        elif self.family == "GTR":
            d["rates"] = [float(f"{x:.15g}") for x in self.rates]
            d["freqs"] = [float(f"{x:.15g}") for x in self.freqs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        fam = d.get("family", "JC69")
        if fam == "K2P":
            return cls.k2p(d.get("kappa", 2.0))
        if fam == "GTR":
            return cls.gtr(d.get("rates", (1,) * 6), d.get("freqs", (1,) * 4))
        return cls(fam)

    @classmethod
    def default(cls, family: str) -> "ModelParams":
        """Starting values: kappa = 2 for K2P, uniform simplexes for GTR."""
        if family == "K2P":
            return cls.k2p(2.0)
        return cls(family)


def rate_matrix(params: ModelParams) -> np.ndarray:
    """Normalized instantaneous rate matrix Q (mean rate one at stationarity)."""
    pi = params.pi
    S = np.zeros((4, 4))
    if params.family == "JC69":
        S[:] = 1.0
    elif params.family == "K2P":
        S[:] = 1.0
        S[0, 2] = S[2, 0] = S[1, 3] = S[3, 1] = params.kappa
    else:
        for (i, j), r in zip(RATE_PAIRS, params.rates):
            S[i, j] = S[j, i] = r
    np.fill_diagonal(S, 0.0)
    Q = S * pi[None, :]
    np.fill_diagonal(Q, -Q.sum(axis=1))
    Q /= -np.dot(pi, np.diag(Q))
    return Q


@lru_cache(maxsize=256)
def _eigen(params: ModelParams):
    pi = params.pi
    Q = rate_matrix(params)
    sq = np.sqrt(pi)
    A = (sq[:, None] * Q) / sq[None, :]
    A = 0.5 * (A + A.T)
    try:
        evals, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"eigendecomposition failed for {params}") from exc
    if not np.all(np.isfinite(evals)):
        raise ModelError(f"degenerate rate matrix for {params}")
    left = V / sq[:, None]
    right = V.T * sq[None, :]
    return evals, left, right


def transition_matrices_eigen(params: ModelParams, t) -> np.ndarray:
    """P(t) via the symmetric eigendecomposition, valid for every family."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    evals, left, right = _eigen(params)
    E = np.exp(np.multiply.outer(t, evals))
    P = np.einsum("ik,bk,kj->bij", left, E, right)
    np.clip(P, 0.0, 1.0, out=P)
    return P


def transition_matrices(params: ModelParams, t) -> np.ndarray:
    """Batch of transition matrices, shape (len(t), 4, 4)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ModelError("branch lengths must be finite and nonnegative")
    if params.family == "JC69":
        e = np.exp(-4.0 * t / 3.0)
        same = 0.25 + 0.75 * e
        diff = 0.25 - 0.25 * e
        P = np.empty((len(t), 4, 4))
        P[:] = diff[:, None, None]
        idx = np.arange(4)
        P[:, idx, idx] = same[:, None]
        return P
    if params.family == "K2P":
        k = params.kappa
        beta = 1.0 / (k + 2.0)
        alpha = k / (k + 2.0)
        e1 = np.exp(-4.0 * beta * t)
        e2 = np.exp(-2.0 * (alpha + beta) * t)
        same = 0.25 + 0.25 * e1 + 0.5 * e2
        ts = 0.25 + 0.25 * e1 - 0.5 * e2
        tv = 0.25 - 0.25 * e1
        P = np.empty((len(t), 4, 4))
        P[:] = tv[:, None, None]
        idx = np.arange(4)
        P[:, idx, idx] = same[:, None]
        P[:, [0, 2, 1, 3], [2, 0, 3, 1]] = ts[:, None]
        return P
    return transition_matrices_eigen(params, t)


def transition_matrix(params: ModelParams, t: float) -> np.ndarray:
    if t < 0:
        raise ModelError("branch length must be nonnegative")
    return transition_matrices(params, [t])[0]


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Independent priors on topology, branch lengths and model parameters.

    Topology is uniform; branch lengths are iid Exponential(``branch_rate``);
    kappa is Gamma(``kappa_shape``, scale ``kappa_scale``); GTR rates and
    frequencies are Dirichlet with the given concentrations (1 = flat).
    """

    branch_rate: float = 10.0
    kappa_shape: float = 2.0
    kappa_scale: float = 2.0
    rates_alpha: tuple = (1.0,) * 6
    freqs_alpha: tuple = (1.0,) * 4

    def __post_init__(self):
        vals = [self.branch_rate, self.kappa_shape, self.kappa_scale, *self.rates_alpha, *self.freqs_alpha]
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ModelError("prior hyperparameters must be positive")

    def to_dict(self):
        return {
            "branch_rate": self.branch_rate,
            "kappa_shape": self.kappa_shape,
            "kappa_scale": self.kappa_scale,
            "rates_alpha": list(self.rates_alpha),
            "freqs_alpha": list(self.freqs_alpha),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("rates_alpha", "freqs_alpha"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def log_dirichlet(x, alpha) -> float:
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(x <= 0):
        return -math.inf
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(x)))


def log_gamma_density(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        return -math.inf
    return (shape - 1.0) * math.log(x) - x / scale - math.lgamma(shape) - shape * math.log(scale)


def log_param_prior(params: ModelParams, spec: PriorSpec) -> float:
    if params.family == "K2P":
        return log_gamma_density(params.kappa, spec.kappa_shape, spec.kappa_scale)
    if params.family == "GTR":
        return log_dirichlet(params.rates, spec.rates_alpha) + log_dirichlet(params.freqs, spec.freqs_alpha)
    return 0.0


def log_branch_prior(lengths, rate: float) -> float:
    x = np.asarray(lengths, dtype=float)
    if np.any(x < 0):
        return -math.inf
    return float(len(x) * math.log(rate) - rate * x.sum())


def log_prior(tree: Tree, params: ModelParams, spec: PriorSpec) -> float:
    """Log joint prior density of (topology, branch lengths, parameters)."""
    return (
        -log_n_topologies(tree.n_taxa)
        + log_branch_prior(list(tree.blen.values()), spec.branch_rate)
        + log_param_prior(params, spec)
    )


def sample_params(family: str, spec: PriorSpec, rng: np.random.Generator) -> ModelParams:
    """Draw model parameters from their prior."""
    if family == "K2P":
        return ModelParams.k2p(rng.gamma(spec.kappa_shape, spec.kappa_scale))
    if family == "GTR":
        return ModelParams.gtr(rng.dirichlet(spec.rates_alpha), rng.dirichlet(spec.freqs_alpha))
    return ModelParams.jc69()


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _draw_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    c = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * c[..., -1:]
    return np.minimum((u >= c).sum(axis=-1), probs.shape[-1] - 1)


def simulate_states(tree: Tree, params: ModelParams, n_sites: int, rng: np.random.Generator) -> np.ndarray:
    """Integer state matrix (n_taxa x n_sites) simulated along the tree."""
    if n_sites < 1:
        raise ValueError("n_sites must be at least 1")
    root = tree.root()
    states = {root: _draw_rows(np.broadcast_to(params.pi, (n_sites, 4)), rng)}
    order = list(reversed(tree.postorder(root)))
    P = transition_matrices(params, [tree.length(v, p) for v, p in order])
    for k, (v, p) in enumerate(order):
        states[v] = _draw_rows(P[k][states[p]], rng)
    return np.stack([states[i] for i in range(tree.n_taxa)])


def simulate_alignment(tree: Tree, params: ModelParams, n_sites: int, rng: np.random.Generator):
    """Simulated gap-free alignment for the tree's taxa."""
    from .alignment import Alignment

    return Alignment(tree.taxa, simulate_states(tree, params, n_sites, rng))
