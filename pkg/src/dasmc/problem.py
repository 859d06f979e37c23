"""Bundles data, model, priors, proposals and reference into one target."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import Alignment, SitePatterns, compress_patterns
from .likelihood import LikelihoodEngine
from .models import ModelParams, PriorSpec, log_prior, sample_params
from .moves import MoveOutcome, ProposalConfig, propose
from .reference import ReferenceDistribution
from .tree import Tree, sample_random_tree


@dataclass
class ParticleState:
    """A sampler state with its cached densities.

    ``log_f`` is the surrogate log-likelihood stored by the move that
    produced the state (equal to ``log_lik`` for initial states).
    """

    tree: Tree
    params: ModelParams
    log_lik: float
    log_f: float
    log_prior: float
    log_ref: float = 0.0

    @property
    def log_base(self) -> float:
        return min(self.log_lik, self.log_f)


class PhyloProblem:
    """Posterior over (tree, model parameters) for one alignment.

    Parameters
    ----------
    data : Alignment or SitePatterns
    family : {"JC69", "K2P", "GTR"}
    prior : PriorSpec
    proposals : ProposalConfig
    reference : ReferenceDistribution, optional
        When given, the annealing path starts at prior x reference.
    """

    def __init__(self, data, family: str = "JC69", prior: PriorSpec | None = None,
                 proposals: ProposalConfig | None = None, reference: ReferenceDistribution | None = None):
        if isinstance(data, Alignment):
            data = compress_patterns(data)
        self.patterns: SitePatterns = data
        self.taxa = tuple(data.taxa)
        self.family = family
        self.prior = prior or PriorSpec()
        self.proposals = proposals or ProposalConfig()
        self.kinds, self.kind_probs = self.proposals.mixture(family)
        self.reference = reference
        if reference is not None and reference.family != family:
            raise ValueError("reference fitted for a different model family")
        self.engine = LikelihoodEngine(data)

    # -- densities -----------------------------------------------------------

    def log_likelihood(self, tree: Tree, params: ModelParams) -> float:
        return self.engine.log_likelihood(tree, params)

    def log_likelihood_uncounted(self, tree: Tree, params: ModelParams) -> float:
        """Exact value without touching the evaluation counter (for oracles)."""
        return self.engine._compute(tree, params, None)

    def log_prior(self, tree: Tree, params: ModelParams) -> float:
        return log_prior(tree, params, self.prior)

    def log_ref(self, tree: Tree, params: ModelParams) -> float:
        if self.reference is None:
            return 0.0
        return self.reference.log_density(tree, params)

    def make_state(self, tree: Tree, params: ModelParams) -> ParticleState:
        ll = self.log_likelihood(tree, params)
        return ParticleState(tree, params, ll, ll, self.log_prior(tree, params), self.log_ref(tree, params))

    # -- sampling ------------------------------------------------------------

    def sample_initial(self, rng: np.random.Generator) -> tuple[ParticleState, float]:
        """Draw from the start of the annealing path; returns (state, log weight)."""
        if self.reference is None:
            tree = sample_random_tree(self.taxa, self.prior.branch_rate, rng)
            params = sample_params(self.family, self.prior, rng)
            return self.make_state(tree, params), 0.0
        tree, params, log_w = self.reference.sample_with_prior(self.taxa, self.prior, rng)
        return self.make_state(tree, params), log_w

    def propose(self, state: ParticleState, rng: np.random.Generator) -> MoveOutcome:
        return propose(state.tree, state.params, self.proposals, rng, self.kinds, self.kind_probs)

    def with_reference(self, reference: ReferenceDistribution | None) -> "PhyloProblem":
        return PhyloProblem(self.patterns, self.family, self.prior, self.proposals, reference)
