"""Delayed-acceptance and classical Metropolis-Hastings steps on tempered targets.

The tempered target at inverse temperature ``phi`` is

    prior(x) * min(L(x), F(x)) ** phi * reference(x) ** (1 - phi)

restricted to states whose producing move passed the gate.  ``L`` is the
exact likelihood and ``F`` the surrogate value stored with the state.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .moves import MoveKind, MoveOutcome
from .problem import ParticleState


class Stage(enum.IntEnum):
    INVALID = 0  # proposal outside the support; nothing evaluated
    GATE_REJECT = 1
    STAGE1_REJECT = 2
    STAGE2_REJECT = 3
    ACCEPT = 4


@dataclass
class DAConfig:
    """Gate threshold ``kappa`` (negative or -inf) and surrogate shift ``delta``."""

    kappa: float = -math.inf
    delta: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if math.isnan(self.kappa) or self.kappa == math.inf:
            raise ValueError("kappa must be finite or -inf")
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")

    def to_dict(self):
        return {"kappa": None if self.kappa == -math.inf else self.kappa, "delta": self.delta, "enabled": self.enabled}


@dataclass
class StepRecord:
    """Outcome of one kernel step, with the pieces needed to replay it."""

    kind: int
    stage: Stage
    evaluated: bool
    accepted: bool
    delta_pred: float
    delta_true: float
    loglik_before: float
    log_hastings: float
    log_prior_ratio: float
    phi: float
    u: float


def _non_likelihood_ratio(problem, state: ParticleState, move: MoveOutcome, phi: float):
    lp = problem.log_prior(move.tree, move.params)
    lr = problem.log_ref(move.tree, move.params)
    ratio = (lp - state.log_prior) + (1.0 - phi) * (lr - state.log_ref)
    return lp, lr, ratio


def _draw_log_u(rng) -> tuple[float, float]:
    u = rng.random()
    return u, (math.log(u) if u > 0.0 else -math.inf)


def classical_mh_step(problem, state: ParticleState, move: MoveOutcome, phi: float,
                      rng: np.random.Generator) -> tuple[ParticleState, StepRecord]:
    """Tempered MH step that always evaluates the exact likelihood."""
    kind = int(move.descriptor.kind)
    if not math.isfinite(move.log_hastings):
        return state, StepRecord(kind, Stage.INVALID, False, False, math.nan, math.nan, state.log_lik,
                                 move.log_hastings, math.nan, phi, math.nan)
    lp, lr, prior_ratio = _non_likelihood_ratio(problem, state, move, phi)
    log_rest = prior_ratio + move.log_hastings
    ll_new = problem.log_likelihood(move.tree, move.params)
    log_alpha = log_rest + phi * (ll_new - state.log_base)
    u, log_u = _draw_log_u(rng)
    accepted = log_u <= log_alpha
    rec = StepRecord(kind, Stage.ACCEPT if accepted else Stage.STAGE2_REJECT, True, accepted, math.nan,
                     ll_new - state.log_lik, state.log_lik, move.log_hastings, prior_ratio, phi, u)
    if accepted:
        state = ParticleState(move.tree, move.params, ll_new, ll_new, lp, lr)
    return state, rec


def da_step(problem, state: ParticleState, move: MoveOutcome, phi: float, delta_pred: float,
            config: DAConfig, rng: np.random.Generator) -> tuple[ParticleState, StepRecord]:
    """Three-stage delayed-acceptance step.

    1. gate: reject if the predicted change ``delta_pred`` is below ``kappa``;
    2. screen with the surrogate ``log F* = log L(x) + delta_pred + delta``;
    3. evaluate the exact likelihood and apply the corrected ratio, reusing
       the same uniform draw.

    Parameter moves and disabled configs fall back to the classical step.
    """
    kind = move.descriptor.kind
    if not config.enabled or not MoveKind(kind).is_tree_move:
        return classical_mh_step(problem, state, move, phi, rng)
    kind = int(kind)
    if not math.isfinite(move.log_hastings):
        return state, StepRecord(kind, Stage.INVALID, False, False, delta_pred, math.nan, state.log_lik,
                                 move.log_hastings, math.nan, phi, math.nan)
    if not math.isfinite(delta_pred):
        raise FloatingPointError(f"surrogate returned {delta_pred}")
    if delta_pred < config.kappa:
        return state, StepRecord(kind, Stage.GATE_REJECT, False, False, delta_pred, math.nan, state.log_lik,
                                 move.log_hastings, math.nan, phi, math.nan)
    lp, lr, prior_ratio = _non_likelihood_ratio(problem, state, move, phi)
    log_rest = prior_ratio + move.log_hastings
    base = state.log_base
    log_f_new = state.log_lik + (delta_pred + config.delta)
    log_alpha1 = log_rest + phi * (log_f_new - base)
    u, log_u = _draw_log_u(rng)
    if log_u > log_alpha1:
        return state, StepRecord(kind, Stage.STAGE1_REJECT, False, False, delta_pred, math.nan, state.log_lik,
                                 move.log_hastings, prior_ratio, phi, u)
    ll_new = problem.log_likelihood(move.tree, move.params)
    log_alpha2 = log_rest + phi * (min(ll_new, log_f_new) - base)
    assert log_alpha2 <= log_alpha1
    accepted = log_u <= log_alpha2
    rec = StepRecord(kind, Stage.ACCEPT if accepted else Stage.STAGE2_REJECT, True, accepted, delta_pred,
                     ll_new - state.log_lik, state.log_lik, move.log_hastings, prior_ratio, phi, u)
    if accepted:
        state = ParticleState(move.tree, move.params, ll_new, log_f_new, lp, lr)
    return state, rec


# ---------------------------------------------------------------------------
# Surrogates
# ---------------------------------------------------------------------------

class ForestSurrogate:
    """Predicts the log-likelihood change of a move from its feature vector."""

    def __init__(self, forest):
        from .moves import ALL_FEATURE_NAMES

        if tuple(forest.feature_names) != ALL_FEATURE_NAMES:
            raise ValueError("forest was trained on a different feature schema")
        self.forest = forest

    def predict(self, problem, states, moves) -> np.ndarray:
        if not moves:
            return np.zeros(0)
        X = np.stack([m.features for m in moves])
        return self.forest.predict(X)


class ExactSurrogate:
    """Exact log-likelihood change (plus ``bias``) computed off the counter.

    Stands in for a perfect regression model in tests and oracles.
    """

    def __init__(self, bias: float = 0.0):
        self.bias = bias

    def predict(self, problem, states, moves) -> np.ndarray:
        return np.array([
            problem.log_likelihood_uncounted(m.tree, m.params) - s.log_lik + self.bias
            for s, m in zip(states, moves)
        ])


class ConstantSurrogate:
    def __init__(self, value: float = 0.0):
        self.value = value

    def predict(self, problem, states, moves) -> np.ndarray:
        return np.full(len(moves), self.value)
