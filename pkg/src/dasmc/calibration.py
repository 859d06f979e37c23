"""Pilot runs, surrogate training data, reference fitting and choice of delta."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .forest import ForestConfig, RegressionForest, fit_forest, fit_kind_forests, holdout_metrics, train_test_split
from .kernel import DAConfig
from .models import ModelParams, PriorSpec
from .moves import ALL_FEATURE_NAMES, FEATURE_NAMES, MoveKind
from .reference import ReferenceDistribution, fit_dirichlet_moments, fit_gamma_moments
from .smc import SMCConfig, SMCResult, run_smc
from .tree import TreeSampleSet, majority_rule_consensus, parse_newick

LOG_COLUMNS = FEATURE_NAMES + ("move_kind", "delta_true", "loglik_before", "hastings_logratio",
                               "log_prior_ratio", "phi", "uniform_u", "accepted")
MIN_LATE_SAMPLES = 50


class CalibrationError(ValueError):
    pass


@dataclass
class TrainingLog:
    """One row per exactly evaluated proposal of a pilot run."""

    features: np.ndarray  # (n, 36), last column = move kind
    delta_true: np.ndarray
    loglik_before: np.ndarray
    hastings: np.ndarray
    log_prior_ratio: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    accepted: np.ndarray
    late_samples: list = field(default_factory=list)  # (tree, params, weight)

    def __len__(self):
        return len(self.delta_true)

    @property
    def kind(self) -> np.ndarray:
        return self.features[:, -1].astype(int)

    def tree_move_mask(self) -> np.ndarray:
        return self.kind <= int(MoveKind.GLOBAL_MULTIPLIER)

    def subset(self, mask) -> "TrainingLog":
        return TrainingLog(self.features[mask], self.delta_true[mask], self.loglik_before[mask],
                           self.hastings[mask], self.log_prior_ratio[mask], self.phi[mask], self.u[mask],
                           self.accepted[mask], self.late_samples)

    def replay_log_alpha(self) -> np.ndarray:
        """Exact-MH log acceptance ratios recomputed from the logged pieces."""
        return (self.log_prior_ratio + self.hastings) + self.phi * self.delta_true

    def replay_accepted(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.u) <= self.replay_log_alpha()

    # -- CSV ------------------------------------------------------------------

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for i in range(len(self)):
                row = [repr(float(x)) for x in self.features[i, :-1]]
                row.append(int(self.features[i, -1]))
                row += [repr(float(v[i])) for v in (self.delta_true, self.loglik_before, self.hastings,
                                                     self.log_prior_ratio, self.phi, self.u)]
                row.append(int(self.accepted[i]))
                w.writerow(row)

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = tuple(next(r))
            if header != LOG_COLUMNS:
                raise CalibrationError("training log has an unexpected header")
            rows = [list(map(float, row)) for row in r]
        if not rows:
            raise CalibrationError("training log is empty")
        a = np.array(rows)
        nf = len(FEATURE_NAMES) + 1
        return cls(a[:, :nf], a[:, nf], a[:, nf + 1], a[:, nf + 2], a[:, nf + 3], a[:, nf + 4], a[:, nf + 5],
                   a[:, nf + 6].astype(bool))


def write_late_samples(samples, path) -> None:
    with open(path, "w") as fh:
        fh.write("weight\tparams\tnewick\n")
        for tree, params, w in samples:
            fh.write(f"{float(w)!r}\t{json.dumps(params.to_dict(), sort_keys=True)}\t{tree.to_newick()}\n")


def read_late_samples(path, taxa=None) -> list:
    out = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            w, params, nwk = line.rstrip("\n").split("\t")
            out.append((parse_newick(nwk, taxa=taxa), ModelParams.from_dict(json.loads(params)), float(w)))
    return out


def log_from_result(result: SMCResult) -> TrainingLog:
    rows = sorted(result.move_log, key=lambda t: (t[0], t[1], t[2]))
    if not rows:
        raise CalibrationError("pilot run logged no moves")
    feats = np.stack([t[3] for t in rows])
    recs = [t[4] for t in rows]
    late = [(s.tree, s.params, w) for pop in result.late_samples for s, w in pop]
    return TrainingLog(
        feats,
        np.array([x.delta_true for x in recs]),
        np.array([x.loglik_before for x in recs]),
        np.array([x.log_hastings for x in recs]),
        np.array([x.log_prior_ratio for x in recs]),
        np.array([x.phi for x in recs]),
        np.array([x.u for x in recs]),
        np.array([x.accepted for x in recs], dtype=bool),
        late,
    )


def run_pilot(problem, config: SMCConfig) -> tuple[TrainingLog, SMCResult]:
    """Plain annealed SMC (exact moves, no reference) with every move logged."""
    if problem.reference is not None:
        problem = problem.with_reference(None)
    cfg = replace(config, mode="asmc", log_moves=True)
    result = run_smc(problem, cfg)
    return log_from_result(result), result


# ---------------------------------------------------------------------------
# Reference fitting
# ---------------------------------------------------------------------------

def _weighted_resample(x, w, rng_seed=0):
    """Deterministic equal-weight version of weighted samples (systematic)."""
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    n = len(w)
    pos = (np.arange(n) + 0.5) / n
    idx = np.minimum(np.searchsorted(np.cumsum(w), pos), n - 1)
    return np.asarray(x)[idx]


def fit_reference(late_samples, family: str, prior: PriorSpec | None = None) -> ReferenceDistribution:
    """Moment-matched parameter reference plus majority-rule guide tree."""
    prior = prior or PriorSpec()
    if len(late_samples) < MIN_LATE_SAMPLES:
        raise CalibrationError(f"need at least {MIN_LATE_SAMPLES} late-phase samples, got {len(late_samples)}")
    trees = [t for t, _, _ in late_samples]
    w = np.array([x for _, _, x in late_samples], dtype=float)
    if not w.sum() > 0:
        w = np.ones(len(w))
    guide = majority_rule_consensus(TreeSampleSet(trees, w)).resolved_tree()
    ref = ReferenceDistribution(family, guide=guide, branch_rate=prior.branch_rate)
    if family == "K2P":
        k = _weighted_resample([p.kappa for _, p, _ in late_samples], w)
        ref.kappa_shape, ref.kappa_scale = fit_gamma_moments(k)
    elif family == "GTR":
        rates = _weighted_resample(np.array([p.rates for _, p, _ in late_samples]), w)
        freqs = _weighted_resample(np.array([p.freqs for _, p, _ in late_samples]), w)
        ref.rates_alpha = fit_dirichlet_moments(rates)
        ref.freqs_alpha = fit_dirichlet_moments(freqs)
    return ref


# ---------------------------------------------------------------------------
# Surrogate training and delta selection
# ---------------------------------------------------------------------------

def train_surrogate(log: TrainingLog, config: ForestConfig, test_fraction: float = 0.1,
                    seed: int = 0) -> tuple[RegressionForest, dict, np.ndarray]:
    """Fit on tree-move rows; returns (forest, holdout metrics, holdout row indices)."""
    if log.tree_move_mask().sum() < 10:
        raise CalibrationError("too few tree-move rows to train a surrogate")
    tr, te = holdout_rows(log, test_fraction, seed)
    if config.per_kind:
        forest = fit_kind_forests(log.features[tr], log.delta_true[tr], config, ALL_FEATURE_NAMES)
    else:
        forest = fit_forest(log.features[tr], log.delta_true[tr], config, ALL_FEATURE_NAMES)
    metrics = holdout_metrics(forest, log.features[te], log.delta_true[te])
    metrics.update(n_train=int(len(tr)), n_test=int(len(te)))
    return forest, metrics, te


@dataclass
class DeltaSelection:
    delta: float
    frr: float
    far: float
    bypass_fraction: float
    target_frr: float
    reachable: bool
    iterations: int
    n_rows: int

    def to_dict(self):
        return dict(self.__dict__)


def replay_rates(log: TrainingLog, predicted: np.ndarray, delta: float, kappa: float = -math.inf) -> dict:
    """False-rejection / false-acceptance / bypass rates of the DA kernel
    replayed on logged moves with their recorded uniforms."""
    rest = log.log_prior_ratio + log.hastings
    with np.errstate(divide="ignore"):
        log_u = np.log(log.u)
    exact = log_u <= rest + log.phi * log.delta_true
    gate = predicted >= kappa
    f = predicted + delta
    stage1 = gate & (log_u <= rest + log.phi * f)
    da = stage1 & (log_u <= rest + log.phi * np.minimum(log.delta_true, f))
    n_acc = int(exact.sum())
    n_rej = len(exact) - n_acc
    return {
        "frr": float((exact & ~da).sum() / n_acc) if n_acc else 0.0,
        "far": float((~exact & da).sum() / n_rej) if n_rej else 0.0,
        "bypass_fraction": float(1.0 - stage1.mean()) if len(exact) else 0.0,
    }


def select_delta(log: TrainingLog, predicted: np.ndarray, target_frr: float, kappa: float = -math.inf,
                 delta_max: float = 200.0, tol: float = 1e-6) -> DeltaSelection:
    """Smallest delta in [0, delta_max] whose replayed FRR is at most the target.

    FRR is non-increasing in delta, so bisection applies.
    """
    if not 0.0 < target_frr < 1.0:
        raise CalibrationError("target FRR must be in (0, 1)")
    mask = log.tree_move_mask()
    sub = log.subset(mask)
    pred = np.asarray(predicted, dtype=float)[mask] if len(predicted) == len(log) else np.asarray(predicted)
    if len(sub) == 0:
        raise CalibrationError("no tree-move rows to calibrate on")

    def frr(d):
        return replay_rates(sub, pred, d, kappa)["frr"]

    it = 0
    if frr(0.0) <= target_frr:
        d, reachable = 0.0, True
    elif frr(delta_max) > target_frr:
        d, reachable = delta_max, False
    else:
        lo, hi = 0.0, delta_max
        while hi - lo > tol and it < 100:
            it += 1
            mid = 0.5 * (lo + hi)
            if frr(mid) <= target_frr:
                hi = mid
            else:
                lo = mid
        d, reachable = hi, True
    rates = replay_rates(sub, pred, d, kappa)
    return DeltaSelection(d, rates["frr"], rates["far"], rates["bypass_fraction"], target_frr, reachable, it, len(sub))


def grid_search_forest(log: TrainingLog, grid: list, test_fraction: float = 0.1, seed: int = 0) -> tuple:
    """Holdout MSE per forest config; winner by MSE, ties to fewer trees then shallower."""
    if not grid:
        raise CalibrationError("empty grid")
    if len(log) < 500:
        raise CalibrationError("grid search needs at least 500 logged rows")
    report = []
    for cfg in grid:
        _, m, _ = train_surrogate(log, cfg, test_fraction, seed)
        report.append({"n_trees": cfg.n_trees, "max_depth": cfg.max_depth, "mtry": cfg.mtry,
                       "min_leaf_size": cfg.min_leaf_size, "mse": m["mse"], "r2": m["r2"]})
    depth_key = lambda d: math.inf if d == 0 else d
    best = min(range(len(grid)), key=lambda i: (report[i]["mse"], grid[i].n_trees, depth_key(grid[i].max_depth)))
    return grid[best], report


@dataclass
class CalibrationResult:
    reference: ReferenceDistribution
    selection: DeltaSelection
    forest_metrics: dict

    def da_config(self, kappa: float = -math.inf) -> DAConfig:
        return DAConfig(kappa=kappa, delta=self.selection.delta)

    def to_dict(self):
        return {"reference": self.reference.to_dict(), "delta": self.selection.to_dict(),
                "forest": self.forest_metrics}

    @classmethod
    def from_dict(cls, d: dict, taxa=None) -> "CalibrationResult":
        return cls(ReferenceDistribution.from_dict(d["reference"], taxa), DeltaSelection(**d["delta"]),
                   dict(d.get("forest", {})))


def holdout_rows(log: TrainingLog, test_fraction: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Train/holdout split of the tree-move rows (row indices into ``log``)."""
    rows = np.flatnonzero(log.tree_move_mask())
    tr, te = train_test_split(len(rows), test_fraction, seed)
    return rows[tr], rows[te]


def select_delta_for_forest(log: TrainingLog, forest: RegressionForest, target_frr: float,
                            kappa: float = -math.inf, test_fraction: float = 0.1, seed: int = 0) -> DeltaSelection:
    """Pick delta on the rows held out when ``forest`` was trained with the same seed."""
    _, te = holdout_rows(log, test_fraction, seed)
    held = log.subset(te)
    return select_delta(held, forest.predict(held.features), target_frr, kappa)


def calibrate(log: TrainingLog, family: str, forest_config: ForestConfig, target_frr: float = 0.1,
              kappa: float = -math.inf, prior: PriorSpec | None = None, seed: int = 0,
              test_fraction: float = 0.1):
    """Train the surrogate on the training rows and pick delta on the held-out rows."""
    forest, metrics, _ = train_surrogate(log, forest_config, test_fraction, seed)
    sel = select_delta_for_forest(log, forest, target_frr, kappa, test_fraction, seed)
    ref = fit_reference(log.late_samples, family, prior)
    return forest, CalibrationResult(ref, sel, metrics)


@dataclass
class PipelineResult:
    """Everything produced by pilot -> train -> calibrate -> DA-SMC."""

    result: SMCResult
    pilot: SMCResult
    log: TrainingLog
    forest: RegressionForest
    calibration: CalibrationResult


def run_da_pipeline(problem, config: SMCConfig, pilot_config: SMCConfig, forest_config: ForestConfig,
                    target_frr: float = 0.05, kappa: float = -math.inf, delta: float | None = None,
                    test_fraction: float = 0.1) -> PipelineResult:
    """Pilot ASMC, surrogate training, delta and reference calibration, then DA-SMC.

    ``delta`` overrides the calibrated value when given.
    """
    from .kernel import ForestSurrogate

    log, pilot = run_pilot(problem, pilot_config)
    forest, cal = calibrate(log, problem.family, forest_config, target_frr, kappa, problem.prior,
                            forest_config.seed, test_fraction)
    da = cal.da_config(kappa) if delta is None else DAConfig(kappa=kappa, delta=delta)
    cfg = replace(config, mode="da", da=da)
    result = run_smc(problem.with_reference(cal.reference), cfg, surrogate=ForestSurrogate(forest))
    return PipelineResult(result, pilot, log, forest, cal)
