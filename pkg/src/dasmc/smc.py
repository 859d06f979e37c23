"""Annealed SMC with adaptive tempering, optionally using delayed-acceptance moves.

Particle ``k`` at iteration ``r`` draws all of its randomness from
``default_rng([seed, STREAM_MOVE, r, k])`` and resampling at iteration ``r``
from ``default_rng([seed, STREAM_RESAMPLE, r])``, so results do not depend on
how particles are split across worker processes.
"""
from __future__ import annotations

import json
import math
import multiprocessing as mp
import os
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kernel import DAConfig, Stage, classical_mh_step, da_step
from .moves import MoveKind
from .problem import ParticleState
from .tree import TreeSampleSet

STREAM_INIT = 0
STREAM_MOVE = 1
STREAM_RESAMPLE = 2

WORKERS_ENV = "DASMC_WORKERS"


class SMCError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Weight utilities
# ---------------------------------------------------------------------------

def normalize_log_weights(lw) -> np.ndarray:
    lw = np.asarray(lw, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise SMCError("all weights are zero")
    return np.exp(lw - logsumexp(lw))


def ress(weights) -> float:
    """Relative effective sample size 1 / (K sum W^2) of (unnormalized) weights."""
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if not s > 0:
        raise SMCError("all weights are zero")
    W = w / s
    return float(1.0 / (len(W) * np.dot(W, W)))


def rcess(W, y, dphi: float) -> float:
    """Relative conditional ESS of incremental weights exp(dphi * y) under W."""
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(y))):
        raise SMCError("non-finite input to rCESS")
    if dphi == 0.0:
        return 1.0
    with np.errstate(divide="ignore"):
        lW = np.log(W)
    a = dphi * y
    return float(math.exp(2.0 * logsumexp(lW + a) - logsumexp(lW + 2.0 * a)))


def next_phi(W, y, phi: float, alpha: float, tol: float = 1e-10, width: float = 1e-12) -> float:
    """Solve rCESS(phi') = alpha on [phi, 1] by bisection (clamped to 1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if phi >= 1.0 or rcess(W, y, 1.0 - phi) >= alpha:
        return 1.0
    lo, hi = phi, 1.0
    best, best_err = hi, math.inf
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        f = rcess(W, y, mid - phi) - alpha
        if abs(f) < best_err and mid > phi:
            best, best_err = mid, abs(f)
        if abs(f) < tol:
            return mid
        if f > 0:
            lo = mid
        else:
            hi = mid
    return best


def resample_indices(W, scheme: str, rng: np.random.Generator) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    W = W / W.sum()
    K = len(W)
    cdf = np.cumsum(W)
    cdf[-1] = 1.0
    if scheme == "multinomial":
        u = rng.random(K)
    elif scheme == "systematic":
        u = (rng.random() + np.arange(K)) / K
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cdf, u, side="right"), K - 1)


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------

@dataclass
class SMCConfig:
    """Sampler settings.

    ``mode`` is "asmc" (exact MH moves) or "da" (delayed acceptance).  When
    ``beta`` is set it overrides ``alpha`` as ``alpha = 1 - 10 ** -beta``.
    A fixed ``schedule`` (0 = phi_0 < ... < 1) replaces adaptive tempering.
    """

    n_particles: int = 100
    alpha: float = 0.999
    beta: float | None = None
    ess_threshold: float = 0.5
    n_sweeps: int = 1
    resampling: str = "multinomial"
    mode: str = "asmc"
    da: DAConfig = field(default_factory=DAConfig)
    seed: int = 0
    workers: int = 0
    schedule: list | None = None
    max_iterations: int = 100000
    log_moves: bool = False
    late_phi: float = 0.9

    def __post_init__(self):
        if self.beta is not None:
            self.alpha = 1.0 - 10.0 ** (-self.beta)
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.mode not in ("asmc", "da"):
            raise ValueError("mode must be 'asmc' or 'da'")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError("resampling must be 'multinomial' or 'systematic'")
        if self.schedule is not None:
            s = [float(x) for x in self.schedule]
            if s[0] != 0.0 or s[-1] != 1.0 or any(b <= a for a, b in zip(s, s[1:])):
                raise ValueError("schedule must increase strictly from 0 to 1")
            self.schedule = s

    def resolved_workers(self) -> int:
        if self.workers and self.workers > 0:
            return self.workers
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))

    def to_dict(self):
        return {
            "n_particles": self.n_particles, "alpha": self.alpha, "beta": self.beta,
            "ess_threshold": self.ess_threshold, "n_sweeps": self.n_sweeps, "resampling": self.resampling,
            "mode": self.mode, "da": self.da.to_dict(), "seed": self.seed,
            "schedule": "fixed" if self.schedule is not None else "adaptive",
        }


@dataclass
class SMCResult:
    particles: list
    log_weights: np.ndarray
    log_z: float
    schedule: list
    diagnostics: list
    totals: dict
    move_log: list
    late_samples: list

    @property
    def weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)

    def tree_samples(self) -> TreeSampleSet:
        return TreeSampleSet([p.tree for p in self.particles], self.weights)

    def write_samples(self, path) -> None:
        W = self.weights
        with open(path, "w") as fh:
            fh.write("weight\tlog_likelihood\tparams\tnewick\n")
            for w, p in zip(W, self.particles):
                fh.write(f"{float(w)!r}\t{float(p.log_lik)!r}\t{json.dumps(p.params.to_dict(), sort_keys=True)}\t{p.tree.to_newick()}\n")

    def write_diagnostics(self, path) -> None:
        import csv

        if not self.diagnostics:
            return
        cols = list(self.diagnostics[0].keys())
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.diagnostics:
                w.writerow(row)


def read_samples(path, taxa=None) -> list:
    """Rows of a samples file as (weight, log_likelihood, params, tree)."""
    from .models import ModelParams
    from .tree import parse_newick

    out = []
    with open(path) as fh:
        header = next(fh, "").rstrip("\n").split("\t")
        if header != ["weight", "log_likelihood", "params", "newick"]:
            raise ValueError(f"{path}: not a samples file")
        for line in fh:
            if not line.strip():
                continue
            w, ll, params, nwk = line.rstrip("\n").split("\t")
            out.append((float(w), float(ll), ModelParams.from_dict(json.loads(params)), parse_newick(nwk, taxa=taxa)))
    return out


# ---------------------------------------------------------------------------
# Propagation (runs in worker processes)
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(problem, surrogate, config):
    _WORKER["problem"] = problem
    _WORKER["surrogate"] = surrogate
    _WORKER["config"] = config


def propagate(problem, surrogate, config: SMCConfig, states, ks, r: int, phi: float):
    """Apply ``config.n_sweeps`` kernel steps to each state.

    Returns (new states, per-step summaries, logged rows, likelihood seconds).
    """
    t0 = problem.engine.eval_seconds
    rngs = [np.random.default_rng([config.seed, STREAM_MOVE, r, k]) for k in ks]
    states = list(states)
    summaries = []
    rows = []
    da_mode = config.mode == "da"
    for sweep in range(config.n_sweeps):
        moves = [problem.propose(s, rng) for s, rng in zip(states, rngs)]
        if da_mode:
            idx = [i for i, m in enumerate(moves) if MoveKind(m.descriptor.kind).is_tree_move]
            preds = np.full(len(moves), math.nan)
            if idx:
                preds[idx] = surrogate.predict(problem, [states[i] for i in idx], [moves[i] for i in idx])
        for i, (move, rng) in enumerate(zip(moves, rngs)):
            if da_mode:
                new, rec = da_step(problem, states[i], move, phi, float(preds[i]), config.da, rng)
            else:
                new, rec = classical_mh_step(problem, states[i], move, phi, rng)
            summaries.append((rec.kind, int(rec.stage)))
            if config.log_moves and rec.evaluated:
                rows.append((r, sweep, ks[i], move.features, rec))
            states[i] = new
    return states, summaries, rows, problem.engine.eval_seconds - t0


def _work(args):
    states, ks, r, phi = args
    return propagate(_WORKER["problem"], _WORKER["surrogate"], _WORKER["config"], states, ks, r, phi)


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(bounds[i], bounds[i + 1]) for i in range(parts)]


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run_smc(problem, config: SMCConfig, surrogate=None, progress=None) -> SMCResult:
    """Run annealed SMC from the start of the path (phi = 0) to the posterior.

    Parameters
    ----------
    problem : PhyloProblem or compatible target
    config : SMCConfig
    surrogate : object with ``predict(problem, states, moves)``, required in DA mode
    progress : callable(dict), optional
        Called with each iteration's diagnostics row.
    """
    if config.mode == "da" and surrogate is None:
        raise ValueError("delayed-acceptance mode needs a surrogate")
    K = config.n_particles
    workers = config.resolved_workers()
    t_start = time.perf_counter()

    states = []
    lw = np.empty(K)
    for k in range(K):
        s, w = problem.sample_initial(np.random.default_rng([config.seed, STREAM_INIT, 0, k]))
        states.append(s)
        lw[k] = w
    log_z = float(logsumexp(lw) - math.log(K))
    init_seconds = time.perf_counter() - t_start

    pool = None
    if workers > 1:
        ctx = mp.get_context("fork")
        pool = ctx.Pool(workers, initializer=_init_worker, initargs=(problem, surrogate, config))
    phi = 0.0
    schedule = [0.0]
    diagnostics = []
    move_log = []
    late = []
    totals = Counter()
    stage_seconds = Counter()
    r = 0
    try:
        while phi < 1.0:
            r += 1
            if r > config.max_iterations:
                raise SMCError("maximum number of SMC iterations exceeded")
            t_it = time.perf_counter()
            W = normalize_log_weights(lw)
            y = np.array([s.log_base - s.log_ref for s in states])
            if not np.all(np.isfinite(y)):
                raise SMCError("non-finite incremental weight")
            if config.schedule is not None:
                if r >= len(config.schedule):
                    raise SMCError("fixed schedule exhausted")
                new_phi = config.schedule[r]
            else:
                new_phi = next_phi(W, y, phi, config.alpha)
            if not new_phi > phi:
                raise SMCError(f"annealing stalled at phi={phi!r}")
            dphi = new_phi - phi
            inc = dphi * y
            rc = rcess(W, y, dphi)
            with np.errstate(divide="ignore"):
                log_z += float(logsumexp(np.log(W) + inc))
            lw = lw + inc
            phi = new_phi
            schedule.append(phi)
            stage_seconds["schedule_and_weights"] += time.perf_counter() - t_it

            t_prop = time.perf_counter()
            ks = list(range(K))
            if pool is None:
                states, summaries, rows, lik_s = propagate(problem, surrogate, config, states, ks, r, phi)
                results = [(states, summaries, rows, lik_s)]
            else:
                jobs = [(states[a:b], ks[a:b], r, phi) for a, b in _chunks(K, workers)]
                results = pool.map(_work, jobs)
                states = [s for res in results for s in res[0]]
            stage_seconds["propagation_wall"] += time.perf_counter() - t_prop
            stage_seconds["likelihood_cpu"] += sum(res[3] for res in results)

            counts = Counter()
            for res in results:
                for kind, stage in res[1]:
                    counts[("stage", stage)] += 1
                    counts[("kind", kind)] += 1
                    if stage == Stage.ACCEPT:
                        counts[("acc", kind)] += 1
                if config.log_moves:
                    move_log.extend(res[2])
            n_prop = sum(v for (t, _), v in counts.items() if t == "stage")
            n_eval = counts[("stage", Stage.ACCEPT)] + counts[("stage", Stage.STAGE2_REJECT)]
            n_acc = counts[("stage", Stage.ACCEPT)]

            t_rs = time.perf_counter()
            W_now = normalize_log_weights(lw)
            ess_now = float(1.0 / (K * np.dot(W_now, W_now)))
            resampled = ess_now < config.ess_threshold
            if phi > config.late_phi:
                late.append([(s, float(w)) for s, w in zip(states, W_now)])
            if resampled:
                idx = resample_indices(W_now, config.resampling, np.random.default_rng([config.seed, STREAM_RESAMPLE, r]))
                states = [states[i] for i in idx]
                lw = np.zeros(K)
            stage_seconds["resampling"] += time.perf_counter() - t_rs

            row = {
                "iteration": r, "phi": phi, "rcess": rc, "ress": ess_now, "resampled": int(resampled),
                "proposals": n_prop, "evaluations": n_eval, "accepted": n_acc,
                "acceptance_rate": n_acc / n_prop if n_prop else 0.0,
                "bypass_fraction": 1.0 - n_eval / n_prop if n_prop else 0.0,
                "gate_rejects": counts[("stage", Stage.GATE_REJECT)],
                "stage1_rejects": counts[("stage", Stage.STAGE1_REJECT)],
                "stage2_rejects": counts[("stage", Stage.STAGE2_REJECT)],
                "log_z": log_z,
            }
            for kind in MoveKind:
                nk = counts[("kind", int(kind))]
                if nk:
                    row[f"accept_{kind.label}"] = counts[("acc", int(kind))] / nk
            diagnostics.append(row)
            for key in ("proposals", "evaluations", "accepted", "gate_rejects", "stage1_rejects", "stage2_rejects"):
                totals[key] += row[key]
            if progress is not None:
                progress(row)
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    totals = dict(totals)
    totals["iterations"] = r
    totals["resampling_events"] = sum(d["resampled"] for d in diagnostics)
    totals["bypass_fraction"] = 1.0 - totals.get("evaluations", 0) / totals["proposals"] if totals.get("proposals") else 0.0
    totals["wall_seconds"] = time.perf_counter() - t_start
    totals["init_seconds"] = init_seconds
    totals.update({f"{k}_seconds": v for k, v in stage_seconds.items()})
    totals["workers"] = workers
    # standardize the keys of diagnostics rows so the CSV has one header
    keys = []
    for d in diagnostics:
        for k in d:
            if k not in keys:
                keys.append(k)
    diagnostics = [{k: d.get(k, "") for k in keys} for d in diagnostics]
    return SMCResult(states, lw, log_z, schedule, diagnostics, totals, move_log, late)
