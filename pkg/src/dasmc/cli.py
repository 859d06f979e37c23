"""Command-line pipeline: simulate, pilot, train, calibrate, infer, evaluate, model-select.

Every subcommand reads one JSON config (``--config``), applies flag
overrides, validates the result and writes its artifacts plus a
``manifest.json`` into the output directory.  Stages communicate through
files, so each one can be rerun from the previous stage's outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import platform
import sys
import traceback
from pathlib import Path

import numpy as np

from .alignment import AlignmentError, compress_patterns, read_alignment, write_fasta
from .calibration import (CalibrationError, CalibrationResult, TrainingLog, fit_reference, read_late_samples,
                          run_da_pipeline, run_pilot, select_delta_for_forest, train_surrogate,
                          write_late_samples)
from .forest import ForestConfig, ForestError, KindForests, load_forest, save_forest
from .kernel import DAConfig, ForestSurrogate
from .likelihood import log_likelihood
from .models import ModelError, ModelParams, PriorSpec, simulate_alignment
from .moves import MoveKind, ProposalConfig
from .problem import PhyloProblem
from .smc import SMCConfig, SMCError, WORKERS_ENV, read_samples, run_smc
from .tree import (TreeError, TreeSampleSet, branch_score_distance, majority_rule_consensus, partition_metric,
                   read_newick_file, sample_random_tree, write_split_table)

log = logging.getLogger("dasmc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FAMILIES = ("JC69", "K2P", "GTR")

_PROPOSALS = ProposalConfig()
DEFAULTS = {
    "seed": 0,
    "workers": 0,
    "output": "dasmc_out",
    "family": "K2P",
    "data": {"alignment": None, "truth": None, "samples": None, "training_log": None,
             "late_samples": None, "forest": None, "calibration": None},
    "simulate": {"n_taxa": 30, "n_sites": 2000, "family": "K2P", "kappa": 2.0, "rates": None, "freqs": None,
                 "branch_rate": 10.0},
    "prior": PriorSpec().to_dict(),
    "proposals": {"p_extend": _PROPOSALS.p_extend, "multiplier_lambda": _PROPOSALS.multiplier_lambda,
                  "global_lambda": _PROPOSALS.global_lambda, "kappa_lambda": _PROPOSALS.kappa_lambda,
                  "dirichlet_concentration": _PROPOSALS.dirichlet_concentration, "weights": {}},
    "smc": {"mode": "asmc", "n_particles": 100, "alpha": 0.999, "beta": None, "ess_threshold": 0.5,
            "n_sweeps": 1, "resampling": "multinomial", "max_iterations": 100000},
    "pilot": {"n_particles": None, "alpha": None},  # defaults: main K / 5 and the main alpha
    "forest": {"n_trees": 300, "max_depth": 0, "min_leaf_size": 5, "mtry": 0, "bootstrap": True,
               "per_kind": False, "test_fraction": 0.1},
    "da": {"kappa": None, "delta": None, "target_frr": 0.05},
    "model_select": {"families": ["K2P", "JC69", "GTR"]},
}
# sections whose values are free-form mappings
_FREE = {("proposals", "weights")}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def _merge(base: dict, override: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(path + (key,))!r}")
        if isinstance(base[key], dict) and path + (key,) not in _FREE:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {'.'.join(path + (key,))!r} must be an object")
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = copy.deepcopy(val)
    return out


def _set_path(cfg: dict, dotted: str, value):
    node = cfg
    *head, last = dotted.split(".")
    for k in head:
        node = node[k]
    node[last] = value


def load_config(path, overrides: dict) -> dict:
    user = {}
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, user)
    for dotted, value in overrides.items():
        if value is not None:
            _set_path(cfg, dotted, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Type and range checks; every dataclass built later must also succeed."""
    def check(cond, msg):
        if not cond:
            raise ConfigError(msg)

    check(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a non-negative integer")
    check(isinstance(cfg["workers"], int) and cfg["workers"] >= 0, "workers must be a non-negative integer")
    check(cfg["family"] in FAMILIES, f"family must be one of {FAMILIES}")
    sim = cfg["simulate"]
    check(isinstance(sim["n_taxa"], int) and sim["n_taxa"] >= 3, "simulate.n_taxa must be an integer >= 3")
    check(isinstance(sim["n_sites"], int) and sim["n_sites"] >= 1, "simulate.n_sites must be a positive integer")
    check(sim["family"] in FAMILIES, "simulate.family must be JC69, K2P or GTR")
    check(cfg["smc"]["mode"] in ("asmc", "da"), "smc.mode must be 'asmc' or 'da'")
    frr = cfg["da"]["target_frr"]
    check(isinstance(frr, (int, float)) and 0 < frr < 1, "da.target_frr must be in (0, 1)")
    check(0 < cfg["forest"]["test_fraction"] < 1, "forest.test_fraction must be in (0, 1)")
    check(all(f in FAMILIES for f in cfg["model_select"]["families"]), "model_select.families: unknown family")
    try:
        prior_spec(cfg), proposal_config(cfg), pilot_config(cfg), forest_config(cfg), da_config(cfg)
        simulation_params(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def prior_spec(cfg) -> PriorSpec:
    return PriorSpec.from_dict(cfg["prior"])


def proposal_config(cfg) -> ProposalConfig:
    return ProposalConfig(**cfg["proposals"])


def smc_config(cfg, **changes) -> SMCConfig:
    s = dict(cfg["smc"])
    s.update(changes)
    return SMCConfig(seed=cfg["seed"], workers=cfg["workers"], da=da_config(cfg), **s)


def pilot_config(cfg) -> SMCConfig:
    main = smc_config(cfg)
    p = cfg["pilot"]
    n = p["n_particles"] if p["n_particles"] is not None else max(10, main.n_particles // 5)
    alpha = p["alpha"] if p["alpha"] is not None else main.alpha
    return smc_config(cfg, mode="asmc", n_particles=n, alpha=alpha, beta=None)


def forest_config(cfg) -> ForestConfig:
    f = {k: v for k, v in cfg["forest"].items() if k != "test_fraction"}
    return ForestConfig(seed=cfg["seed"], **f)


def da_config(cfg, delta: float | None = None) -> DAConfig:
    d = cfg["da"]
    kappa = -math.inf if d["kappa"] is None else float(d["kappa"])
    if delta is None:
        delta = 0.0 if d["delta"] is None else float(d["delta"])
    if delta < 0:
        raise ValueError("da.delta must be non-negative")
    return DAConfig(kappa=kappa, delta=delta)


def simulation_params(cfg) -> ModelParams:
    sim = cfg["simulate"]
    if sim["family"] == "K2P":
        return ModelParams.k2p(float(sim["kappa"]))
    if sim["family"] == "GTR":
        return ModelParams.gtr(sim["rates"] or (1.0,) * 6, sim["freqs"] or (0.25,) * 4)
    return ModelParams.jc69()


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {"dasmc": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def write_manifest(out: Path, command: str, cfg: dict, artifacts: list[str], inputs: dict | None = None) -> None:
    """Add this command's entry to ``out/manifest.json``.

    Wall-clock timings live in ``timings*.json`` and are listed but not hashed.
    """
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            manifest = {}
    manifest[command] = {
        "config": cfg,
        "artifacts": {name: _sha256(out / name) for name in sorted(artifacts)},
        "inputs": {k: _sha256(Path(v)) for k, v in sorted((inputs or {}).items()) if v},
        "versions": _versions(),
    }
    write_json(path, manifest)


def _resolve(cfg: dict, key: str, out: Path, default_name: str, required: bool = True) -> Path | None:
    """Input artifact from ``data.<key>`` or, failing that, from the output directory."""
    given = cfg["data"][key]
    path = Path(given) if given else out / default_name
    if not path.exists():
        if required:
            raise DataError(f"missing input {key!r}: {path} does not exist")
        return None
    return path


def _load_alignment(cfg):
    path = cfg["data"]["alignment"]
    if not path:
        raise ConfigError("data.alignment is required")
    if not Path(path).exists():
        raise DataError(f"alignment {path} does not exist")
    return read_alignment(path), Path(path)


def _problem(cfg, aln, family=None, reference=None) -> PhyloProblem:
    return PhyloProblem(aln, family or cfg["family"], prior_spec(cfg), proposal_config(cfg), reference)


def _progress(row):
    if row["iteration"] % 50 == 0 or row["phi"] >= 1.0:
        log.info("iteration %d  phi=%.6g  logZ=%.3f  acc=%.3f  bypass=%.3f", row["iteration"], row["phi"],
                 row["log_z"], row["acceptance_rate"], row["bypass_fraction"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, out: Path) -> int:
    sim = cfg["simulate"]
    rng = np.random.default_rng([cfg["seed"], 100])
    taxa = [f"t{i + 1}" for i in range(sim["n_taxa"])]
    truth = sample_random_tree(taxa, float(sim["branch_rate"]), rng)
    params = simulation_params(cfg)
    aln = simulate_alignment(truth, params, sim["n_sites"], rng)
    (out / "truth.nwk").write_text(truth.to_newick() + "\n")
    write_fasta(aln, out / "alignment.fasta")
    write_json(out / "truth_params.json", params.to_dict())
    write_manifest(out, "simulate", cfg, ["truth.nwk", "alignment.fasta", "truth_params.json"])
    log.info("simulated %d taxa x %d sites under %s", sim["n_taxa"], sim["n_sites"], params.family)
    return EXIT_OK


def cmd_pilot(cfg, out: Path) -> int:
    aln, aln_path = _load_alignment(cfg)
    problem = _problem(cfg, aln)
    pcfg = pilot_config(cfg)
    training, result = run_pilot(problem, pcfg)
    training.write_csv(out / "training_log.csv")
    write_late_samples(training.late_samples, out / "late_samples.tsv")
    summary = {"log_z": result.log_z, "iterations": len(result.schedule) - 1, "rows": len(training),
               "late_samples": len(training.late_samples)}
    write_json(out / "pilot_summary.json", summary)
    write_json(out / "timings_pilot.json", result.totals)
    write_manifest(out, "pilot", cfg, ["training_log.csv", "late_samples.tsv", "pilot_summary.json"],
                   {"alignment": aln_path})
    log.info("pilot logged %d moves over %d iterations", len(training), summary["iterations"])
    return EXIT_OK


def _read_log(cfg, out):
    path = _resolve(cfg, "training_log", out, "training_log.csv")
    return TrainingLog.read_csv(path), path


def cmd_train(cfg, out: Path) -> int:
    training, log_path = _read_log(cfg, out)
    forest, metrics, _ = train_surrogate(training, forest_config(cfg), cfg["forest"]["test_fraction"], cfg["seed"])
    save_forest(forest, out / "forest.dapf")
    if isinstance(forest, KindForests):
        importance = {MoveKind(k).label: f.importance_table() for k, f in forest.forests.items()}
    else:
        importance = forest.importance_table()
    report = {"holdout": metrics, "importance": importance}
    write_json(out / "train_metrics.json", report)
    write_manifest(out, "train", cfg, ["forest.dapf", "train_metrics.json"], {"training_log": log_path})
    log.info("forest holdout R2=%.4f RMSE=%.4g", metrics["r2"], metrics["rmse"])
    return EXIT_OK


def cmd_calibrate(cfg, out: Path) -> int:
    training, log_path = _read_log(cfg, out)
    forest_path = _resolve(cfg, "forest", out, "forest.dapf")
    forest = load_forest(forest_path)
    late_path = _resolve(cfg, "late_samples", out, "late_samples.tsv")
    late = read_late_samples(late_path)
    kappa = da_config(cfg).kappa
    sel = select_delta_for_forest(training, forest, cfg["da"]["target_frr"], kappa,
                                  cfg["forest"]["test_fraction"], cfg["seed"])
    reference = fit_reference(late, cfg["family"], prior_spec(cfg))
    result = CalibrationResult(reference, sel, {})
    write_json(out / "calibration.json", result.to_dict())
    write_manifest(out, "calibrate", cfg, ["calibration.json"],
                   {"training_log": log_path, "forest": forest_path, "late_samples": late_path})
    log.info("delta=%.6g achieved FRR=%.4f bypass=%.3f", sel.delta, sel.frr, sel.bypass_fraction)
    return EXIT_OK


def _write_inference(out: Path, result, prefix: str = "") -> dict:
    samples = result.tree_samples()
    consensus = majority_rule_consensus(samples)
    result.write_samples(out / f"{prefix}samples.tsv")
    result.write_diagnostics(out / f"{prefix}diagnostics.csv")
    write_split_table(samples, out / f"{prefix}splits.csv")
    (out / f"{prefix}consensus.nwk").write_text(consensus.to_newick() + "\n")
    deterministic = {k: v for k, v in result.totals.items() if not k.endswith("_seconds") and k != "workers"}
    summary = {"log_z": result.log_z, "iterations": len(result.schedule) - 1, "totals": deterministic,
               "bypass_fraction": result.totals.get("bypass_fraction", 0.0),
               "likelihood_evaluations": result.totals.get("evaluations", 0)}
    write_json(out / f"{prefix}summary.json", summary)
    write_json(out / f"timings_{prefix}infer.json", result.totals)
    return summary


def cmd_infer(cfg, out: Path) -> int:
    aln, aln_path = _load_alignment(cfg)
    inputs = {"alignment": aln_path}
    surrogate, reference, delta = None, None, None
    if cfg["smc"]["mode"] == "da":
        forest_path = _resolve(cfg, "forest", out, "forest.dapf")
        cal_path = _resolve(cfg, "calibration", out, "calibration.json")
        surrogate = ForestSurrogate(load_forest(forest_path))
        cal = CalibrationResult.from_dict(json.loads(cal_path.read_text()), taxa=aln.taxa)
        reference = cal.reference
        delta = cal.selection.delta if cfg["da"]["delta"] is None else None
        inputs.update(forest=forest_path, calibration=cal_path)
    problem = _problem(cfg, aln, reference=reference)
    scfg = smc_config(cfg)
    scfg.da = da_config(cfg, delta)
    result = run_smc(problem, scfg, surrogate=surrogate, progress=_progress)
    summary = _write_inference(out, result)
    names = ["samples.tsv", "diagnostics.csv", "splits.csv", "consensus.nwk", "summary.json"]
    write_manifest(out, "infer", cfg, names, inputs)
    log.info("log Z = %.6f, bypass fraction %.3f", summary["log_z"], summary["bypass_fraction"])
    return EXIT_OK


def evaluate_samples(samples, aln, truth=None) -> dict:
    """ConsensusLL, BestLL and (with a truth tree) PM and branch-score distance.

    ConsensusLL scores the resolved majority-rule tree (mean split lengths)
    under the posterior-mean model parameters.
    """
    if not samples:
        raise DataError("no samples to evaluate")
    w = np.array([s[0] for s in samples], dtype=float)
    w = w / w.sum()
    patterns = compress_patterns(aln)
    trees = [s[3] for s in samples]
    consensus = majority_rule_consensus(TreeSampleSet(trees, w))
    resolved = consensus.resolved_tree()
    params = _posterior_mean_params([s[2] for s in samples], w)
    metrics = {
        "n_samples": len(samples),
        "ess": float(1.0 / np.dot(w, w)),
        "consensus_ll": log_likelihood(resolved, params, patterns),
        "best_ll": float(max(s[1] for s in samples)),
        "consensus_params": params.to_dict(),
        "consensus": consensus.to_newick(),
    }
    if truth is not None:
        metrics["pm"] = partition_metric(resolved, truth)
        metrics["branch_score"] = branch_score_distance(resolved, truth)
        metrics["truth_ll"] = log_likelihood(truth, params, patterns)
    return metrics


def _posterior_mean_params(params, w) -> ModelParams:
    fam = params[0].family
    if any(p.family != fam for p in params):
        raise DataError("samples mix model families")
    if fam == "K2P":
        return ModelParams.k2p(float(np.dot(w, [p.kappa for p in params])))
    if fam == "GTR":
        return ModelParams.gtr(w @ np.array([p.rates for p in params]), w @ np.array([p.freqs for p in params]))
    return ModelParams.jc69()


def cmd_evaluate(cfg, out: Path) -> int:
    aln, aln_path = _load_alignment(cfg)
    samples_path = _resolve(cfg, "samples", out, "samples.tsv")
    try:
        samples = read_samples(samples_path, taxa=aln.taxa)
    except TreeError as exc:
        raise DataError(f"{samples_path}: {exc}") from None
    inputs = {"alignment": aln_path, "samples": samples_path}
    truth = None
    if cfg["data"]["truth"]:
        truth_path = Path(cfg["data"]["truth"])
        if not truth_path.exists():
            raise DataError(f"truth tree {truth_path} does not exist")
        trees = read_newick_file(truth_path, taxa=aln.taxa)
        if not trees:
            raise DataError(f"{truth_path} holds no tree")
        truth = trees[0]
        inputs["truth"] = truth_path
    metrics = evaluate_samples(samples, aln, truth)
    write_json(out / "metrics.json", metrics)
    write_manifest(out, "evaluate", cfg, ["metrics.json"], inputs)
    log.info("ConsensusLL=%.4f BestLL=%.4f%s", metrics["consensus_ll"], metrics["best_ll"],
             f" PM={metrics['pm']}" if truth is not None else "")
    return EXIT_OK


def cmd_model_select(cfg, out: Path) -> int:
    """Same data and seed for every family; DA mode runs a pilot per family."""
    aln, aln_path = _load_alignment(cfg)
    families = cfg["model_select"]["families"]
    rows = []
    artifacts = []
    for fam in families:
        problem = _problem(cfg, aln, family=fam)
        scfg = smc_config(cfg)
        if scfg.mode == "da":
            pcfg = pilot_config(cfg)
            run = run_da_pipeline(problem, scfg, pcfg, forest_config(cfg), cfg["da"]["target_frr"], scfg.da.kappa,
                                  cfg["da"]["delta"], cfg["forest"]["test_fraction"])
            result = run.result
        else:
            result = run_smc(problem, scfg, progress=_progress)
        prefix = f"{fam}_"
        _write_inference(out, result, prefix)
        artifacts += [f"{prefix}{n}" for n in ("samples.tsv", "diagnostics.csv", "splits.csv", "consensus.nwk",
                                               "summary.json")]
        rows.append({"family": fam, "log_z": result.log_z})
        log.info("%s: log Z = %.4f", fam, result.log_z)
    first = rows[0]
    table = {"models": rows, "differences": [
        {"pair": f"{first['family']}-{r['family']}", "log_bayes_factor": first["log_z"] - r["log_z"]} for r in rows[1:]
    ]}
    write_json(out / "model_selection.json", table)
    write_manifest(out, "model-select", cfg, artifacts + ["model_selection.json"], {"alignment": aln_path})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "pilot": cmd_pilot, "train": cmd_train, "calibrate": cmd_calibrate,
    "infer": cmd_infer, "evaluate": cmd_evaluate, "model-select": cmd_model_select,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", dest="output", help="output directory")
    common.add_argument("--seed", dest="seed", type=_nonneg_int)
    common.add_argument("--workers", dest="workers", type=_nonneg_int,
                        help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    common.add_argument("--family", dest="family", choices=FAMILIES)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dasmc", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("simulate", "simulate a random tree and an alignment")
    p.add_argument("--n-taxa", dest="simulate.n_taxa", type=int)
    p.add_argument("--n-sites", dest="simulate.n_sites", type=int)
    p.add_argument("--sim-family", dest="simulate.family", choices=FAMILIES)
    p.add_argument("--kappa", dest="simulate.kappa", type=float)

    smc_flags = argparse.ArgumentParser(add_help=False)
    smc_flags.add_argument("--alignment", dest="data.alignment")
    smc_flags.add_argument("--particles", dest="smc.n_particles", type=int)
    smc_flags.add_argument("--alpha", dest="smc.alpha", type=float)
    smc_flags.add_argument("--beta", dest="smc.beta", type=float)

    p = sub.add_parser("pilot", parents=[common], help="logged ASMC pilot run")
    p.add_argument("--alignment", dest="data.alignment")
    p.add_argument("--particles", dest="pilot.n_particles", type=int)
    p.add_argument("--alpha", dest="pilot.alpha", type=float)

    p = add("train", "fit the surrogate forest on a pilot log")
    p.add_argument("--log", dest="data.training_log")
    p.add_argument("--trees", dest="forest.n_trees", type=int)

    p = add("calibrate", "choose delta and fit the reference distribution")
    p.add_argument("--log", dest="data.training_log")
    p.add_argument("--forest", dest="data.forest")
    p.add_argument("--late-samples", dest="data.late_samples")
    p.add_argument("--target-frr", dest="da.target_frr", type=float)
    p.add_argument("--kappa-gate", dest="da.kappa", type=float)

    p = sub.add_parser("infer", parents=[common, smc_flags], help="run ASMC or DA-SMC")
    p.add_argument("--mode", dest="smc.mode", choices=("asmc", "da"))
    p.add_argument("--forest", dest="data.forest")
    p.add_argument("--calibration", dest="data.calibration")
    p.add_argument("--delta", dest="da.delta", type=float)
    p.add_argument("--kappa-gate", dest="da.kappa", type=float)

    p = add("evaluate", "score posterior samples")
    p.add_argument("--alignment", dest="data.alignment")
    p.add_argument("--samples", dest="data.samples")
    p.add_argument("--truth", dest="data.truth")

    p = sub.add_parser("model-select", parents=[common, smc_flags], help="log Z per substitution model")
    p.add_argument("--mode", dest="smc.mode", choices=("asmc", "da"))
    p.add_argument("--families", dest="model_select.families", nargs="+", choices=FAMILIES)
    for sp in sub.choices.values():
        for action in sp._actions:
            if "." in action.dest and action.metavar is None and action.choices is None:
                action.metavar = action.dest.rsplit(".", 1)[1].upper()
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    skip = {"command", "config", "verbose"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["output"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SMCError, FloatingPointError) as exc:
        dump = {"command": args.command, "error": str(exc), "traceback": traceback.format_exc(), "config": cfg}
        write_json(out / "abort.json", dump)
        print(f"numerical abort: {exc} (details in {out / 'abort.json'})", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, AlignmentError, TreeError, ModelError, ForestError, CalibrationError, OSError,
            KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
