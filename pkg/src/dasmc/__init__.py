"""Delayed-acceptance annealed SMC for Bayesian phylogenetics."""
from .alignment import Alignment, SitePatterns, compress_patterns, read_alignment
from .calibration import TrainingLog, calibrate, fit_reference, run_pilot, select_delta, train_surrogate
from .forest import ForestConfig, RegressionForest, fit_forest, load_forest, save_forest
from .kernel import DAConfig, ExactSurrogate, ForestSurrogate, Stage, classical_mh_step, da_step
from .likelihood import LikelihoodEngine, log_likelihood
from .models import ModelParams, PriorSpec, simulate_alignment
from .moves import MoveKind, ProposalConfig, propose
from .problem import ParticleState, PhyloProblem
from .reference import ReferenceDistribution
from .smc import SMCConfig, SMCResult, run_smc
from .tree import Tree, majority_rule_consensus, parse_newick, partition_metric, sample_random_tree

__version__ = "0.1.0"
