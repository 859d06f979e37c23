import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import taxa
from oracles import branch_score_oracle, splits_by_edge_removal
from dasmc.tree import (NewickError, TreeError, TreeSampleSet, branch_score_distance, compatible,
                        log_n_topologies, majority_rule_consensus, parse_newick, partition_metric,
                        sample_random_tree, split_table, write_newick)


def lengths_multiset(t):
    return sorted(t.split_lengths().values())


def test_parse_four_taxon_example():
    t = parse_newick("((A:0.1,B:0.2):0.3,C:0.4,D:0.5);")
    assert t.n_taxa == 4
    assert len(t.edges()) == 5
    assert len(t.splits()) == 1
    assert math.isclose(t.total_length(), 1.5)


def test_bifurcating_root_is_merged():
    t = parse_newick("((A:0.1,B:0.2):0.3,(C:0.4,D:0.5):0.25);")
    assert len(t.edges()) == 5
    assert math.isclose(t.total_length(), 0.1 + 0.2 + 0.55 + 0.4 + 0.5)


@pytest.mark.parametrize("text,pos", [
    ("((A:0.1,B:0.2)", 13),
    ("(A:0.1,B:0.2,C:0.3)", 19),
    ("(A:0.1,B:x,C:0.3);", 9),
])
def test_newick_error_positions(text, pos):
    with pytest.raises(NewickError) as err:
        parse_newick(text)
    assert err.value.pos == pos


@pytest.mark.parametrize("text", [
    "(A:0.1,A:0.2,B:0.3);",
    "(A:0.1,B:0.2);",
    "(A:-0.1,B:0.2,C:0.3);",
])
def test_invalid_trees_rejected(text):
    with pytest.raises(TreeError):
        parse_newick(text)


def test_round_trip_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = sample_random_tree(taxa(10), 10.0, rng)
        u = parse_newick(write_newick(t), taxa=t.taxa)
        assert u.splits() == t.splits()
        assert np.allclose(lengths_multiset(u), lengths_multiset(t), rtol=0, atol=1e-10)


def test_zero_length_written():
    t = parse_newick("((A:0,B:0.2):0.3,C:0.4,D:0.5);")
    assert ":0.000000000000" in write_newick(t)
    assert lengths_multiset(parse_newick(write_newick(t)))[0] == 0.0


def test_large_tree_counts():
    t = sample_random_tree(taxa(59), 10.0, np.random.default_rng(1))
    text = write_newick(t)
    assert text.count(":") == 115
    assert all(name in text for name in t.taxa)


def test_quoted_names_round_trip():
    t = parse_newick("('taxon one':0.1,'it''s':0.2,(C:0.3,D:0.4):0.5);")
    assert "taxon one" in t.taxa and "it's" in t.taxa
    u = parse_newick(write_newick(t))
    assert sorted(u.taxa) == sorted(t.taxa)


def test_split_counts():
    four = parse_newick("((A:1,B:1):1,C:1,D:1);")
    assert len(four.splits()) == 1
    cat = parse_newick("(A:1,B:1,(C:1,(D:1,(E:1,F:1):1):1):1);")
    assert len(cat.splits()) == 3


@pytest.mark.parametrize("seed", range(5))
def test_splits_match_edge_removal(seed):
    t = sample_random_tree(taxa(10), 10.0, np.random.default_rng(seed))
    assert set(t.splits()) == splits_by_edge_removal(t)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 25), seed=st.integers(0, 2**32 - 1))
def test_structure_invariants(n, seed):
    t = sample_random_tree(taxa(n), 10.0, np.random.default_rng(seed))
    t.validate()
    assert len(t.edges()) == 2 * n - 3
    degrees = sorted(len(a) for a in t.adj)
    assert degrees == [1] * n + [3] * (n - 2)
    assert len(t.splits()) == n - 3
    assert all(not (s & 1) for s in t.splits())


def test_partition_metric_examples():
    t1 = parse_newick("((A:1,B:1):1,C:1,D:1);")
    t2 = parse_newick("((A:1,C:1):1,B:1,D:1);")
    assert partition_metric(t1, t1) == 0
    assert partition_metric(t1, t2) == 2


def test_branch_score_examples():
    t1 = parse_newick("((A:0.1,B:0.2):0.3,C:0.4,D:0.5);")
    t2 = parse_newick("((A:0.1,B:0.2):0.4,C:0.4,D:0.5);")
    assert branch_score_distance(t1, t1) == 0.0
    assert math.isclose(branch_score_distance(t1, t2), 0.1)


@pytest.mark.parametrize("seed", range(5))
def test_branch_score_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    t1 = sample_random_tree(taxa(8), 10.0, rng)
    t2 = sample_random_tree(taxa(8), 10.0, rng)
    assert math.isclose(branch_score_distance(t1, t2), branch_score_oracle(t1, t2), rel_tol=1e-12)


def test_distances_ignore_taxon_order():
    t1 = parse_newick("((A:0.1,B:0.2):0.3,C:0.4,D:0.5);")
    t2 = parse_newick("(D:0.5,C:0.4,(B:0.2,A:0.1):0.3);")
    assert partition_metric(t1, t2) == 0
    assert branch_score_distance(t1, t2) == pytest.approx(0.0, abs=1e-15)


def test_distances_reject_different_taxa():
    with pytest.raises(TreeError):
        partition_metric(parse_newick("(A:1,B:1,C:1);"), parse_newick("(A:1,B:1,D:1);"))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (sample_random_tree(taxa(7), 10.0, rng) for _ in range(3))
    for d in (partition_metric, branch_score_distance):
        assert d(a, b) == pytest.approx(d(b, a))
        assert d(a, a) == 0
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
    assert (partition_metric(a, b) == 0) == (a.splits() == b.splits())


def test_uniform_topologies_four_taxa():
    rng = np.random.default_rng(3)
    counts = {}
    for _ in range(30000):
        s = next(iter(sample_random_tree(taxa(4), 10.0, rng).splits()))
        counts[s] = counts.get(s, 0) + 1
    assert len(counts) == 3
    for c in counts.values():
        assert abs(c / 30000 - 1 / 3) < 0.01


def test_all_five_taxon_topologies_appear():
    rng = np.random.default_rng(4)
    seen = {sample_random_tree(taxa(5), 10.0, rng).splits() for _ in range(2000)}
    assert len(seen) == 15
    assert math.isclose(math.exp(log_n_topologies(5)), 15)


def test_branch_length_mean():
    rng = np.random.default_rng(5)
    lens = np.concatenate([sample_random_tree(taxa(20), 10.0, rng).lengths() for _ in range(300)])
    assert len(lens) >= 10_000
    assert abs(lens.mean() - 0.1) < 0.005


def test_random_tree_needs_three_taxa():
    with pytest.raises(TreeError):
        sample_random_tree(taxa(2), 10.0, np.random.default_rng(0))


# -- consensus ---------------------------------------------------------------

def test_consensus_of_identical_samples():
    t = sample_random_tree(taxa(8), 10.0, np.random.default_rng(2))
    cons = majority_rule_consensus(TreeSampleSet.uniform([t, t.copy(), t.copy()]))
    assert cons.splits() == t.splits()
    assert all(v == pytest.approx(1.0) for v in cons.supports().values())
    assert partition_metric(cons.resolved_tree(), t) == 0
    assert branch_score_distance(cons.resolved_tree(), t) == pytest.approx(0.0, abs=1e-9)


def test_consensus_two_of_three():
    names = list("ABCDE")
    a = parse_newick("((A:1,B:1):1,(C:1,D:1):1,E:1);", taxa=names)
    b = parse_newick("((A:1,B:1):1,(C:1,E:1):1,D:1);", taxa=names)
    c = parse_newick("((A:1,C:1):1,(B:1,D:1):1,E:1);", taxa=names)
    cons = majority_rule_consensus(TreeSampleSet.uniform([a, b, c]))
    ab = next(s for s in a.splits() if s in b.splits())
    assert cons.splits() == frozenset({ab})
    assert cons.supports()[ab] == pytest.approx(2 / 3)


def test_weighted_consensus_follows_heavier_sample():
    a = parse_newick("((A:1,B:1):1,C:1,D:1);")
    b = parse_newick("((A:1,C:1):1,B:1,D:1);")
    cons = majority_rule_consensus(TreeSampleSet([a, b], [0.7, 0.3]))
    assert cons.splits() == a.splits()
    assert cons.supports()[next(iter(a.splits()))] == pytest.approx(0.7)


def test_consensus_newick_has_supports():
    a = parse_newick("((A:1,B:1):1,(C:1,D:1):1,E:1);")
    text = majority_rule_consensus(TreeSampleSet.uniform([a, a])).to_newick()
    assert text.count(")1.0000:") == 2
    assert parse_newick(text, taxa=a.taxa).splits() == a.splits()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 12))
def test_majority_splits_compatible(seed, k):
    rng = np.random.default_rng(seed)
    trees = [sample_random_tree(taxa(7), 10.0, rng) for _ in range(k)]
    cons = majority_rule_consensus(TreeSampleSet(trees, rng.random(k) + 0.01))
    splits = list(cons.splits())
    assert all(compatible(x, y) for x in splits for y in splits)
    cons.resolved_tree().validate()


def test_split_table_sorted():
    rng = np.random.default_rng(9)
    trees = [sample_random_tree(taxa(6), 10.0, rng) for _ in range(10)]
    rows = split_table(TreeSampleSet.uniform(trees))
    freqs = [r["frequency"] for r in rows]
    assert freqs == sorted(freqs, reverse=True)
