import numpy as np
import pytest

from bastext.baselines import PopModel
from bastext.corpus import Basket, DatasetSplit, split_warm
from bastext.evaluation import (EvalError, ExternalScorer, TestCase, compute_ranks,
                                evaluate, evaluate_external, form_test_cases,
                                mrr_at_n, rank_candidates, recall_at_n)
from bastext.synthetic import make_random_corpus


def _b(ids, s):
    return Basket(np.array(sorted(ids), dtype=np.int64), s)


class FixedScorer:
    """score_all returns a fixed vector regardless of context."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.num_products = len(self.scores)

    def score_all(self, context_ids):
        return self.scores


class PerfectScorer:
    """Scores 1 for a designated id per call sequence, 0 otherwise."""

    def __init__(self, cases, num_products):
        self.cases = {tuple(c.context_ids.tolist()): c.held_out_id for c in cases}
        self.num_products = num_products

    def score_all(self, context_ids):
        out = np.zeros(self.num_products)
        out[self.cases[tuple(np.asarray(context_ids).tolist())]] = 1.0
        return out


# ---------------------------------------------------------------------------
# Test-case formation
# ---------------------------------------------------------------------------

def test_form_cases_warm_leave_one_out():
    split = DatasetSplit([], [], [_b([0, 1, 2], "t")], "warm", 0)
    cases = form_test_cases(split)
    assert len(cases) == 3
    assert sorted(c.held_out_id for c in cases) == [0, 1, 2]
    for c in cases:
        assert c.held_out_id not in c.context_ids
        assert len(c.context_ids) == 2


def test_form_cases_cold_restriction():
    split = DatasetSplit([], [], [_b([0, 1, 2], "t")], "cold", 0, {2})
    cases = form_test_cases(split)
    assert len(cases) == 1
    assert cases[0].held_out_id == 2
    assert sorted(cases[0].context_ids.tolist()) == [0, 1]


def test_form_cases_zero_fatal():
    split = DatasetSplit([], [], [_b([0, 1], "t")], "cold", 0, {5})
    with pytest.raises(EvalError):
        form_test_cases(split)


def test_case_count_equals_sum_of_basket_sizes():
    _, baskets = make_random_corpus(30, 300, seed=0)
    sp = split_warm(baskets, seed=0)
    cases = form_test_cases(sp)
    assert len(cases) == sum(len(b) for b in sp.test)


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

def test_rank_candidates_descending():
    case = TestCase(np.array([9]), 0, "s")
    scorer = FixedScorer([0.5, 0.9, 0.1] + [0.0] * 7)
    order = rank_candidates(case, scorer, np.array([0, 1, 2]))
    assert list(order) == [1, 0, 2]


def test_rank_candidates_tie_lower_id_first():
    case = TestCase(np.array([9]), 0, "s")
    scorer = FixedScorer([0.4, 0.4, 0.9] + [0.0] * 7)
    order = rank_candidates(case, scorer, np.array([0, 1, 2]))
    assert list(order) == [2, 0, 1]


def test_rank_candidates_rejects_context_in_pool():
    case = TestCase(np.array([1]), 0, "s")
    with pytest.raises(EvalError):
        rank_candidates(case, FixedScorer([1, 2, 3]), np.array([0, 1]))


def test_rank_candidates_matches_stable_sort_oracle():
    rng = np.random.default_rng(1)
    scores = rng.random(1000)
    scores[rng.choice(1000, 100, replace=False)] = 0.5  # force ties
    scorer = FixedScorer(scores)
    case = TestCase(np.array([999]), 0, "s")
    pool = np.arange(999)
    order = rank_candidates(case, scorer, pool)
    oracle = sorted(pool.tolist(), key=lambda i: (-scores[i], i))
    assert list(order) == oracle


def test_compute_ranks_held_out_outside_pool_infinite():
    cases = [TestCase(np.array([0]), 2, "s")]
    ranks = compute_ranks(FixedScorer([1, 1, 1]), cases, pool="test-products",
                          test_product_ids={1})
    assert np.isinf(ranks[0])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def test_metric_hand_values():
    assert recall_at_n([1, 1, 1], 10) == 1.0
    assert mrr_at_n([1, 1, 1], 10) == 1.0
    assert recall_at_n([2, 30], 20) == 0.5
    assert mrr_at_n([2, 30], 20) == 0.25
    assert recall_at_n([np.inf], 20) == 0.0
    assert mrr_at_n([np.inf], 20) == 0.0


def test_metric_empty_fatal():
    with pytest.raises(EvalError):
        recall_at_n([], 10)
    with pytest.raises(EvalError):
        mrr_at_n([], 10)


def test_metrics_match_loop_oracle_and_invariants():
    rng = np.random.default_rng(2)
    ranks = rng.integers(1, 200, size=10_000).astype(np.float64)
    ranks[rng.choice(10_000, 50, replace=False)] = np.inf
    prev_recall = 0.0
    for n in (1, 2, 5, 10, 20, 50, 100):
        r = recall_at_n(ranks, n)
        m = mrr_at_n(ranks, n)
        # brute-force per-case loop
        hits = sum(1 for x in ranks if x <= n)
        rr = sum(1.0 / x for x in ranks if x <= n)
        assert r == hits / len(ranks)
        assert m == pytest.approx(rr / len(ranks), abs=1e-15)
        assert m <= r
        assert r >= prev_recall  # monotone in N
        prev_recall = r
        assert 0.0 <= m <= r <= 1.0


# ---------------------------------------------------------------------------
# evaluate()
# ---------------------------------------------------------------------------

def test_evaluate_pop_toy_hand_computation():
    # train baskets: {0,1},{0,1},{0,2} -> counts [3,2,1]; test basket {0,1}
    train = [_b([0, 1], "a"), _b([0, 1], "b"), _b([0, 2], "c")]
    pop = PopModel.fit(train, 3)
    cases = form_test_cases(DatasetSplit(train, [], [_b([0, 1], "t")], "warm", 0))
    # case (ctx {1}, held 0): pool {0,2}; 0 has top count -> rank 1
    # case (ctx {0}, held 1): pool {1,2}; counts 2 > 1 -> rank 1
    report = evaluate(pop, cases, ns=(1, 2))
    assert report.metrics["recall@1"] == 1.0
    assert report.metrics["mrr@2"] == 1.0
    assert report.num_test_cases == 2


def test_evaluate_perfect_oracle():
    _, baskets = make_random_corpus(25, 200, seed=3)
    sp = split_warm(baskets, seed=1)
    cases = form_test_cases(sp)
    report = evaluate(PerfectScorer(cases, 25), cases, ns=(1, 20))
    assert report.metrics["recall@1"] == 1.0
    assert report.metrics["mrr@20"] == 1.0


def test_evaluate_deterministic_and_serializable():
    _, baskets = make_random_corpus(25, 150, seed=4)
    sp = split_warm(baskets, seed=2)
    cases = form_test_cases(sp)
    pop = PopModel.fit(sp.train, 25)
    a = evaluate(pop, cases, method="pop")
    b = evaluate(pop, cases, method="pop")
    assert a == b
    assert a.to_json() == b.to_json()
    assert "recall@20" in a.to_table()
    assert all(0.0 <= v <= 1.0 for v in a.metrics.values())


# ---------------------------------------------------------------------------
# External score files
# ---------------------------------------------------------------------------

def test_external_scorer_round_trip(tmp_path):
    cases = [TestCase(np.array([2]), 0, "s0"), TestCase(np.array([0]), 1, "s1")]
    f = tmp_path / "scores.tsv"
    f.write_text("0\t0:0.9,1:0.5\n1\t1:0.8,2:0.1\n")
    scorer = ExternalScorer.load(f, 3)
    report = evaluate_external(scorer, cases, ns=(1,))
    assert report.metrics["recall@1"] == 1.0


def test_external_scorer_unlisted_products_rank_last(tmp_path):
    f = tmp_path / "scores.tsv"
    f.write_text("0\t1:0.1\n")
    scorer = ExternalScorer.load(f, 4)
    scores = scorer.scores_for_case(0)
    assert scores[1] == 0.1
    assert np.all(np.isneginf(scores[[0, 2, 3]]))


def test_external_scorer_missing_case_fatal(tmp_path):
    f = tmp_path / "scores.tsv"
    f.write_text("0\t1:0.1\n")
    scorer = ExternalScorer.load(f, 4)
    cases = [TestCase(np.array([0]), 1, "a"), TestCase(np.array([0]), 2, "b")]
    with pytest.raises(EvalError, match="missing case 1"):
        evaluate_external(scorer, cases)


def test_external_scorer_malformed_fatal(tmp_path):
    f = tmp_path / "scores.tsv"
    f.write_text("0\t1:not-a-number\n")
    with pytest.raises(EvalError):
        ExternalScorer.load(f, 4)
