"""Leave-one-out test-case formation, ranking, and Recall@N / MRR@N reporting."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DatasetSplit


class EvalError(RuntimeError):
    pass


@dataclass
class TestCase:
    context_ids: np.ndarray
    held_out_id: int
    source_id: str


@dataclass
class EvalReport:
    method: str
    mode: str
    pool: str  # "all" | "test-products"
    metrics: dict[str, float]  # e.g. {"recall@10": ..., "mrr@20": ...}
    num_test_cases: int
    fingerprint: str

    def to_json(self) -> str:
        return json.dumps(
            {"method": self.method, "mode": self.mode, "pool": self.pool,
             "metrics": self.metrics, "num_test_cases": self.num_test_cases,
             "fingerprint": self.fingerprint}, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        keys = sorted(self.metrics)
        width = max(len(k) for k in keys) if keys else 6
        lines = [f"method: {self.method}  mode: {self.mode}  pool: {self.pool}  "
                 f"cases: {self.num_test_cases}"]
        for k in keys:
            lines.append(f"  {k.ljust(width)}  {self.metrics[k]:.4f}")
        return "\n".join(lines) + "\n"


def form_test_cases(split: DatasetSplit) -> list[TestCase]:
    """One case per (basket, held-out product) pair; cold mode restricts the
    held-out product to the designated test products. Empty-context cases are dropped."""
    cases: list[TestCase] = []
    for b in split.test:
        for k in range(len(b)):
            held = int(b.product_ids[k])
            if split.mode == "cold" and held not in split.test_product_ids:
                continue
            ctx = np.delete(b.product_ids, k)
            if len(ctx) == 0:
                continue
            cases.append(TestCase(ctx, held, b.source_id))
    if not cases:
        raise EvalError("split yields zero test cases")
    return cases


def _rank_in_pool(scores: np.ndarray, pool_mask: np.ndarray, held: int) -> float:
    """1-based rank of `held` among pool members, ties broken by ascending id."""
    if not pool_mask[held]:
        return np.inf
    sh = scores[held]
    higher = np.sum(pool_mask & (scores > sh))
    tied_before = np.sum(pool_mask[:held] & (scores[:held] == sh))
    return float(1 + higher + tied_before)


def rank_candidates(case: TestCase, scorer, candidate_pool: np.ndarray) -> np.ndarray:
    """Pool ids ordered by descending score, ties broken by ascending id."""
    pool = np.asarray(candidate_pool)
    if np.isin(pool, case.context_ids).any():
        raise EvalError("candidate pool must exclude the context")
    scores = scorer.score_all(case.context_ids)[pool]
    return pool[np.lexsort((pool, -scores))]


def recall_at_n(ranks, n: int) -> float:
    """Fraction of cases whose held-out product ranked within the top n."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EvalError("empty rank list")
    return float(np.mean(ranks <= n))


def mrr_at_n(ranks, n: int) -> float:
    """Mean of 1/rank, counting ranks beyond n (or infinite) as zero."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EvalError("empty rank list")
    contrib = np.where(ranks <= n, 1.0 / ranks, 0.0)
    return float(np.mean(contrib))


def _pool_mask(num_products: int, case: TestCase, pool: str,
               test_product_ids) -> np.ndarray:
    if pool == "all":
        mask = np.ones(num_products, dtype=bool)
    elif pool == "test-products":
        mask = np.zeros(num_products, dtype=bool)
        mask[sorted(test_product_ids)] = True
    else:
        raise EvalError(f"unknown candidate pool {pool!r}")
    mask[case.context_ids] = False
    return mask


def compute_ranks(scorer, test_cases: list[TestCase], pool: str = "all",
                  test_product_ids=None) -> np.ndarray:
    """1-based rank of every case's held-out product (inf when outside the pool)."""
    num_products = scorer.num_products
    ranks = np.empty(len(test_cases))
    for i, case in enumerate(test_cases):
        scores = scorer.score_all(case.context_ids)
        mask = _pool_mask(num_products, case, pool, test_product_ids)
        ranks[i] = _rank_in_pool(scores, mask, case.held_out_id)
    return ranks


def evaluate(scorer, test_cases: list[TestCase], ns=(10, 20), method: str = "model",
             mode: str = "warm", pool: str = "all", test_product_ids=None) -> EvalReport:
    """Rank every test case and aggregate Recall@N / MRR@N."""
    ranks = compute_ranks(scorer, test_cases, pool, test_product_ids)
    metrics = {}
    for n in sorted(ns):
        metrics[f"recall@{n}"] = recall_at_n(ranks, n)
        metrics[f"mrr@{n}"] = mrr_at_n(ranks, n)
    fp = hashlib.sha256(
        f"{method}|{mode}|{pool}|{sorted(ns)}|{len(test_cases)}".encode()).hexdigest()[:16]
    return EvalReport(method, mode, pool, metrics, len(test_cases), fp)


# ---------------------------------------------------------------------------
# External score files (third-party models plugged into the same protocol)
# ---------------------------------------------------------------------------

class ExternalScorer:
    """Scores read from a file: one line per case, `caseIndex<TAB>id:score,id:score,...`.

    Products missing from a case's line score -inf (never ranked above listed ones).
    """

    def __init__(self, per_case: dict[int, tuple[np.ndarray, np.ndarray]], num_products: int):
        self.per_case = per_case
        self.num_products = num_products
        self._current = 0

    @classmethod
    def load(cls, path, num_products: int) -> "ExternalScorer":
        per_case = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            idx_s, _, rest = line.partition("\t")
            try:
                idx = int(idx_s)
                pairs = [p.split(":") for p in rest.split(",") if p]
                ids = np.array([int(a) for a, _ in pairs], dtype=np.int64)
                vals = np.array([float(b) for _, b in pairs])
            except ValueError as exc:
                raise EvalError(f"{path}:{lineno}: malformed score line") from exc
            per_case[idx] = (ids, vals)
        return cls(per_case, num_products)

    def scores_for_case(self, index: int) -> np.ndarray:
        if index not in self.per_case:
            raise EvalError(f"external score file is missing case {index}")
        ids, vals = self.per_case[index]
        out = np.full(self.num_products, -np.inf)
        out[ids] = vals
        return out


def evaluate_external(scorer: ExternalScorer, test_cases: list[TestCase], ns=(10, 20),
                      mode: str = "warm", pool: str = "all",
                      test_product_ids=None) -> EvalReport:
    ranks = np.empty(len(test_cases))
    for i, case in enumerate(test_cases):
        scores = scorer.scores_for_case(i)
        mask = _pool_mask(scorer.num_products, case, pool, test_product_ids)
        ranks[i] = _rank_in_pool(scores, mask, case.held_out_id)
    metrics = {}
    for n in sorted(ns):
        metrics[f"recall@{n}"] = recall_at_n(ranks, n)
        metrics[f"mrr@{n}"] = mrr_at_n(ranks, n)
    fp = hashlib.sha256(
        f"external|{mode}|{pool}|{sorted(ns)}|{len(test_cases)}".encode()).hexdigest()[:16]
    return EvalReport("external", mode, pool, metrics, len(test_cases), fp)
