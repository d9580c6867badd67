"""Compare the basket-text model against POP, ItemKNN, and prod2vec.

All four methods score the same held-out test cases on a synthetic corpus, so
the printed table is directly comparable. The text model also gets a cold-start
round: 10% of test products are removed from training entirely, which the
id-based baselines cannot handle but a title encoder can.

Run:  python demos/baseline_comparison.py
"""

import numpy as np

import bastext.model as model
from bastext.baselines import ItemKnnModel, PopModel, Prod2vecConfig, Prod2vecModel
from bastext.corpus import build_vocabulary, split_cold, split_warm
from bastext.evaluation import evaluate, form_test_cases
from bastext.model import BastextScorer, ModelConfig
from bastext.synthetic import make_planted_corpus


def train_text_model(split, catalog, vocab, seed=0):
    cfg = ModelConfig(k=32, negatives=8, batch_size=256, learning_rate=2e-3,
                      dropout=0.0, epochs=15, seed=seed, patience=100,
                      validation_sample=200)
    state, _ = model.train(cfg, split.train, split.validation, catalog, vocab)
    return BastextScorer(model.materialize_product_vectors(state, catalog))


def main() -> None:
    catalog, baskets, _, _ = make_planted_corpus()
    vocab = build_vocabulary(catalog)
    m = len(catalog)

    split = split_warm(baskets, seed=3)
    cases = form_test_cases(split)[:600]
    scorers = {
        "bastext": train_text_model(split, catalog, vocab),
        "pop": PopModel.fit(split.train, m),
        "itemknn": ItemKnnModel.fit(split.train, m),
        "prod2vec": Prod2vecModel.fit(split.train, m,
                                      Prod2vecConfig(k=32, epochs=10, seed=0)),
    }
    print("warm split:")
    for name, scorer in scorers.items():
        rep = evaluate(scorer, cases, method=name, ns=(10, 20))
        print(f"  {name:9s} recall@20 {rep.metrics['recall@20']:.3f}  "
              f"mrr@20 {rep.metrics['mrr@20']:.3f}")

    cold = split_cold(baskets, test_product_fraction=0.10, seed=0)
    cold_cases = form_test_cases(cold)
    scorer = train_text_model(cold, catalog, vocab)
    rep = evaluate(scorer, cold_cases, method="bastext", mode="cold",
                   test_product_ids=cold.test_product_ids, ns=(20,))
    random_r20 = 20.0 / (m - int(np.mean([len(c.context_ids) for c in cold_cases])))
    print(f"\ncold split ({len(cold.test_product_ids)} unseen products, "
          f"{len(cold_cases)} cases):")
    print(f"  bastext   recall@20 {rep.metrics['recall@20']:.3f}  "
          f"(random ranking would give {random_r20:.3f})")


if __name__ == "__main__":
    main()
