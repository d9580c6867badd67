"""Basket-text product embeddings: training, baselines, and ranking evaluation."""

from .corpus import (Basket, Catalog, DatasetSplit, Product, TrainingExample, Vocabulary,
                     build_vocabulary, encode_catalog, form_positive_examples,
                     import_dataset, sample_negatives, split_cold, split_warm, tokenize)
from .encoders import (CnnParams, EncoderOutput, MovParams, WordInputTable,
                       encode_cnn, encode_mov, encoder_backward, load_pretrained_vectors)
from .model import (BastextScorer, ModelConfig, ModelState, ProductVectors, adam_step,
                    basket_vector, batch_loss, load_model, materialize_product_vectors,
                    save_model, score, train)
from .baselines import ItemKnnModel, PopModel, Prod2vecConfig, Prod2vecModel
from .evaluation import (EvalReport, TestCase, evaluate, form_test_cases, mrr_at_n,
                         rank_candidates, recall_at_n)

__version__ = "0.1.0"
