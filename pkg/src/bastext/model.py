"""Two-tower basket scorer and trainer.

One encoder produces the embedding vector of a candidate product, a second
encoder with identical architecture but separate weights produces the context
vector of each product already in the basket. The probability that the
candidate joins the basket is sigma(h_candidate . mean of context vectors).
Training minimizes binary cross-entropy over leave-one-out positives plus
uniform negatives resampled fresh at every mini-batch, optimized with Adam.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .corpus import Basket, Catalog, CorpusError, TrainingExample, Vocabulary, encode_catalog
from .encoders import (CnnParams, MovParams, WordInputTable, backward_batch,
                       encode_batch, init_cnn, init_mov)

MODEL_MAGIC = b"BSTX"
MODEL_VERSION = 1


class ModelError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    k: int = 64
    negatives: int = 8
    encoder: str = "mov"  # "mov" | "cnn"
    pretrained: bool = False
    finetune_pretrained: bool = False
    cnn_widths: tuple[int, ...] = (2, 3)
    cnn_filters: int = 64
    batch_size: int = 1024
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.2
    epochs: int = 30
    seed: int = 0
    patience: int = 3
    use_bias: bool = False  # optional global score bias, off by default
    tied_init: bool = True  # start both towers from the same draw (see init_model)
    validation_sample: int = 2000  # test cases sampled for per-epoch Recall@20

    def __post_init__(self):
        if self.k < 1 or self.negatives < 1 or self.batch_size < 1:
            raise ModelError("k, negatives, and batch_size must all be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must lie in [0, 1)")
        if self.encoder not in ("mov", "cnn"):
            raise ModelError(f"unknown encoder kind {self.encoder!r}")
        self.cnn_widths = tuple(self.cnn_widths)


@dataclass
class ModelState:
    config: ModelConfig
    vocab: Vocabulary
    table: WordInputTable
    params_e: MovParams | CnnParams
    params_c: MovParams | CnnParams
    bias: np.ndarray  # scalar, used only when config.use_bias
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int = 0
    catalog_hash: str = ""

    def named_params(self) -> dict[str, np.ndarray]:
        out = {f"E/{k}": v for k, v in self.params_e.as_dict().items()}
        out.update({f"C/{k}": v for k, v in self.params_c.as_dict().items()})
        if self.config.use_bias:
            out["bias"] = self.bias
        if self.config.pretrained and self.config.finetune_pretrained:
            out["table"] = self.table.vectors
        return out


@dataclass
class ProductVectors:
    embedding: np.ndarray  # (M, K) rows h_i
    context: np.ndarray  # (M, K) rows h'_i
    degenerate: np.ndarray  # (M,) bool, True for empty-after-UNK titles


def init_model(config: ModelConfig, vocab: Vocabulary, table: WordInputTable | None = None,
               dtype=np.float32, catalog_hash: str = "") -> ModelState:
    """Fresh model state.

    With `tied_init` (the default) both towers start from the identical random
    draw and diverge only through their gradients. Starting from the same point
    makes every candidate/context dot product positive for products that share
    tokens, which bootstraps learning: with both outputs ReLU-clamped to the
    nonnegative orthant, independently drawn towers frequently start (and stay)
    near-orthogonal, and whole co-purchase clusters then never receive a usable
    positive gradient.
    """
    if table is None:
        table = WordInputTable.one_hot(vocab.size)
    rng = np.random.default_rng(config.seed)
    d = table.dim

    def make(r):
        if config.encoder == "mov":
            return init_mov(d, config.k, r, dtype)
        return init_cnn(d, config.k, config.cnn_widths, config.cnn_filters, r, dtype)

    params_e = make(rng)
    params_c = make(rng) if not config.tied_init else _clone_params(params_e)
    state = ModelState(config, vocab, table, params_e, params_c,
                       np.zeros(1, dtype=dtype), {}, {}, 0, catalog_hash)
    if config.pretrained and config.finetune_pretrained:
        state.table.vectors = state.table.vectors.astype(dtype, copy=True)
    for name, p in state.named_params().items():
        state.adam_m[name] = np.zeros_like(p)
        state.adam_v[name] = np.zeros_like(p)
    return state


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def basket_vector(context_ids: np.ndarray, context_matrix: np.ndarray) -> np.ndarray:
    """Mean of the context vectors of the products in the basket."""
    context_ids = np.asarray(context_ids)
    if context_ids.size == 0:
        raise ModelError("basket vector of an empty context")
    return context_matrix[context_ids].mean(axis=0)


def score(candidate_id: int, context_ids: np.ndarray, vectors: ProductVectors) -> float:
    """sigma(h_candidate . mean context vector), dropout off."""
    return float(expit(vectors.embedding[candidate_id] @ basket_vector(context_ids, vectors.context)))


class BastextScorer:
    """Evaluator-facing scorer over materialized product vectors."""

    def __init__(self, vectors: ProductVectors, bias: float = 0.0):
        self.vectors = vectors
        self.bias = bias

    @property
    def num_products(self) -> int:
        return self.vectors.embedding.shape[0]

    def score_all(self, context_ids: np.ndarray) -> np.ndarray:
        hbar = basket_vector(context_ids, self.vectors.context)
        return expit(self.vectors.embedding @ hbar + self.bias)


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------

def _loss_arrays(state: ModelState, token_ids: list[np.ndarray],
                 cand_ids: np.ndarray, ex_ctx: np.ndarray,
                 ctx_flat: np.ndarray, ctx_offsets: np.ndarray, ctx_lens: np.ndarray,
                 labels: np.ndarray, training: bool, rng) -> tuple[float, dict[str, np.ndarray]]:
    """Vectorized batch loss + gradients.

    `ctx_flat/ctx_offsets/ctx_lens` describe the distinct contexts; `ex_ctx[e]`
    names the context of example e, so negatives share their positive's context.
    """
    cfg = state.config
    dtype = state.params_e.as_dict()["proj" if cfg.encoder == "cnn" else "W"].dtype
    drop = cfg.dropout if training else 0.0
    want_input = cfg.pretrained and cfg.finetune_pretrained

    ucand, cand_inv = np.unique(cand_ids, return_inverse=True)
    uctx, ctx_inv = np.unique(ctx_flat, return_inverse=True)
    he, cache_e = encode_batch(state.params_e, state.table, [token_ids[i] for i in ucand],
                               dropout_rate=drop, rng=rng)
    hc, cache_c = encode_batch(state.params_c, state.table, [token_ids[i] for i in uctx],
                               dropout_rate=drop, rng=rng)

    ctx_rows = hc[ctx_inv]  # (total ctx tokens, K)
    sums = np.add.reduceat(ctx_rows, ctx_offsets, axis=0)
    hbar = sums / ctx_lens[:, None]

    h_cand = he[cand_inv]
    z = np.einsum("ek,ek->e", h_cand, hbar[ex_ctx])
    if cfg.use_bias:
        z = z + state.bias[0]
    y = (labels > 0).astype(z.dtype)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    if not np.isfinite(loss):
        raise ModelError("non-finite training loss; lower the learning rate or check init")

    g = ((expit(z) - y) / len(z)).astype(dtype)
    d_he = np.zeros_like(he)
    np.add.at(d_he, cand_inv, g[:, None] * hbar[ex_ctx])
    d_hbar = np.zeros_like(hbar)
    np.add.at(d_hbar, ex_ctx, g[:, None] * h_cand)
    ctx_of_row = np.repeat(np.arange(len(ctx_lens)), ctx_lens)
    d_rows = d_hbar[ctx_of_row] / ctx_lens[ctx_of_row][:, None]
    d_hc = np.zeros_like(hc)
    np.add.at(d_hc, ctx_inv, d_rows)

    ge = backward_batch(state.params_e, cache_e, d_he, want_input_grads=want_input)
    gc = backward_batch(state.params_c, cache_c, d_hc, want_input_grads=want_input)
    grads = {f"E/{k}": v for k, v in ge.items() if k != "input"}
    grads.update({f"C/{k}": v for k, v in gc.items() if k != "input"})
    if cfg.use_bias:
        grads["bias"] = np.array([g.sum()], dtype=dtype)
    if want_input:
        grads["table"] = ge.get("input", 0) + gc.get("input", 0)
    return loss, grads


def batch_loss(batch: list[TrainingExample], state: ModelState, token_ids: list[np.ndarray],
               training: bool = False, rng: np.random.Generator | None = None):
    """Mean binary cross-entropy over a batch plus gradients for every parameter."""
    if not batch:
        raise ModelError("empty batch")
    for ex in batch:
        if len(ex.context_ids) == 0:
            raise ModelError("training example with empty context")
    cand_ids = np.array([ex.candidate_id for ex in batch], dtype=np.int64)
    ctx_lens = np.array([len(ex.context_ids) for ex in batch], dtype=np.int64)
    ctx_flat = np.concatenate([ex.context_ids for ex in batch])
    ctx_offsets = np.concatenate([[0], np.cumsum(ctx_lens)[:-1]])
    labels = np.array([ex.label for ex in batch], dtype=np.int64)
    ex_ctx = np.arange(len(batch))
    return _loss_arrays(state, token_ids, cand_ids, ex_ctx, ctx_flat, ctx_offsets,
                        ctx_lens, labels, training, rng)


def adam_step(state: ModelState, grads: dict[str, np.ndarray]) -> None:
    """Standard Adam update with bias correction; pretrained tables move only when fine-tuned."""
    cfg = state.config
    state.adam_t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.adam_t
    bc2 = 1.0 - b2 ** state.adam_t
    for name, p in state.named_params().items():
        g = grads.get(name)
        if g is None:
            raise ModelError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ModelError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m, v = state.adam_m[name], state.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def materialize_product_vectors(state: ModelState, catalog: Catalog) -> ProductVectors:
    """Encode every catalog title through both towers with dropout disabled."""
    token_ids = encode_catalog(catalog, state.vocab)
    emb, _ = encode_batch(state.params_e, state.table, token_ids)
    ctx, _ = encode_batch(state.params_c, state.table, token_ids)
    degenerate = np.array([len(t) == 0 for t in token_ids], dtype=bool)
    return ProductVectors(np.ascontiguousarray(emb), np.ascontiguousarray(ctx), degenerate)


def _sample_negative_matrix(basket_rows: np.ndarray, basket_members: list[np.ndarray],
                            n: int, num_products: int, rng: np.random.Generator) -> np.ndarray:
    """(b, n) uniform draws per positive, rejecting ids inside the positive's basket."""
    ubaskets, row_of = np.unique(basket_rows, return_inverse=True)
    bitmap = np.zeros((len(ubaskets), num_products), dtype=bool)
    for r, b in enumerate(ubaskets):
        bitmap[r, basket_members[b]] = True
    draws = rng.integers(0, num_products, size=(len(basket_rows), n))
    bad = bitmap[row_of[:, None], draws]
    while bad.any():
        redraw = rng.integers(0, num_products, size=int(bad.sum()))
        draws[bad] = redraw
        bad = bitmap[row_of[:, None], draws]
    return draws


def _validation_cases(validation: list[Basket], sample: int, seed: int):
    cases = []
    for b in validation:
        for k in range(len(b)):
            cases.append((np.delete(b.product_ids, k), int(b.product_ids[k])))
    if not cases:
        return []
    rng = np.random.default_rng(seed + 9173)
    if len(cases) > sample:
        idx = rng.choice(len(cases), size=sample, replace=False)
        cases = [cases[i] for i in sorted(idx)]
    return cases


def _validation_recall(state: ModelState, catalog: Catalog, cases, n: int = 20) -> float:
    if not cases:
        return float("nan")
    vectors = materialize_product_vectors(state, catalog)
    hits = 0
    for ctx, held in cases:
        s = vectors.embedding @ basket_vector(ctx, vectors.context)
        s[ctx] = -np.inf
        sh = s[held]
        rank = 1 + int(np.sum(s > sh)) + int(np.sum((s == sh) & (np.arange(len(s)) < held)))
        hits += rank <= n
    return hits / len(cases)


def _clone_params(params):
    if isinstance(params, MovParams):
        return MovParams(params.W.copy())
    return CnnParams(params.widths, {w: f.copy() for w, f in params.filters.items()},
                     {w: b.copy() for w, b in params.biases.items()},
                     params.proj.copy(), params.proj_bias.copy())


def train(config: ModelConfig, train_baskets: list[Basket], validation_baskets: list[Basket],
          catalog: Catalog, vocab: Vocabulary, table: WordInputTable | None = None,
          log=None) -> tuple[ModelState, list[str]]:
    """Train the model; returns the best-validation state plus a per-epoch log.

    Per epoch: shuffle the leave-one-out positives, draw fresh uniform negatives
    for every mini-batch, update with Adam, then measure Recall@20 on a fixed
    sample of validation test cases. The state with the best validation recall
    is retained; training stops early after `patience` stagnant epochs.
    """
    if not train_baskets:
        raise ModelError("no training baskets")
    state = init_model(config, vocab, table, catalog_hash=catalog.content_hash())
    token_ids = encode_catalog(catalog, vocab)
    num_products = len(catalog)

    members = [b.product_ids for b in train_baskets]
    pos_basket = np.concatenate(
        [np.full(len(m), i, dtype=np.int64) for i, m in enumerate(members)])
    pos_slot = np.concatenate([np.arange(len(m), dtype=np.int64) for m in members])
    n_pos = len(pos_basket)

    val_cases = _validation_cases(validation_baskets, config.validation_sample, config.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    lines: list[str] = []
    best = (-np.inf, None)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n_pos)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_pos, config.batch_size):
            idx = order[start: start + config.batch_size]
            b = len(idx)
            bids = pos_basket[idx]
            slots = pos_slot[idx]
            cands = np.array([members[bids[i]][slots[i]] for i in range(b)], dtype=np.int64)
            ctx_list = [np.delete(members[bids[i]], slots[i]) for i in range(b)]
            ctx_lens = np.array([len(c) for c in ctx_list], dtype=np.int64)
            ctx_flat = np.concatenate(ctx_list)
            ctx_offsets = np.concatenate([[0], np.cumsum(ctx_lens)[:-1]])

            batch_rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence([config.seed, 2, epoch, n_batches])))
            negs = _sample_negative_matrix(bids, members, config.negatives,
                                           num_products, batch_rng)
            cand_ids = np.concatenate([cands, negs.ravel()])
            ex_ctx = np.concatenate([np.arange(b),
                                     np.repeat(np.arange(b), config.negatives)])
            labels = np.concatenate([np.ones(b, dtype=np.int64),
                                     -np.ones(b * config.negatives, dtype=np.int64)])
            loss, grads = _loss_arrays(state, token_ids, cand_ids, ex_ctx, ctx_flat,
                                       ctx_offsets, ctx_lens, labels, True, batch_rng)
            adam_step(state, grads)
            epoch_loss += loss
            n_batches += 1
        mean_loss = epoch_loss / max(n_batches, 1)
        recall = _validation_recall(state, catalog, val_cases)
        dt = time.perf_counter() - t0
        line = f"epoch {epoch}\tloss {mean_loss:.6f}\trecall@20 {recall:.4f}\twall {dt:.2f}s"
        lines.append(line)
        if log is not None:
            log(line)
        score_now = recall if np.isfinite(recall) else -mean_loss
        if score_now > best[0]:
            best = (score_now, (_clone_params(state.params_e), _clone_params(state.params_c),
                                state.bias.copy()))
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best[1] is not None:
        state.params_e, state.params_c, state.bias = best[1]
    return state, lines


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(state: ModelState, path) -> None:
    """Binary container: magic, version, JSON header, then f32 tensors row-major LE."""
    tensors = dict(state.named_params())
    if state.config.pretrained and not state.config.finetune_pretrained:
        tensors["table"] = state.table.vectors
    names = sorted(tensors)
    header = {
        "encoder": state.config.encoder,
        "k": state.config.k,
        "config": asdict(state.config),
        "vocab": {"words": state.vocab.words(), "counts": state.vocab.counts.tolist(),
                  "min_count": state.vocab.min_count},
        "table": {"mode": state.table.mode, "dim": state.table.dim,
                  "vocab_size": state.table.vocab_size},
        "catalog_hash": state.catalog_hash,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != MODEL_MAGIC:
        raise ModelError(f"{path}: not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported model version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    if len(data) < 16 + hlen:
        raise ModelError(f"{path}: truncated header")
    header = json.loads(data[16: 16 + hlen].decode("utf-8"))
    cfg_dict = dict(header["config"])
    cfg_dict["cnn_widths"] = tuple(cfg_dict["cnn_widths"])
    config = ModelConfig(**cfg_dict)
    vw = header["vocab"]
    vocab = Vocabulary({w: i for i, w in enumerate(vw["words"])},
                       np.array(vw["counts"], dtype=np.int64), vw["min_count"])
    offset = 16 + hlen
    tensors = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(data):
            raise ModelError(f"{path}: truncated tensor {spec['name']!r}")
        tensors[spec["name"]] = np.frombuffer(
            data[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end

    tmeta = header["table"]
    if tmeta["mode"] == "onehot":
        table = WordInputTable.one_hot(tmeta["vocab_size"])
    else:
        table = WordInputTable.pretrained(tensors["table"])

    def unpack(prefix):
        if config.encoder == "mov":
            return MovParams(tensors[f"{prefix}/W"])
        return CnnParams(config.cnn_widths,
                         {w: tensors[f"{prefix}/conv{w}"] for w in config.cnn_widths},
                         {w: tensors[f"{prefix}/bias{w}"] for w in config.cnn_widths},
                         tensors[f"{prefix}/proj"], tensors[f"{prefix}/proj_bias"])

    bias = tensors.get("bias", np.zeros(1, dtype=np.float32))
    state = ModelState(config, vocab, table, unpack("E"), unpack("C"), bias,
                       {}, {}, 0, header["catalog_hash"])
    for name, p in state.named_params().items():
        state.adam_m[name] = np.zeros_like(p)
        state.adam_v[name] = np.zeros_like(p)
    return state


def check_catalog_hash(state: ModelState, catalog: Catalog) -> bool:
    """True when the catalog matches the one the model was trained on."""
    return state.catalog_hash == catalog.content_hash()
