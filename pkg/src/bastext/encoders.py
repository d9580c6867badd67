"""Text encoders mapping a token-id sequence to a K-dim vector.

Two architectures share one interface: a mean-of-word-vectors encoder
(mean of input word vectors through a linear layer, then ReLU) and a
convolutional encoder (per-width filter banks, ReLU, max-over-time pooling,
linear projection, ReLU). Both support one-hot or pretrained word inputs and
have exact analytic backward passes.

Batch entry points (`encode_batch` / `backward_batch`) operate on a list of
token-id arrays at once; the single-sequence wrappers exist for direct use.
Token index V (the UNK index, and right padding) maps to the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .corpus import Vocabulary


class EncoderError(RuntimeError):
    pass


@dataclass
class WordInputTable:
    """Per-word input vectors: one-hot rows (dim = V) or a pretrained V x d matrix."""

    mode: str  # "onehot" | "pretrained"
    dim: int
    vocab_size: int
    vectors: np.ndarray | None = None  # (V, d), pretrained only

    @classmethod
    def one_hot(cls, vocab_size: int) -> "WordInputTable":
        return cls("onehot", vocab_size, vocab_size)

    @classmethod
    def pretrained(cls, vectors: np.ndarray) -> "WordInputTable":
        v, d = vectors.shape
        return cls("pretrained", d, v, vectors)


def load_pretrained_vectors(path, vocab: Vocabulary) -> tuple[WordInputTable, float]:
    """Read a text word-vector file (`word v1 ... vd` per line) against a vocabulary.

    Returns the table plus the fraction of vocabulary words matched; unmatched
    words keep the zero vector.
    """
    dim = None
    vectors = None
    matched = 0
    for lineno, line in enumerate(Path(path).open(encoding="utf-8", errors="replace"), 1):
        parts = line.rstrip("\n").split()
        if not parts:
            continue
        word, vals = parts[0], parts[1:]
        if dim is None:
            dim = len(vals)
            if dim == 0:
                raise EncoderError(f"{path}:{lineno}: no vector components")
            vectors = np.zeros((vocab.size, dim), dtype=np.float32)
        elif len(vals) != dim:
            raise EncoderError(
                f"{path}:{lineno}: dimensionality {len(vals)} != {dim} of earlier lines")
        idx = vocab.word_to_index.get(word)
        if idx is not None:
            vectors[idx] = np.array(vals, dtype=np.float32)
            matched += 1
    if dim is None or matched == 0:
        raise EncoderError(f"no vocabulary words matched in {path}")
    return WordInputTable.pretrained(vectors), matched / vocab.size


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class MovParams:
    W: np.ndarray  # (d, K)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W": self.W}


@dataclass
class CnnParams:
    widths: tuple[int, ...]
    filters: dict[int, np.ndarray]  # width -> (F, width, d)
    biases: dict[int, np.ndarray]  # width -> (F,)
    proj: np.ndarray  # (F * len(widths), K)
    proj_bias: np.ndarray  # (K,)

    @property
    def num_filters(self) -> int:
        return next(iter(self.filters.values())).shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for w in self.widths:
            out[f"conv{w}"] = self.filters[w]
            out[f"bias{w}"] = self.biases[w]
        out["proj"] = self.proj
        out["proj_bias"] = self.proj_bias
        return out


def init_mov(input_dim: int, k: int, rng: np.random.Generator, dtype=np.float32) -> MovParams:
    bound = 1.0 / np.sqrt(input_dim)
    return MovParams(rng.uniform(-bound, bound, size=(input_dim, k)).astype(dtype))


def init_cnn(input_dim: int, k: int, widths: tuple[int, ...], num_filters: int,
             rng: np.random.Generator, dtype=np.float32) -> CnnParams:
    if list(widths) != sorted(set(widths)) or min(widths) < 1:
        raise EncoderError(f"filter widths must be strictly increasing positive ints: {widths}")
    bound = 1.0 / np.sqrt(input_dim)
    filters = {w: rng.uniform(-bound, bound, size=(num_filters, w, input_dim)).astype(dtype)
               for w in widths}
    biases = {w: np.zeros(num_filters, dtype=dtype) for w in widths}
    fan_in = num_filters * len(widths)
    pbound = 1.0 / np.sqrt(fan_in)
    proj = rng.uniform(-pbound, pbound, size=(fan_in, k)).astype(dtype)
    return CnnParams(tuple(widths), filters, biases, proj, np.zeros(k, dtype=dtype))


@dataclass
class EncoderOutput:
    vector: np.ndarray
    cache: object
    degenerate: bool  # True when the token list was empty


# ---------------------------------------------------------------------------
# Mean-of-vectors encoder
# ---------------------------------------------------------------------------

def _mean_matrix(token_ids: list[np.ndarray], vocab_size: int, dtype) -> sparse.csr_matrix:
    """Sparse (P, V) matrix whose row p averages product p's in-vocabulary tokens.

    The denominator is the full token count |s| (UNK tokens contribute a zero
    vector but still count), matching the mean over all words of the title.
    """
    rows, cols, vals = [], [], []
    for p, toks in enumerate(token_ids):
        if len(toks) == 0:
            continue
        inv = 1.0 / len(toks)
        valid = toks[toks < vocab_size]
        rows.append(np.full(len(valid), p, dtype=np.int64))
        cols.append(valid)
        vals.append(np.full(len(valid), inv, dtype=dtype))
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0, dtype=dtype)
    m = sparse.coo_matrix((vals, (rows, cols)), shape=(len(token_ids), vocab_size)).tocsr()
    m.sum_duplicates()
    return m


def _dropout_mask(shape, rate: float, rng: np.random.Generator | None, dtype):
    if rate <= 0.0 or rng is None:
        return None
    mask = (rng.random(shape) >= rate).astype(dtype)
    mask /= np.asarray(1.0 - rate, dtype=dtype)
    return mask


def _mov_forward(params: MovParams, table: WordInputTable, token_ids, dropout_rate, rng):
    dtype = params.W.dtype
    S = _mean_matrix(token_ids, table.vocab_size, dtype)
    if table.mode == "onehot":
        xbar = None
        pre = np.asarray(S @ params.W)
    else:
        xbar = np.asarray(S @ table.vectors.astype(dtype, copy=False))
        pre = xbar @ params.W
    h = np.maximum(pre, 0)
    mask = _dropout_mask(h.shape, dropout_rate, rng, dtype)
    out = h if mask is None else h * mask
    cache = {"S": S, "xbar": xbar, "relu": pre > 0, "drop": mask, "table": table}
    return out, cache


def _mov_backward(params: MovParams, cache, d_out, want_input_grads):
    d_h = d_out if cache["drop"] is None else d_out * cache["drop"]
    d_pre = d_h * cache["relu"]
    S = cache["S"]
    grads = {}
    if cache["xbar"] is None:
        grads["W"] = np.asarray((S.T @ d_pre))
    else:
        grads["W"] = cache["xbar"].T @ d_pre
        if want_input_grads:
            d_xbar = d_pre @ params.W.T
            grads["input"] = np.asarray(S.T @ d_xbar)
    return grads


# ---------------------------------------------------------------------------
# Convolutional encoder
# ---------------------------------------------------------------------------

def _cnn_forward(params: CnnParams, table: WordInputTable, token_ids, dropout_rate, rng):
    dtype = params.proj.dtype
    n = len(token_ids)
    wmax = max(params.widths)
    pad_id = table.vocab_size  # maps to the zero vector
    lens = np.array([max(len(t), wmax) for t in token_ids], dtype=np.int64)
    lmax = int(lens.max()) if n else wmax
    T = np.full((n, lmax), pad_id, dtype=np.int64)
    for p, toks in enumerate(token_ids):
        T[p, : len(toks)] = toks

    X = None
    if table.mode == "pretrained":
        padded = np.vstack([table.vectors.astype(dtype, copy=False),
                            np.zeros((1, table.dim), dtype=dtype)])
        X = padded[T]  # (n, lmax, d)

    pooled_parts = []
    per_width = {}
    f_idx = None
    for w in params.widths:
        lw = lmax - w + 1
        fw = params.filters[w]
        nf = fw.shape[0]
        if table.mode == "onehot":
            fe = np.concatenate([fw, np.zeros((nf, w, 1), dtype=dtype)], axis=2)
            conv = np.zeros((n, lw, nf), dtype=dtype)
            for o in range(w):
                conv += fe[:, o, T[:, o: o + lw]].transpose(1, 2, 0)
        else:
            windows = np.lib.stride_tricks.sliding_window_view(X, w, axis=1)
            conv = np.einsum("pldo,fod->plf", windows, fw, optimize=True).astype(dtype, copy=False)
        conv += params.biases[w]
        act = np.maximum(conv, 0)
        invalid = np.arange(lw)[None, :] > (lens - w)[:, None]
        act = np.where(invalid[:, :, None], -np.inf, act)
        tstar = np.argmax(act, axis=1)  # (n, F); ties -> first position
        pooled = np.take_along_axis(act, tstar[:, None, :], axis=1)[:, 0, :]
        convstar = np.take_along_axis(conv, tstar[:, None, :], axis=1)[:, 0, :]
        pooled_parts.append(pooled.astype(dtype, copy=False))
        per_width[w] = {"tstar": tstar, "relu": convstar > 0}
    features = np.concatenate(pooled_parts, axis=1) if n else np.zeros((0, params.proj.shape[0]), dtype)
    mask = _dropout_mask(features.shape, dropout_rate, rng, dtype)
    feat_d = features if mask is None else features * mask
    z = feat_d @ params.proj + params.proj_bias
    out = np.maximum(z, 0)
    empty = np.array([len(t) == 0 for t in token_ids], dtype=bool)
    if empty.any():
        out = np.where(empty[:, None], 0, out)
    cache = {"T": T, "X": X, "per_width": per_width, "feat_d": feat_d, "drop": mask,
             "zmask": (z > 0) & ~empty[:, None], "table": table, "empty": empty}
    return out, cache


def _cnn_backward(params: CnnParams, cache, d_out, want_input_grads):
    dtype = params.proj.dtype
    T = cache["T"]
    n = T.shape[0]
    d_z = d_out * cache["zmask"]
    grads = {"proj": cache["feat_d"].T @ d_z, "proj_bias": d_z.sum(axis=0)}
    d_feat = d_z @ params.proj.T
    if cache["drop"] is not None:
        d_feat = d_feat * cache["drop"]
    if want_input_grads:
        grads["input"] = np.zeros((cache["table"].vocab_size, cache["table"].dim), dtype=dtype)
    p_idx = np.arange(n)[:, None]
    offset = 0
    for w in params.widths:
        fw = params.filters[w]
        nf = fw.shape[0]
        pw = cache["per_width"][w]
        val = d_feat[:, offset: offset + nf] * pw["relu"]
        offset += nf
        grads[f"bias{w}"] = val.sum(axis=0)
        tstar = pw["tstar"]
        d_fw = np.zeros_like(fw)
        f_idx = np.broadcast_to(np.arange(nf)[None, :], tstar.shape)
        for o in range(w):
            tok = T[p_idx, tstar + o]  # (n, F)
            if cache["X"] is None:
                d_fe = np.zeros((nf, fw.shape[2] + 1), dtype=dtype)
                np.add.at(d_fe, (f_idx, tok), val)
                d_fw[:, o, :] += d_fe[:, :-1]
            else:
                xg = cache["X"][p_idx, tstar + o, :]  # (n, F, d)
                d_fw[:, o, :] += np.einsum("pf,pfd->fd", val, xg, optimize=True)
                if want_input_grads:
                    keep = tok < cache["table"].vocab_size
                    contrib = val[:, :, None] * fw[None, :, o, :]
                    np.add.at(grads["input"], tok[keep], contrib[keep])
        grads[f"conv{w}"] = d_fw
    return grads


# ---------------------------------------------------------------------------
# Public interface
# ---------------------------------------------------------------------------

def encode_batch(params, table: WordInputTable, token_ids: list[np.ndarray], *,
                 dropout_rate: float = 0.0, rng: np.random.Generator | None = None):
    """Encode a batch of token-id sequences; returns (n, K) outputs plus a backward cache."""
    if isinstance(params, MovParams):
        return _mov_forward(params, table, token_ids, dropout_rate, rng)
    if isinstance(params, CnnParams):
        return _cnn_forward(params, table, token_ids, dropout_rate, rng)
    raise EncoderError(f"unknown encoder parameters: {type(params)!r}")


def backward_batch(params, cache, d_out: np.ndarray, *, want_input_grads: bool = False):
    """Exact gradients of encode_batch w.r.t. parameters (and, optionally, input vectors)."""
    if d_out.shape[1] != (params.W.shape[1] if isinstance(params, MovParams)
                          else params.proj.shape[1]):
        raise EncoderError(f"output-gradient width {d_out.shape[1]} does not match encoder")
    if isinstance(params, MovParams):
        return _mov_backward(params, cache, d_out, want_input_grads)
    return _cnn_backward(params, cache, d_out, want_input_grads)


def encode_mov(params: MovParams, table: WordInputTable, tokens: np.ndarray) -> EncoderOutput:
    out, cache = _mov_forward(params, table, [np.asarray(tokens, dtype=np.int64)], 0.0, None)
    return EncoderOutput(out[0], cache, len(tokens) == 0)


def encode_cnn(params: CnnParams, table: WordInputTable, tokens: np.ndarray) -> EncoderOutput:
    out, cache = _cnn_forward(params, table, [np.asarray(tokens, dtype=np.int64)], 0.0, None)
    return EncoderOutput(out[0], cache, len(tokens) == 0)


def encoder_backward(params, output: EncoderOutput, out_grad: np.ndarray):
    return backward_batch(params, output.cache, np.asarray(out_grad)[None, :])
