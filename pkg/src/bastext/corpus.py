"""Corpus ingestion, vocabulary building, dataset splitting, and training-example formation.

Raw transaction data (OnlineRetail-style CSV, Instacart relational CSVs, or the
canonical tab/space-separated text formats) is normalized into a `Catalog` of
products with dense ids plus a list of `Basket`s. Splitting supports a warm-start
mode (every test product seen in training) and a cold-start mode (held-out test
products never seen in training).
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(title: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(title.lower())


@dataclass
class Product:
    id: int
    external_id: str
    title: str
    tokens: list[str]


@dataclass
class Basket:
    product_ids: np.ndarray  # sorted, unique dense ids
    source_id: str

    def __len__(self) -> int:
        return len(self.product_ids)


class Catalog:
    """Dense-id product catalog. Ids are contiguous 0..M-1 in insertion order."""

    def __init__(self):
        self.products: list[Product] = []
        self._by_external: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.products)

    def add(self, external_id: str, title: str) -> int:
        if external_id in self._by_external:
            return self._by_external[external_id]
        pid = len(self.products)
        self.products.append(Product(pid, external_id, title, tokenize(title)))
        self._by_external[external_id] = pid
        return pid

    def get(self, external_id: str) -> int | None:
        return self._by_external.get(external_id)

    def external_ids(self) -> list[str]:
        return [p.external_id for p in self.products]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.products:
            h.update(p.external_id.encode())
            h.update(b"\t")
            h.update(p.title.encode())
            h.update(b"\n")
        return h.hexdigest()


@dataclass
class Vocabulary:
    """Token vocabulary with contiguous indices 0..V-1; the UNK index is V."""

    word_to_index: dict[str, int]
    counts: np.ndarray  # (V,), every entry >= min_count
    min_count: int

    @property
    def size(self) -> int:
        return len(self.word_to_index)

    @property
    def unk_index(self) -> int:
        return self.size

    def encode(self, tokens: list[str]) -> np.ndarray:
        unk = self.unk_index
        return np.array([self.word_to_index.get(t, unk) for t in tokens], dtype=np.int64)

    def words(self) -> list[str]:
        out = [""] * self.size
        for w, i in self.word_to_index.items():
            out[i] = w
        return out


@dataclass
class TrainingExample:
    context_ids: np.ndarray
    candidate_id: int
    label: int  # +1 or -1


@dataclass
class DatasetSplit:
    train: list[Basket]
    validation: list[Basket]
    test: list[Basket]
    mode: str  # "warm" or "cold"
    seed: int
    test_product_ids: set[int] = field(default_factory=set)  # cold mode only
    stats: dict = field(default_factory=dict)


@dataclass
class IngestStats:
    baskets_kept: int = 0
    baskets_dropped_small: int = 0
    products_dropped_empty_title: int = 0
    rows_skipped: int = 0


class CorpusError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def import_dataset(fmt: str, paths: list[str | Path]) -> tuple[Catalog, list[Basket], IngestStats]:
    """Parse raw files into a catalog plus baskets.

    Duplicate products within one transaction collapse to a set; baskets that end
    up with fewer than 2 products and products with empty titles are dropped, with
    the counts reported in `IngestStats`.
    """
    paths = [Path(p) for p in paths]
    for p in paths:
        if not p.exists():
            raise CorpusError(f"input file not found: {p}")
    if fmt == "canonical":
        raw = _read_canonical(paths)
    elif fmt == "onlineretail":
        raw = _read_onlineretail(paths)
    elif fmt == "instacart":
        raw = _read_instacart(paths)
    else:
        raise CorpusError(f"unknown dataset format: {fmt!r}")

    titles, transactions, skipped = raw
    stats = IngestStats(rows_skipped=skipped)
    catalog = Catalog()
    keep: dict[str, int] = {}
    for ext, title in titles.items():
        if not title.strip():
            stats.products_dropped_empty_title += 1
            continue
        keep[ext] = catalog.add(ext, title)

    baskets: list[Basket] = []
    for source_id, members in transactions:
        ids = sorted({keep[m] for m in members if m in keep})
        if len(ids) < 2:
            stats.baskets_dropped_small += 1
            continue
        baskets.append(Basket(np.array(ids, dtype=np.int64), source_id))
    stats.baskets_kept = len(baskets)
    if not baskets:
        raise CorpusError("zero usable baskets after ingestion")
    return catalog, baskets, stats


def _read_canonical(paths: list[Path]):
    """One or two files: [baskets] or [catalog, baskets].

    The catalog file has one `externalId<TAB>title` per line. The baskets file has
    one basket per line as space-separated externalIds. Without a catalog file,
    titles default to the external id itself.
    """
    if len(paths) == 1:
        catalog_path, baskets_path = None, paths[0]
    elif len(paths) == 2:
        catalog_path, baskets_path = paths
    else:
        raise CorpusError("canonical format takes 1 (baskets) or 2 (catalog, baskets) paths")

    titles: dict[str, str] = {}
    skipped = 0
    if catalog_path is not None:
        for line in catalog_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            if "\t" not in line:
                skipped += 1
                continue
            ext, title = line.split("\t", 1)
            titles[ext] = title
    transactions = []
    for i, line in enumerate(baskets_path.read_text(encoding="utf-8").splitlines()):
        members = line.split()
        if not members:
            continue
        if catalog_path is not None:
            unknown = [m for m in members if m not in titles]
            if unknown:
                skipped += 1
                continue
        else:
            for m in members:
                titles.setdefault(m, m)
        transactions.append((f"b{i}", members))
    return titles, transactions, skipped


def _find_column(header: list[str], *needles: str) -> int | None:
    lowered = [c.strip().lower().replace("_", "").replace(" ", "") for c in header]
    for needle in needles:
        for i, col in enumerate(lowered):
            if needle in col:
                return i
    return None


def _read_onlineretail(paths: list[Path]):
    """Transaction CSV with invoice / stock code / description columns."""
    if len(paths) != 1:
        raise CorpusError("onlineretail format takes exactly 1 CSV path")
    titles: dict[str, str] = {}
    groups: dict[str, set[str]] = {}
    skipped = 0
    with paths[0].open(encoding="utf-8", errors="replace", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CorpusError("empty CSV")
        inv = _find_column(header, "invoice")
        stock = _find_column(header, "stockcode", "stock")
        desc = _find_column(header, "description")
        if inv is None or stock is None or desc is None:
            raise CorpusError("onlineretail CSV must have invoice/stockcode/description columns")
        width = max(inv, stock, desc) + 1
        for row in reader:
            if len(row) < width or not row[inv].strip() or not row[stock].strip():
                skipped += 1
                continue
            ext = row[stock].strip()
            titles.setdefault(ext, row[desc].strip())
            groups.setdefault(row[inv].strip(), set()).add(ext)
    transactions = [(invoice, sorted(members)) for invoice, members in sorted(groups.items())]
    return titles, transactions, skipped


def _read_instacart(paths: list[Path]):
    """`products.csv` (product_id, product_name) + one or more order_products CSVs."""
    if len(paths) < 2:
        raise CorpusError("instacart format needs products.csv plus >=1 order_products CSV")
    titles: dict[str, str] = {}
    groups: dict[str, set[str]] = {}
    skipped = 0
    product_files, order_files = [], []
    for p in paths:
        with p.open(encoding="utf-8", errors="replace", newline="") as fh:
            header = next(csv.reader(fh), [])
        if _find_column(header, "productname") is not None:
            product_files.append(p)
        elif _find_column(header, "orderid") is not None:
            order_files.append(p)
        else:
            raise CorpusError(f"unrecognized instacart CSV header in {p}")
    if not product_files or not order_files:
        raise CorpusError("instacart format needs both a products file and order files")

    for p in product_files:
        with p.open(encoding="utf-8", errors="replace", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            pid = _find_column(header, "productid")
            name = _find_column(header, "productname")
            for row in reader:
                if len(row) <= max(pid, name) or not row[pid].strip():
                    skipped += 1
                    continue
                titles.setdefault(row[pid].strip(), row[name].strip())
    for p in order_files:
        with p.open(encoding="utf-8", errors="replace", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            oid = _find_column(header, "orderid")
            pid = _find_column(header, "productid")
            for row in reader:
                if len(row) <= max(oid, pid) or not row[oid].strip() or not row[pid].strip():
                    skipped += 1
                    continue
                groups.setdefault(row[oid].strip(), set()).add(row[pid].strip())
    transactions = [(oid, sorted(members)) for oid, members in sorted(groups.items())]
    return titles, transactions, skipped


def write_canonical(catalog: Catalog, baskets: list[Basket], catalog_path, baskets_path) -> None:
    """Serialize to the canonical two-file format (round-trips through import_dataset)."""
    with open(catalog_path, "w", encoding="utf-8") as fh:
        for p in catalog.products:
            fh.write(f"{p.external_id}\t{p.title}\n")
    ext = catalog.external_ids()
    with open(baskets_path, "w", encoding="utf-8") as fh:
        for b in baskets:
            fh.write(" ".join(ext[i] for i in b.product_ids) + "\n")


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

def build_vocabulary(catalog: Catalog, min_count: int = 1) -> Vocabulary:
    """Count title tokens and keep those with count >= min_count; the rest map to UNK."""
    if len(catalog) == 0:
        raise CorpusError("cannot build vocabulary from an empty catalog")
    counts: dict[str, int] = {}
    for p in catalog.products:
        for t in p.tokens:
            counts[t] = counts.get(t, 0) + 1
    kept = sorted(w for w, c in counts.items() if c >= min_count)
    if not kept:
        raise CorpusError(f"vocabulary is empty at min_count={min_count}")
    word_to_index = {w: i for i, w in enumerate(kept)}
    return Vocabulary(word_to_index, np.array([counts[w] for w in kept], dtype=np.int64), min_count)


def encode_catalog(catalog: Catalog, vocab: Vocabulary) -> list[np.ndarray]:
    """Token-id list per product, with out-of-vocabulary tokens mapped to UNK."""
    return [vocab.encode(p.tokens) for p in catalog.products]


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _partition(baskets: list[Basket], ratios, seed: int) -> tuple[list[Basket], list[Basket], list[Basket]]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(baskets))
    n_train = int(round(ratios[0] * len(baskets)))
    n_val = int(round(ratios[1] * len(baskets)))
    tr = [baskets[i] for i in perm[:n_train]]
    va = [baskets[i] for i in perm[n_train:n_train + n_val]]
    te = [baskets[i] for i in perm[n_train + n_val:]]
    return tr, va, te


def _product_set(baskets: list[Basket]) -> set[int]:
    out: set[int] = set()
    for b in baskets:
        out.update(b.product_ids.tolist())
    return out


def _filter_to(baskets: list[Basket], allowed: set[int]) -> tuple[list[Basket], int, int]:
    """Remove products outside `allowed`; drop baskets reduced below size 2."""
    kept, removed, dropped = [], 0, 0
    for b in baskets:
        mask = np.array([i in allowed for i in b.product_ids], dtype=bool)
        ids = b.product_ids[mask]
        removed += len(b.product_ids) - len(ids)
        if len(ids) >= 2:
            kept.append(Basket(ids, b.source_id))
        else:
            dropped += 1
    return kept, removed, dropped


def split_warm(baskets: list[Basket], ratios=(0.85, 0.05, 0.10), seed: int = 0) -> DatasetSplit:
    """Random basket partition; validation/test baskets keep only products seen in training."""
    tr, va, te = _partition(baskets, ratios, seed)
    if not tr or not te:
        raise CorpusError("warm split produced an empty train or test set")
    train_products = _product_set(tr)
    va, removed_v, dropped_v = _filter_to(va, train_products)
    te, removed_t, dropped_t = _filter_to(te, train_products)
    stats = {"removed_products_validation": removed_v, "removed_products_test": removed_t,
             "dropped_baskets_validation": dropped_v, "dropped_baskets_test": dropped_t}
    return DatasetSplit(tr, va, te, "warm", seed, stats=stats)


def split_cold(baskets: list[Basket], ratios=(0.85, 0.05, 0.10),
               test_product_fraction: float = 0.10, seed: int = 0) -> DatasetSplit:
    """Hold a fraction of test-basket products out of training entirely.

    Test products are chosen uniformly at random among the distinct products
    occurring in test baskets and removed from every training basket; validation
    is then filtered warm-style against the reduced training set.
    """
    tr, va, te = _partition(baskets, ratios, seed)
    if not tr or not te:
        raise CorpusError("cold split produced an empty train or test set")
    rng = np.random.default_rng(seed + 1)
    test_products = sorted(_product_set(te))
    n_cold = int(round(test_product_fraction * len(test_products)))
    if n_cold < 10:
        raise CorpusError(
            f"degenerate cold split: only {n_cold} test products would be held out")
    cold = set(rng.choice(np.array(test_products, dtype=np.int64), size=n_cold,
                          replace=False).tolist())
    warm_allowed = _product_set(baskets) - cold
    tr, removed_tr, dropped_tr = _filter_to(tr, warm_allowed)
    train_products = _product_set(tr)
    va, removed_v, dropped_v = _filter_to(va, train_products)
    stats = {"removed_products_train": removed_tr, "dropped_baskets_train": dropped_tr,
             "removed_products_validation": removed_v, "dropped_baskets_validation": dropped_v}
    return DatasetSplit(tr, va, te, "cold", seed, test_product_ids=cold, stats=stats)


def save_split_manifest(split: DatasetSplit, catalog: Catalog, path) -> None:
    """Text manifest of sourceIds per split (plus mode/seed/cold products) for bit-exact reload."""
    ext = catalog.external_ids()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mode\t{split.mode}\n")
        fh.write(f"seed\t{split.seed}\n")
        for name, part in (("train", split.train), ("validation", split.validation),
                           ("test", split.test)):
            for b in part:
                fh.write(f"{name}\t{b.source_id}\n")
        for pid in sorted(split.test_product_ids):
            fh.write(f"testproduct\t{ext[pid]}\n")


def load_split_manifest(path, catalog: Catalog, baskets: list[Basket]) -> DatasetSplit:
    """Rebuild a split from its manifest by reapplying the deterministic filtering."""
    by_source = {b.source_id: b for b in baskets}
    mode, seed = "warm", 0
    parts: dict[str, list[Basket]] = {"train": [], "validation": [], "test": []}
    cold: set[int] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("\t")
        if key == "mode":
            mode = value
        elif key == "seed":
            seed = int(value)
        elif key in parts:
            if value not in by_source:
                raise CorpusError(f"manifest references unknown basket {value!r}")
            parts[key].append(by_source[value])
        elif key == "testproduct":
            pid = catalog.get(value)
            if pid is None:
                raise CorpusError(f"manifest references unknown product {value!r}")
            cold.add(pid)
        else:
            raise CorpusError(f"bad manifest line: {line!r}")
    tr, va, te = parts["train"], parts["validation"], parts["test"]
    if mode == "warm":
        train_products = _product_set(tr)
        va, _, _ = _filter_to(va, train_products)
        te, _, _ = _filter_to(te, train_products)
        return DatasetSplit(tr, va, te, "warm", seed)
    warm_allowed = _product_set(baskets) - cold
    tr, _, _ = _filter_to(tr, warm_allowed)
    va, _, _ = _filter_to(va, _product_set(tr))
    return DatasetSplit(tr, va, te, "cold", seed, test_product_ids=cold)


# ---------------------------------------------------------------------------
# Training examples
# ---------------------------------------------------------------------------

def form_positive_examples(basket: Basket) -> list[TrainingExample]:
    """Leave-one-out positives: one example per product in the basket."""
    if len(basket) < 2:
        raise CorpusError("positive examples need baskets of size >= 2")
    out = []
    for k in range(len(basket)):
        ctx = np.delete(basket.product_ids, k)
        out.append(TrainingExample(ctx, int(basket.product_ids[k]), +1))
    return out


def sample_negatives(positive: TrainingExample, n: int, num_products: int,
                     rng: np.random.Generator) -> list[TrainingExample]:
    """Draw n uniform negatives sharing the positive's context.

    Candidates are uniform over products outside context ∪ {positive candidate},
    sampled independently with replacement across the n draws.
    """
    if n < 1:
        raise ValueError("negative ratio must be >= 1")
    excluded = np.append(positive.context_ids, positive.candidate_id)
    if num_products <= len(np.unique(excluded)):
        raise ValueError("no eligible negative candidates exist")
    draws = np.empty(n, dtype=np.int64)
    pending = np.arange(n)
    while len(pending):
        cand = rng.integers(0, num_products, size=len(pending))
        draws[pending] = cand
        pending = pending[np.isin(cand, excluded)]
    return [TrainingExample(positive.context_ids, int(j), -1) for j in draws]
