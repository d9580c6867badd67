import json
from pathlib import Path

import pytest

from bastext import cli, corpus
from bastext.synthetic import make_planted_corpus


@pytest.fixture(scope="module")
def raw_corpus(tmp_path_factory):
    """A small planted corpus written in canonical format."""
    d = tmp_path_factory.mktemp("raw")
    catalog, baskets, _, _ = make_planted_corpus(
        num_products=60, num_communities=2, group_sizes=(10, 10, 10),
        num_baskets=400, basket_size=5, seed=0)
    corpus.write_canonical(catalog, baskets, d / "catalog.tsv", d / "baskets.txt")
    return d / "catalog.tsv", d / "baskets.txt"


def _run(argv):
    return cli.main([str(a) for a in argv])


def _pipeline(out: Path, raw, epochs=3):
    cat, bsk = raw
    assert _run(["ingest", "--format", "canonical", cat, bsk, "--out", out]) == 0
    assert _run(["split", "--out", out]) == 0
    assert _run(["train", "--out", out, "--k", "16", "--epochs", str(epochs),
                 "--batch-size", "256", "--dropout", "0.0", "--patience", "100",
                 "--lr", "2e-3"]) == 0


def test_end_to_end_pipeline(tmp_path, raw_corpus, capsys):
    out = tmp_path / "run"
    _pipeline(out, raw_corpus)
    assert (out / "corpus" / "catalog.tsv").exists()
    assert (out / "splits" / "warm.manifest").exists()
    assert (out / "models" / "model.bin").exists()
    assert "epoch 1\t" in (out / "models" / "train_log.txt").read_text()

    for method in ("bastext", "pop", "itemknn"):
        assert _run(["evaluate", "--out", out, "--method", method]) == 0
        report = json.loads((out / "reports" / f"{method}.json").read_text())
        assert set(report["metrics"]) == {"recall@10", "recall@20", "mrr@10", "mrr@20"}
        assert all(0.0 <= v <= 1.0 for v in report["metrics"].values())
    capsys.readouterr()


def test_rerun_is_byte_identical(tmp_path, raw_corpus, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    _pipeline(a, raw_corpus, epochs=2)
    _pipeline(b, raw_corpus, epochs=2)
    capsys.readouterr()
    for rel in ("corpus/catalog.tsv", "corpus/baskets.txt",
                "splits/warm.manifest", "models/model.bin"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    # train log matches apart from wall-clock timings
    strip = lambda p: [l.rsplit("\twall", 1)[0] for l in
                       (p / "models/train_log.txt").read_text().splitlines()]
    assert strip(a) == strip(b)


def test_threads_flag_bit_exact(tmp_path, raw_corpus, capsys):
    cat, bsk = raw_corpus
    models = []
    for threads in ("1", "4"):
        out = tmp_path / f"t{threads}"
        assert _run(["ingest", "--format", "canonical", cat, bsk, "--out", out]) == 0
        assert _run(["split", "--out", out]) == 0
        assert _run(["train", "--out", out, "--k", "16", "--epochs", "2",
                     "--batch-size", "256", "--threads", threads]) == 0
        models.append((out / "models" / "model.bin").read_bytes())
    capsys.readouterr()
    assert models[0] == models[1]


def test_query_commands_smoke(tmp_path, raw_corpus, capsys):
    out = tmp_path / "run"
    _pipeline(out, raw_corpus)
    catalog, _ = cli._load_corpus(out)
    eid0, eid1 = catalog.products[0].external_id, catalog.products[1].external_id
    capsys.readouterr()

    assert _run(["similar", eid0, "--out", out, "--top-n", "3"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3

    assert _run(["alsobuy", eid0, "--out", out, "--top-n", "3"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3

    assert _run(["search", catalog.products[0].title, "--out", out, "--top-n", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert lines[0].split("\t")[0] == eid0  # own title is its own best match

    assert _run(["next", eid0, eid1, "--out", out, "--top-n", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    shown = {l.split("\t")[0] for l in lines}
    assert eid0 not in shown and eid1 not in shown  # context excluded


def test_external_scores_path(tmp_path, raw_corpus, capsys):
    out = tmp_path / "run"
    cat, bsk = raw_corpus
    assert _run(["ingest", "--format", "canonical", cat, bsk, "--out", out]) == 0
    assert _run(["split", "--out", out]) == 0
    catalog, baskets = cli._load_corpus(out)
    split = corpus.load_split_manifest(out / "splits" / "warm.manifest", catalog, baskets)
    from bastext.evaluation import form_test_cases
    cases = form_test_cases(split)
    f = tmp_path / "scores.tsv"
    f.write_text("".join(f"{i}\t{c.held_out_id}:1.0\n" for i, c in enumerate(cases)))
    assert _run(["evaluate", "--out", out, "--method", "external", "--scores", f]) == 0
    report = json.loads((out / "reports" / "external.json").read_text())
    assert report["metrics"]["recall@10"] == 1.0
    capsys.readouterr()


def test_missing_corpus_exits(tmp_path, capsys):
    with pytest.raises(SystemExit):
        _run(["split", "--out", tmp_path / "nothing"])
    capsys.readouterr()


def test_unknown_product_exits(tmp_path, raw_corpus, capsys):
    out = tmp_path / "run"
    _pipeline(out, raw_corpus, epochs=1)
    capsys.readouterr()
    with pytest.raises(SystemExit):
        _run(["similar", "no-such-id", "--out", out])
    capsys.readouterr()


def test_malformed_input_reports_error(tmp_path, capsys):
    bad = tmp_path / "catalog.tsv"
    bad.write_text("only-one-column\n")
    baskets = tmp_path / "baskets.txt"
    baskets.write_text("a b\n")
    rc = _run(["ingest", "--format", "canonical", bad, baskets, "--out", tmp_path / "o"])
    captured = capsys.readouterr()
    assert rc == 1
    assert captured.err.startswith("error:")
