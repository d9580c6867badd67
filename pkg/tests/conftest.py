import numpy as np
import pytest

from bastext.corpus import Basket, Catalog, build_vocabulary, encode_catalog


@pytest.fixture
def tiny_catalog():
    cat = Catalog()
    cat.add("a", "red apple fruit")
    cat.add("b", "green apple fruit")
    cat.add("c", "wheat bread loaf")
    cat.add("d", "rye bread loaf")
    cat.add("e", "sparkling water bottle")
    return cat


@pytest.fixture
def tiny_baskets():
    def b(ids, s):
        return Basket(np.array(sorted(ids), dtype=np.int64), s)
    return [b([0, 1], "t0"), b([0, 1, 4], "t1"), b([2, 3], "t2"),
            b([2, 3, 4], "t3"), b([0, 2], "t4")]


@pytest.fixture
def tiny_vocab(tiny_catalog):
    return build_vocabulary(tiny_catalog)


@pytest.fixture
def tiny_tokens(tiny_catalog, tiny_vocab):
    return encode_catalog(tiny_catalog, tiny_vocab)


def pytest_terminal_summary(terminalreporter):
    """Replay the acceptance-criterion verdict lines after the test summary."""
    import sys
    mod = next((m for name, m in sys.modules.items()
                if name.rpartition(".")[2] == "test_acceptance"), None)
    lines = getattr(mod, "VERDICT_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
