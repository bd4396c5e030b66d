import pytest

from iotdns.bundle import ModelBundle
from iotdns.dataset import build_splits
from iotdns.mlp import ModelConfig, metrics, train
from iotdns.synth import distinct_corpus, generate


@pytest.fixture(scope="session")
def small_corpus():
    c = distinct_corpus(n=6, boots_per_day=30)
    return c, generate(c, seed=21)


@pytest.fixture(scope="session")
def trained(small_corpus):
    """(bundle, splits, test metrics) for a 2-layer product model at h=16, td=30."""
    _, traces = small_corpus
    splits, labels, bounds = build_splits(traces, 16, 30, "product", seed=0)
    net, _ = train(ModelConfig(16, len(labels), 2, seed=1), splits)
    return ModelBundle(labels, bounds, net, 16, 30.0, 1), splits, metrics(net, splits.test)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
