import numpy as np
import pytest

from funs.data import SyntheticConfig, generate_synthetic, zscore
from funs.graph import NodePartition, SensorGraph

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_graph(rng, n, p=0.35, z=2, directed=True):
    """Random directed graph with labels and coordinates; may contain
    isolated nodes."""
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p]
    if not directed:
        return SensorGraph.from_undirected(n, pairs, rng.normal(size=(n, z)), rng.uniform(size=(n, 2)))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return SensorGraph(n, edges, rng.normal(size=(n, z)), rng.uniform(size=(n, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bundle():
    cfg = SyntheticConfig(n_nodes=24, T=96, period=48, burn_in=50, seed=5)
    bundle, _ = zscore(generate_synthetic(cfg))
    return bundle


@pytest.fixture
def small_partition():
    return NodePartition(v_in=tuple(range(0, 24, 3)), v_opt=tuple(range(1, 24, 3)),
                         v_val=(2, 5, 8, 11), v_test=(14, 17, 20, 23))


def fd_compare(f, x, eps=1e-5):
    """Tape gradient of scalar ``f`` at ``x`` next to central differences."""
    from funs import tensor as tn
    x0 = np.array(x, dtype=np.float64)
    leaf = tn.Tensor(x0.copy(), requires_grad=True)
    analytic = tn.backward(f(leaf)).get(leaf, np.zeros_like(x0))
    numeric = np.zeros_like(x0)
    with tn.no_grad():
        for idx in np.ndindex(*x0.shape):
            xp, xm = x0.copy(), x0.copy()
            xp[idx] += eps
            xm[idx] -= eps
            numeric[idx] = (f(tn.Tensor(xp)).item() - f(tn.Tensor(xm)).item()) / (2 * eps)
    return analytic, numeric


def model_gradient_errors(model, loss_fn):
    """Per parameter: (strict relative error, max |analytic - numeric|,
    relative error over coordinates above the round-off floor)."""
    from funs import tensor as tn
    out = {}
    for name in list(model.params):
        orig = model.params[name]

        def f(t):
            model.params[name] = t
            return loss_fn()
        try:
            rel = tn.grad_check(f, orig.data)
            a, num = fd_compare(f, orig.data)
        finally:
            model.params[name] = orig
        big = np.maximum(np.abs(a), np.abs(num)) > 1e-6
        rel_big = float(np.max(np.abs(a - num)[big] / np.maximum(np.abs(a), np.abs(num))[big])) if big.any() else 0.0
        out[name] = (rel, float(np.max(np.abs(a - num))), rel_big)
    return out
