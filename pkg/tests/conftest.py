import itertools

import numpy as np
import pytest

from tcgm.probcore import DiscreteJointTable


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def support_points(table):
    return list(itertools.product(*(range(s) for s in table.modality_supports)))


def copies_table(m, states=2):
    """M perfect copies of one uniform variable, no label axis."""
    probs = np.zeros((states,) * m)
    for s in range(states):
        probs[(s,) * m] = 1.0 / states
    return DiscreteJointTable.from_array(probs, has_label=False)


def product_table(*marginals):
    probs = marginals[0]
    for q in marginals[1:]:
        probs = np.multiply.outer(probs, q)
    return DiscreteJointTable.from_array(probs, has_label=False)


def grad_check_case(seed, loss, n_layers, activation="tanh"):
    """Relative error of backprop vs finite differences for one seeded case.

    ``loss`` is "ce" (one net) or "tcg" (three nets, full penalty). Only the
    first net's parameters are perturbed; the others stay fixed.
    """
    from tcgm.losses import PenaltySamplingPlan, cross_entropy, tcg_batch
    from tcgm.neuralnet import ClassifierNet, gradient_check

    rng = np.random.default_rng(seed)
    k, d, n = 3, 4, 8
    hidden = [5] * (n_layers - 1)
    m = 1 if loss == "ce" else 3
    nets = [ClassifierNet([d, *hidden, k], activation, seed=seed * 10 + j) for j in range(m)]
    xs = [rng.normal(size=(n, d)) for _ in range(m)]
    y = rng.integers(0, k, size=n)
    prior = rng.dirichlet(np.full(k, 5.0))
    plan = PenaltySamplingPlan.full()

    def value(net):
        probs = [net.forward(xs[0])[0]] + [o.forward(x)[0] for o, x in zip(nets[1:], xs[1:])]
        if loss == "ce":
            return cross_entropy(probs[0], y).value
        return tcg_batch(probs, prior, plan).value

    def grad(net):
        probs, cache = net.forward(xs[0])
        if loss == "ce":
            return net.backward(cache, cross_entropy(probs, y).grads)
        others = [o.forward(x)[0] for o, x in zip(nets[1:], xs[1:])]
        return net.backward(cache, tcg_batch([probs] + others, prior, plan).grads[0])

    return gradient_check(value, grad, nets[0])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
