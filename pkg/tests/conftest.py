import sys

import numpy as np
import pytest

from kalnat.obsmodel import Minibatch, TwoTowerModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, k, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    eig = np.geomspace(1.0, cond, k) if k > 1 else np.array([1.0])
    return (Q * eig) @ Q.T


def toy_problem(rng, m=10, d_in=32, d_embed=16, rank=2, spread=0.3):
    model = TwoTowerModel.random(d_in, d_embed, rank, rng=rng)
    batch = Minibatch(rng.standard_normal((m, d_in)), rng.standard_normal((m, d_in)), np.arange(m))
    theta = model.init_theta(rng) + spread * rng.standard_normal(model.n)
    return model, batch, theta


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
