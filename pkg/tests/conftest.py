import numpy as np
import pytest

from bcpnn_xai.core import Network, NetworkConfig, one_hot
from bcpnn_xai.learning import train
from bcpnn_xai.oracle import fruit_task


def rng_for(seed):
    return np.random.Generator(np.random.Philox(seed))


def random_simplices(rng, sizes, n=None):
    shape = () if n is None else (n,)
    return np.concatenate([rng.dirichlet(np.ones(M), size=shape) for M in sizes], axis=-1)


def random_model(rng, input_sizes, hidden_sizes, density=1.0, scale=1.0, recurrence=False):
    """Model with arbitrary biases and weights; some connections masked."""
    mask = rng.random((len(input_sizes), len(hidden_sizes))) < density
    mask[rng.integers(len(input_sizes), size=len(hidden_sizes)), np.arange(len(hidden_sizes))] = True
    cfg = NetworkConfig(input_sizes, hidden_sizes, mask, recurrence=recurrence)
    bias = np.log(random_simplices(rng, hidden_sizes))
    weight = scale * rng.standard_normal((cfg.n_input, cfg.n_hidden))
    rec = None
    if recurrence:
        rec = scale * rng.standard_normal((cfg.n_hidden, cfg.n_hidden))
    return Network.from_parameters(cfg, bias, weight, recurrent=rec)


def fruit_config(recurrence=True, tau=1e9):
    t = fruit_task()
    return NetworkConfig(
        t.sizes, (4,), recurrence=recurrence, trace_time_constant=tau,
        input_names=t.attribute_names, input_states=t.state_names,
        hidden_names=("fruit",), hidden_states=(t.class_names,),
    )


@pytest.fixture(scope="session")
def fruit_model():
    task = fruit_task(0.1)
    S, L = task.sample(2000, 1)
    model = Network(fruit_config())
    train(model, one_hot(S, task.sizes), L, epochs=1, seed=1)
    return model


@pytest.fixture
def rng():
    return rng_for(1234)


# acceptance lines collected by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
