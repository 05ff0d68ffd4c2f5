import numpy as np
import pytest

from spikemeta.basis import build_raised_cosine_basis
from spikemeta.network import ModelParams, NetworkSpec, init_params, make_network


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    """2 inputs, 1 hidden, 1 visible, short window."""
    return make_network(
        n_inputs=2, n_visible=1, n_hidden=1, window_len=4, k_alpha=2,
        preset="full-recurrent",
    )


@pytest.fixture
def small_params(small_spec, rng):
    return init_params(small_spec, rng, scale=0.4)


def single_neuron_spec(window_len=4, k_alpha=2, n_inputs=0):
    """One visible neuron, no hidden, optional inputs feeding it."""
    inputs = tuple(f"in{k}" for k in range(n_inputs))
    return NetworkSpec(
        visible=("v0",),
        hidden=(),
        inputs=inputs,
        synapses=tuple((i, "v0") for i in inputs),
        synaptic_basis=build_raised_cosine_basis(k_alpha, window_len),
        feedback_basis=build_raised_cosine_basis(k_alpha, window_len),
    )


def zero_params(spec) -> ModelParams:
    ka = spec.synaptic_basis.num_basis
    kb = spec.feedback_basis.num_basis
    return ModelParams(
        np.zeros((len(spec.synapses), ka)),
        np.zeros((len(spec.neurons), kb)),
        np.zeros(len(spec.neurons)),
    )
