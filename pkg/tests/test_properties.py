import math

import numpy as np
from hypothesis import given, settings, strategies as st

from bcpnn_xai.config_xai import differentiation
from bcpnn_xai.core import NetworkConfig, soft_wta
from bcpnn_xai.explain import attribute, certified_radius, margins, surprise_from_posterior
from bcpnn_xai.learning import update_traces
from bcpnn_xai.core import initial_traces
from bcpnn_xai.oracle import sampled_flip_check

from conftest import random_model, random_simplices, rng_for

seeds = st.integers(0, 2**32 - 1)
layouts = st.lists(st.integers(2, 4), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(seeds, layouts, layouts, st.floats(0.0, 1.0))
def test_attribution_completeness(seed, in_sizes, hid_sizes, density):
    rng = rng_for(seed)
    m = random_model(rng, tuple(in_sizes), tuple(hid_sizes), density=density, scale=3.0)
    x = random_simplices(rng, in_sizes)
    state = m.forward(x)
    for j, M in enumerate(hid_sizes):
        for k in range(M):
            a = attribute(state, m, (j, k))
            assert abs(a.residual) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds, layouts, st.floats(-50, 50))
def test_soft_wta_simplex_and_shift_invariance(seed, sizes, shift):
    rng = rng_for(seed)
    s = 10 * rng.standard_normal(sum(sizes))
    offs = np.concatenate([[0], np.cumsum(sizes)])
    p = soft_wta(s, offs)
    np.testing.assert_allclose(np.add.reduceat(p, offs[:-1]), 1.0, atol=1e-12)
    np.testing.assert_allclose(soft_wta(s + shift, offs), p, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, layouts, layouts, st.integers(1, 60))
def test_trace_marginals_stay_simplices(seed, in_sizes, hid_sizes, n):
    rng = rng_for(seed)
    cfg = NetworkConfig(tuple(in_sizes), tuple(hid_sizes))
    tr = initial_traces(cfg)
    for _ in range(n):
        update_traces(tr, random_simplices(rng, in_sizes), random_simplices(rng, hid_sizes), 5.0, cfg)
    np.testing.assert_allclose(np.add.reduceat(tr.p_pre, cfg.input_offsets[:-1]), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.add.reduceat(tr.p_post, cfg.hidden_offsets[:-1]), 1.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, layouts)
def test_surprise_and_margin_bounds(seed, sizes):
    rng = rng_for(seed)
    p = random_simplices(rng, sizes)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    s = surprise_from_posterior(p, offs)
    assert 0.0 <= s.total <= sum(math.log(M) for M in sizes) + 1e-12
    mg = margins(p, offs)
    assert np.all((mg >= 0) & (mg <= 1))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 5), st.integers(2, 5))
def test_differentiation_permutation_invariance_and_symmetry(seed, rows, cols):
    rng = rng_for(seed)
    W = rng.standard_normal((rows, cols))
    d = differentiation(W)
    assert d >= 0
    assert math.isclose(differentiation(W[:, rng.permutation(cols)]), d, rel_tol=1e-12)
    assert math.isclose(differentiation(-W), d, rel_tol=1e-12)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_certificate_is_sound(seed):
    rng = rng_for(seed)
    sizes = (3, 2, 3)
    m = random_model(rng, sizes, (3,), scale=2.0)
    x = np.concatenate([np.eye(M)[rng.integers(M)] for M in sizes])
    c = certified_radius(x, m, 0)
    if not c.unbounded:
        assert sampled_flip_check(m, x, 0, c.radius, 200, seed=seed % 1000) == 0.0


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_explanations_do_not_mutate_the_model(seed):
    rng = rng_for(seed)
    m = random_model(rng, (2, 3), (2, 2))
    before = m.traces.p_joint.copy()
    x = random_simplices(rng, (2, 3))
    attribute(x, m, (1, 1))
    certified_radius(x, m, 0)
    assert m.traces.p_joint.tobytes() == before.tobytes()
