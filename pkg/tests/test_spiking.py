import math

import numpy as np
import pytest

from bcpnn_xai.core import Network, NetworkConfig
from bcpnn_xai.errors import ConfigurationError
from bcpnn_xai.spiking import (
    SpikeTraceState, make_rng, raster_lines, simulate, spike_probability, spike_step,
    temporal_saliency,
)


def small_config(**kw):
    return NetworkConfig((2, 2), (2,), z_time_constants=(5.0, 5.0), **kw)


def test_zero_rate_never_spikes():
    cfg = small_config()
    run = simulate(np.zeros(4), np.zeros(2), cfg, 500, seed=1, learn=False, record=True)
    assert not run.spikes_pre.any() and not run.spikes_post.any()
    assert np.all(run.state.z_pre == 0)


def test_spike_probability_caps_at_one():
    np.testing.assert_allclose(spike_probability([0.5, 20.0], 100.0, 1.0), [0.05, 1.0])


def test_stationary_z_mean():
    cfg = NetworkConfig((2,), (2,), z_time_constants=(20.0, 20.0))
    pi = 0.6
    run = simulate([pi, 1 - pi], [pi, 1 - pi], cfg, 40000, seed=3, learn=False, record=True)
    p = pi * 100.0 / 1000.0
    expected_raw = p / (1 - math.exp(-1.0 / 20.0))
    raw_mean = run.zhat_pre[200:, 0].mean() / run.state.scale(run.state.decay_pre)
    assert raw_mean == pytest.approx(expected_raw, rel=0.05)
    assert run.zhat_pre[200:, 0].mean() == pytest.approx(pi, rel=0.05)


def test_spike_count_within_three_sigma():
    cfg = NetworkConfig((2,), (2,))
    n, pi = 20000, 0.3
    run = simulate([pi, 1 - pi], [pi, 1 - pi], cfg, n, seed=7, learn=False, record=True)
    p = pi * 0.1
    count = run.spikes_pre[:, 0].sum()
    assert abs(count - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_seed_determinism():
    cfg = small_config()
    a = simulate(np.full(4, 0.5), np.full(2, 0.5), cfg, 300, seed=11, record=True)
    b = simulate(np.full(4, 0.5), np.full(2, 0.5), cfg, 300, seed=11, record=True)
    assert a.spikes_pre.tobytes() == b.spikes_pre.tobytes()
    assert a.state.traces.p_joint.tobytes() == b.state.traces.p_joint.tobytes()
    assert a.metadata["seed"] == 11


def test_identical_spikes_give_symmetric_traces():
    cfg = NetworkConfig((2,), (2,), z_time_constants=(5.0, 5.0))
    st = SpikeTraceState.fresh(cfg)
    rng = make_rng(0)
    for _ in range(200):
        s = rng.random(2) < 0.2
        spike_step(None, None, st, None, 100.0, cfg, spikes=(s, s))
    np.testing.assert_array_equal(st.z_pre, st.z_post)
    np.testing.assert_allclose(st.traces.p_joint, st.traces.p_joint.T)


def test_single_spike_pair_peaks_at_coincidence():
    cfg = NetworkConfig((2,), (2,), z_time_constants=(5.0, 5.0))
    st = SpikeTraceState.fresh(cfg)
    prod = []
    for t in range(40):
        s = np.array([t == 10, False])
        spike_step(None, None, st, None, 100.0, cfg, learn=False, spikes=(s, s))
        prod.append(st.z_pre[0] * st.z_post[0])
    assert int(np.argmax(prod)) == 10
    assert prod[11] == pytest.approx(math.exp(-2.0 / 5.0))


def test_masked_connection_has_zero_saliency():
    mask = np.array([[True], [False]])
    cfg = NetworkConfig((2, 2), (2,), mask, z_time_constants=(5.0, 5.0))
    run = simulate(np.full(4, 0.5), np.full(2, 0.5), cfg, 400, seed=2, record=True, tau_p=50.0)
    net = Network(cfg, run.state.traces)
    sal = temporal_saliency(run.zhat_pre, run.zhat_post, net.weights, 100)
    assert np.all(sal.contributions[:, 2:, :] == 0.0)
    assert sal.window_totals.shape == (4, 2)
    assert sal.window_bounds_ms(1) == (100.0, 200.0)


def test_saliency_window_longer_than_run():
    cfg = small_config()
    run = simulate(np.full(4, 0.5), np.full(2, 0.5), cfg, 50, seed=2, record=True)
    net = Network(cfg, run.state.traces)
    with pytest.raises(ConfigurationError):
        temporal_saliency(run.zhat_pre, run.zhat_post, net.weights, 51)


def test_saliency_peak_window_tracks_activity():
    cfg = NetworkConfig((2,), (2,), z_time_constants=(5.0, 5.0))
    net = Network.from_parameters(cfg, np.log([0.5, 0.5]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    T = 300
    rp = np.zeros((T, 2))
    rp[200:, 0] = 1.0
    run = simulate(rp, np.array([1.0, 0.0]), cfg, T, seed=4, learn=False, record=True)
    sal = temporal_saliency(run.zhat_pre, run.zhat_post, net.weights, 100, target=0)
    assert sal.contributions.shape == (T, 2)
    assert int(sal.peak_window[0]) == 2


def test_raster_lines():
    sp = np.zeros((3, 4), dtype=bool)
    sp[1, 3] = True
    sp[2, 0] = True
    assert list(raster_lines(sp, "input", (2, 2))) == ["1,input,1,1", "2,input,0,0"]


def test_invalid_spiking_parameters():
    with pytest.raises(ConfigurationError):
        SpikeTraceState.fresh(small_config(), dt=0.0)
    with pytest.raises(ConfigurationError):
        simulate(np.zeros((3, 4)), np.zeros(2), small_config(), 5)
