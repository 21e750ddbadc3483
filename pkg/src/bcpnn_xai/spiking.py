"""Poisson-spiking variant: z-traces filter spikes, p-traces integrate them.

Spikes are Bernoulli per time step with probability ``min(1, pi * f_max * dt)``
(``f_max`` in spikes/s, ``dt`` in ms).  The z-trace of a unit is a leaky spike
counter, ``z <- z * exp(-dt / tau_z) + s``.  For learning and saliency it is
rescaled by its stationary mean per unit rate,

    z_hat = z * (1 - exp(-dt / tau_z)) / (f_max * dt)

so that ``E[z_hat] = pi`` and the p-traces recover the rate-based rule in
expectation.  All randomness comes from a Philox counter-based generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Network, NetworkConfig, TraceState, initial_traces
from .errors import ConfigurationError
from .learning import update_traces

DEFAULT_DT = 1.0
DEFAULT_FMAX = 100.0
Z_INDEX_READING = "z-traces are per minicolumn: contribution(t) = z_im(t) * z_jk(t) * w_imjk"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SpikeTraceState:
    z_pre: np.ndarray
    z_post: np.ndarray
    traces: TraceState
    dt: float = DEFAULT_DT
    tau_zi: float = 20.0
    tau_zj: float = 20.0
    f_max: float = DEFAULT_FMAX
    steps: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        if not (self.tau_zi > 0 and self.tau_zj > 0):
            raise ConfigurationError("z time constants must be positive")
        if not self.f_max > 0:
            raise ConfigurationError("maximum rate must be positive")

    @classmethod
    def fresh(cls, config: NetworkConfig, dt: float = DEFAULT_DT, f_max: float = DEFAULT_FMAX,
              tau_z: Optional[tuple] = None) -> "SpikeTraceState":
        tau_zi, tau_zj = config.z_time_constants if tau_z is None else tau_z
        return cls(
            np.zeros(config.n_input),
            np.zeros(config.n_hidden),
            initial_traces(config),
            dt=float(dt),
            tau_zi=float(tau_zi),
            tau_zj=float(tau_zj),
            f_max=float(f_max),
        )

    @property
    def decay_pre(self) -> float:
        return math.exp(-self.dt / self.tau_zi)

    @property
    def decay_post(self) -> float:
        return math.exp(-self.dt / self.tau_zj)

    def scale(self, decay: float) -> float:
        return (1.0 - decay) / (self.f_max * self.dt / 1000.0)

    @property
    def zhat_pre(self) -> np.ndarray:
        return self.z_pre * self.scale(self.decay_pre)

    @property
    def zhat_post(self) -> np.ndarray:
        return self.z_post * self.scale(self.decay_post)


def spike_probability(rates, f_max: float, dt: float) -> np.ndarray:
    return np.minimum(1.0, np.asarray(rates, dtype=np.float64) * f_max * dt / 1000.0)


def spike_step(rates_pre, rates_post, state: SpikeTraceState, rng: Optional[np.random.Generator],
               tau_p: Optional[float] = None, config: Optional[NetworkConfig] = None,
               learn: bool = True, spikes: Optional[tuple] = None):
    """Advance one time step; returns ``(spikes_pre, spikes_post, state)``.

    ``state`` is updated in place.  With ``learn`` the p-traces absorb the
    rescaled z-trace marginals and products at rate ``1/tau_p``.  Passing
    ``spikes=(s_pre, s_post)`` replays given spikes instead of sampling.
    """
    if spikes is None:
        p_pre = spike_probability(rates_pre, state.f_max, state.dt)
        p_post = spike_probability(rates_post, state.f_max, state.dt)
        s_pre = rng.random(p_pre.shape) < p_pre
        s_post = rng.random(p_post.shape) < p_post
    else:
        s_pre = np.asarray(spikes[0], dtype=bool)
        s_post = np.asarray(spikes[1], dtype=bool)
    state.z_pre *= state.decay_pre
    state.z_pre += s_pre
    state.z_post *= state.decay_post
    state.z_post += s_post
    if learn:
        if tau_p is None:
            tau_p = config.trace_time_constant if config is not None else 1000.0
        update_traces(state.traces, state.zhat_pre, state.zhat_post, tau_p, config, validate=False)
    state.steps += 1
    return s_pre, s_post, state


@dataclass
class SpikeRun:
    state: SpikeTraceState
    seed: int
    zhat_pre: Optional[np.ndarray] = None
    zhat_post: Optional[np.ndarray] = None
    spikes_pre: Optional[np.ndarray] = None
    spikes_post: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)


def simulate(rates_pre, rates_post, config: NetworkConfig, steps: int, seed: int = 0,
             state: Optional[SpikeTraceState] = None, tau_p: Optional[float] = None,
             learn: bool = True, record: bool = False, dt: float = DEFAULT_DT,
             f_max: float = DEFAULT_FMAX) -> SpikeRun:
    """Run ``steps`` spiking steps.

    ``rates_pre``/``rates_post`` are either one activity vector (held
    constant) or arrays with one row per step.
    """
    rng = make_rng(seed)
    if state is None:
        state = SpikeTraceState.fresh(config, dt=dt, f_max=f_max)
    rp = np.asarray(rates_pre, dtype=np.float64)
    rq = np.asarray(rates_post, dtype=np.float64)
    const_p, const_q = rp.ndim == 1, rq.ndim == 1
    if (not const_p and len(rp) < steps) or (not const_q and len(rq) < steps):
        raise ConfigurationError("rate sequence shorter than the run")
    if record:
        zp = np.empty((steps, config.n_input))
        zq = np.empty((steps, config.n_hidden))
        sp = np.empty((steps, config.n_input), dtype=bool)
        sq = np.empty((steps, config.n_hidden), dtype=bool)
    for t in range(steps):
        a, b, _ = spike_step(
            rp if const_p else rp[t], rq if const_q else rq[t], state, rng, tau_p, config, learn
        )
        if record:
            zp[t] = state.zhat_pre
            zq[t] = state.zhat_post
            sp[t] = a
            sq[t] = b
    run = SpikeRun(state, seed, metadata={
        "seed": seed, "dt_ms": state.dt, "f_max_hz": state.f_max,
        "tau_zi_ms": state.tau_zi, "tau_zj_ms": state.tau_zj, "z_index_reading": Z_INDEX_READING,
    })
    if record:
        run.zhat_pre, run.zhat_post, run.spikes_pre, run.spikes_post = zp, zq, sp, sq
    return run


def network_from_spikes(state: SpikeTraceState, config: NetworkConfig) -> Network:
    return Network(config, state.traces.copy())


@dataclass
class TemporalSaliency:
    contributions: np.ndarray
    window: int
    window_totals: np.ndarray
    peak_window: np.ndarray
    dt: float = DEFAULT_DT

    def window_bounds_ms(self, index: int) -> tuple:
        return (index * self.window * self.dt, (index + 1) * self.window * self.dt)


def temporal_saliency(zhat_pre, zhat_post, weights, window: int, dt: float = DEFAULT_DT,
                      target: Optional[int] = None) -> TemporalSaliency:
    """Per-step evidence ``z_im(t) z_jk(t) w_imjk`` on every connected pair.

    ``contributions`` has shape (T, N_in, N_hid), or (T, N_in) when a single
    hidden ``target`` unit is requested.  Windows are consecutive blocks of
    ``window`` steps (the last one may be shorter); ``peak_window`` is the
    block with the largest summed evidence per hidden unit.
    """
    zp = np.asarray(zhat_pre, dtype=np.float64)
    zq = np.asarray(zhat_post, dtype=np.float64)
    T = len(zp)
    window = int(window)
    if window < 1 or window > T:
        raise ConfigurationError(f"window of {window} steps does not fit a run of {T} steps")
    W = weights.dense
    if target is not None:
        contrib = zp * (zq[:, target][:, None] * W[:, target][None, :])
        per_step = contrib.sum(axis=1)[:, None]
    else:
        contrib = zp[:, :, None] * zq[:, None, :] * W[None, :, :]
        per_step = contrib.sum(axis=1)
    starts = np.arange(0, T, window)
    totals = np.add.reduceat(per_step, starts, axis=0)
    return TemporalSaliency(contrib, window, totals, np.argmax(totals, axis=0), dt)


def raster_lines(spikes, population: str, sizes, dt: float = DEFAULT_DT):
    """Yield ``t,population,hypercolumn,minicolumn`` records, one per spike."""
    offs = np.concatenate([[0], np.cumsum(sizes)])
    hc = np.repeat(np.arange(len(sizes)), sizes)
    t_idx, u_idx = np.nonzero(np.asarray(spikes))
    for t, u in zip(t_idx.tolist(), u_idx.tolist()):
        yield f"{t * dt:g},{population},{hc[u]},{u - offs[hc[u]]}"
