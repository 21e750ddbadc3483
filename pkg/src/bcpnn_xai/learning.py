"""Bayesian-Hebbian trace updates and usage-driven structural plasticity."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Network, NetworkConfig, TraceState, WeightView, check_activity, one_hot
from .errors import ConfigurationError, UndefinedUsageError

#: Reading of the usage-score denominator recorded in report metadata.
USAGE_DENOMINATOR = "number of active outgoing connections of input hypercolumn i (candidate counted as active)"


@dataclass
class PlasticityEvent:
    step: int
    hidden_hc: int
    deactivated: int
    activated: int
    usage_ratio: float


def trace_rate(update_count: int, tau: float) -> float:
    """Per-step learning rate: running mean until ``tau`` samples, then EMA.

    The first ``tau`` updates average exactly (rate ``1/n``), so the traces do
    not remember their arbitrary initial value once data has arrived.
    """
    return max(1.0 / tau, 1.0 / (update_count + 1))


def update_traces(traces: TraceState, input_activity, hidden_activity, tau: float,
                  config: Optional[NetworkConfig] = None, validate: bool = True) -> TraceState:
    """One exponential-moving-average step of every p-trace, in place.

    ``config`` supplies the floor value, the shadow pool layout and (unless
    ``validate`` is off, as for spike-trace targets) simplex validation.
    """
    if not tau > 0:
        raise ConfigurationError("trace time constant must be positive")
    x = np.asarray(input_activity, dtype=np.float64)
    y = np.asarray(hidden_activity, dtype=np.float64)
    eps = 1e-8
    if config is not None:
        if validate:
            check_activity(x, config.input_sizes)
            check_activity(y, config.hidden_sizes, "hidden")
        eps = config.eps_floor
    r = trace_rate(traces.update_count, tau)

    traces.p_pre += r * (x - traces.p_pre)
    traces.p_post += r * (y - traces.p_post)
    target = np.outer(x, y)
    if traces.tracked.all():
        traces.p_joint += r * (target - traces.p_joint)
    else:
        if config is None:
            raise ConfigurationError("a restricted shadow pool needs the config")
        upd = config.unit_mask(traces.tracked)
        traces.p_joint += np.where(upd, r * (target - traces.p_joint), 0.0)
    if traces.p_rec is not None:
        traces.p_rec += r * (np.outer(y, y) - traces.p_rec)

    np.clip(traces.p_pre, eps, 1.0, out=traces.p_pre)
    np.clip(traces.p_post, eps, 1.0, out=traces.p_post)
    if config is not None and validate:
        _restore_simplex(traces.p_pre, config.input_offsets)
        _restore_simplex(traces.p_post, config.hidden_offsets)
    np.clip(traces.p_joint, eps * eps, 1.0, out=traces.p_joint)
    if traces.p_rec is not None:
        np.clip(traces.p_rec, eps * eps, 1.0, out=traces.p_rec)
    traces.update_count += 1
    return traces


def _restore_simplex(p: np.ndarray, offsets: np.ndarray) -> None:
    """Take the mass added by flooring back from each hypercolumn's largest entry."""
    sums = np.add.reduceat(p, offsets[:-1])
    for h in np.flatnonzero(np.abs(sums - 1.0) > 1e-12):
        a, b = offsets[h], offsets[h + 1]
        p[a + int(np.argmax(p[a:b]))] -= sums[h] - 1.0


def usage_score(traces: TraceState, weights: WeightView, config: NetworkConfig, i: int, j: int,
                as_active: bool = True) -> float:
    """Usage of the (input HC i, hidden HC j) connection.

    Numerator is the trace-weighted log-PMI summed over the block.  For a
    silent connection the shadow traces are used and, with ``as_active``,
    the connection counts itself in the denominator (the hypothetical usage
    it would have if switched on).
    """
    io, ho = config.input_offsets, config.hidden_offsets
    block = (slice(io[i], io[i + 1]), slice(ho[j], ho[j + 1]))
    num = float(np.sum(traces.p_joint[block] * weights.pmi[block]))
    denom = int(traces.mask[i].sum())
    if as_active and not traces.mask[i, j]:
        denom += 1
    if denom == 0:
        raise UndefinedUsageError(f"input hypercolumn {i} has no active outgoing connection")
    return num / denom


def usage_matrix(traces: TraceState, weights: WeightView, config: NetworkConfig) -> np.ndarray:
    """Usage scores for every HC pair, silent ones scored hypothetically."""
    io, ho = config.input_offsets, config.hidden_offsets
    terms = traces.p_joint * weights.pmi
    num = np.add.reduceat(np.add.reduceat(terms, io[:-1], axis=0), ho[:-1], axis=1)
    denom = traces.mask.sum(axis=1, keepdims=True) + (~traces.mask).astype(np.int64)
    return num / denom


def structural_step(traces: TraceState, weights: WeightView, config: NetworkConfig, rho: float,
                    step: int = 0):
    """Swap at most one silent/active pair per hidden hypercolumn.

    A swap fires when the best tracked silent usage strictly exceeds ``rho``
    times the worst active usage.  Mutates ``traces.mask``; returns the new
    mask and the list of events.
    """
    events = []
    if math.isinf(rho):
        return traces.mask.copy(), events
    U = usage_matrix(traces, weights, config)
    for j in range(traces.mask.shape[1]):
        active = np.flatnonzero(traces.mask[:, j])
        silent = np.flatnonzero(~traces.mask[:, j] & traces.tracked[:, j])
        if active.size == 0 or silent.size == 0:
            continue
        s = silent[np.argmax(U[silent, j])]
        a = active[np.argmin(U[active, j])]
        u_s, u_a = U[s, j], U[a, j]
        if u_s > rho * u_a:
            traces.mask[a, j] = False
            traces.mask[s, j] = True
            ratio = u_s / u_a if u_a != 0 else math.inf
            events.append(PlasticityEvent(int(step), int(j), int(a), int(s), float(ratio)))
    return traces.mask.copy(), events


@dataclass
class TrainResult:
    events: list = field(default_factory=list)
    log: list = field(default_factory=list)
    steps: int = 0


def _hidden_target(model: Network, x: np.ndarray, label, mode: str) -> np.ndarray:
    cfg = model.config
    if mode == "supervised" and cfg.n_hidden_hc == 1:
        y = np.zeros(cfg.n_hidden)
        y[int(label)] = 1.0
        return y
    y = model.forward(x).posterior
    if mode == "supervised":
        if label is None:
            raise ConfigurationError("supervised mode needs labels")
        ho = cfg.hidden_offsets
        j = cfg.label_hypercolumn
        y = y.copy()
        y[ho[j]:ho[j + 1]] = 0.0
        y[ho[j] + int(label)] = 1.0
    elif mode != "unsupervised":
        raise ConfigurationError(f"unknown training mode {mode!r}")
    return y


def train(model: Network, X, labels=None, epochs: int = 1, mode: str = "supervised",
          seed: Optional[int] = None, hidden=None, rho: Optional[float] = None,
          log_sink: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Present ``X`` (rows of input activity) for a number of epochs.

    Hidden activity is the teacher one-hot in the label hypercolumn
    (supervised), the model's own posterior (unsupervised), or given
    explicitly via ``hidden``.  Row order is shuffled per epoch when a seed
    is given.  Structural plasticity runs every ``structural_interval`` steps.
    """
    cfg = model.config
    X = check_activity(X, cfg.input_sizes)
    rho = cfg.plasticity_threshold if rho is None else rho
    rng = np.random.Generator(np.random.Philox(seed)) if seed is not None else None
    result = TrainResult()
    traces = model.traces
    last = _flat(traces)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(X)) if rng is not None else np.arange(len(X))
        for n in order:
            x = X[n]
            if hidden is not None:
                y = np.asarray(hidden[n], dtype=np.float64)
            else:
                y = _hidden_target(model, x, None if labels is None else labels[n], mode)
            update_traces(traces, x, y, cfg.trace_time_constant, cfg)
            model.touch()
            step += 1
            if step % cfg.structural_interval == 0:
                _, events = structural_step(traces, model.weights, cfg, rho, step)
                if events:
                    model.touch()
                result.events.extend(events)
                now = _flat(traces)
                rec = {
                    "step": step,
                    "mean_abs_dp": float(np.mean(np.abs(now - last))),
                    "swaps": [asdict(e) for e in events],
                }
                last = now
                result.log.append(rec)
                if log_sink is not None:
                    log_sink(rec)
    result.steps = step
    return result


def _flat(traces: TraceState) -> np.ndarray:
    parts = [traces.p_pre, traces.p_post, traces.p_joint.ravel()]
    if traces.p_rec is not None:
        parts.append(traces.p_rec.ravel())
    return np.concatenate(parts)


def format_log_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def accuracy(model: Network, X, labels) -> float:
    return float(np.mean(model.predict(X) == np.asarray(labels)))


def encode_states(states, config: NetworkConfig) -> np.ndarray:
    return one_hot(states, config.input_sizes)


__all__ = [
    "PlasticityEvent",
    "TrainResult",
    "USAGE_DENOMINATOR",
    "accuracy",
    "encode_states",
    "structural_step",
    "train",
    "trace_rate",
    "update_traces",
    "usage_matrix",
    "usage_score",
]
