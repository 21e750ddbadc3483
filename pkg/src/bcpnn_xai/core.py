"""Network layout, probability traces and feedforward inference.

A layer is organised into hypercolumns, each a group of minicolumns whose
activities form one probability simplex.  Units are stored flat: the input
population has ``sum(input_sizes)`` minicolumns and the hidden population
``sum(hidden_sizes)``; ``*_offsets`` arrays delimit the hypercolumns.

Weights and biases are never stored.  They are read off the traces in
closed form every time the traces change (see :func:`weights_from_traces`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvariantViolation

EPS_FLOOR = 1e-8
SIMPLEX_TOL = 1e-6


def _offsets(sizes: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(np.asarray(sizes, dtype=np.int64))])


def _parse_float(value) -> float:
    if isinstance(value, str):
        return float(value.strip().lower().replace("infinity", "inf"))
    return float(value)


def _dump_float(value: float):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return float(value)


@dataclass
class NetworkConfig:
    """Declared ontology of a single BCPNN layer.

    ``connectivity`` is the prior structural mask over (input HC, hidden HC)
    pairs.  Labels are optional; when absent, generic names are generated.
    """

    input_sizes: tuple
    hidden_sizes: tuple
    connectivity: Optional[np.ndarray] = None
    plasticity_threshold: float = 2.0
    trace_time_constant: float = 1000.0
    z_time_constants: tuple = (20.0, 20.0)
    recurrence: bool = False
    max_settle_steps: int = 50
    settle_tolerance: float = 1e-4
    eps_floor: float = EPS_FLOOR
    structural_interval: int = 100
    label_hypercolumn: int = 0
    max_shadow_pairs: Optional[int] = None
    input_names: Optional[tuple] = None
    input_states: Optional[tuple] = None
    hidden_names: Optional[tuple] = None
    hidden_states: Optional[tuple] = None

    def __post_init__(self):
        self.input_sizes = tuple(int(m) for m in self.input_sizes)
        self.hidden_sizes = tuple(int(m) for m in self.hidden_sizes)
        if self.connectivity is None:
            self.connectivity = np.ones((len(self.input_sizes), len(self.hidden_sizes)), dtype=bool)
        self.connectivity = np.array(self.connectivity, dtype=bool, copy=True)
        self.plasticity_threshold = _parse_float(self.plasticity_threshold)
        self.trace_time_constant = _parse_float(self.trace_time_constant)
        self.z_time_constants = tuple(float(t) for t in self.z_time_constants)
        self.max_settle_steps = int(self.max_settle_steps)
        self.settle_tolerance = float(self.settle_tolerance)
        self.structural_interval = int(self.structural_interval)
        self.label_hypercolumn = int(self.label_hypercolumn)

        if self.input_names is None:
            self.input_names = tuple(f"in{i}" for i in range(len(self.input_sizes)))
        if self.hidden_names is None:
            self.hidden_names = tuple(f"hid{j}" for j in range(len(self.hidden_sizes)))
        if self.input_states is None:
            self.input_states = tuple(tuple(str(m) for m in range(M)) for M in self.input_sizes)
        if self.hidden_states is None:
            self.hidden_states = tuple(tuple(str(k) for k in range(M)) for M in self.hidden_sizes)
        self.input_names = tuple(str(n) for n in self.input_names)
        self.hidden_names = tuple(str(n) for n in self.hidden_names)
        self.input_states = tuple(tuple(str(s) for s in st) for st in self.input_states)
        self.hidden_states = tuple(tuple(str(s) for s in st) for st in self.hidden_states)
        self.validate()

    def validate(self) -> None:
        if not self.input_sizes or not self.hidden_sizes:
            raise ConfigurationError("need at least one input and one hidden hypercolumn")
        for M in self.input_sizes + self.hidden_sizes:
            if M < 2:
                raise ConfigurationError(f"every hypercolumn needs >= 2 minicolumns, got {M}")
        if self.connectivity.shape != (self.n_input_hc, self.n_hidden_hc):
            raise ConfigurationError(
                f"connectivity shape {self.connectivity.shape} != "
                f"({self.n_input_hc}, {self.n_hidden_hc})"
            )
        empty = np.flatnonzero(~self.connectivity.any(axis=0))
        if empty.size:
            raise ConfigurationError(f"hidden hypercolumns {empty.tolist()} have no incoming connection")
        if not self.plasticity_threshold > 1.0:
            raise ConfigurationError("plasticity threshold rho must exceed 1")
        if not self.trace_time_constant > 0:
            raise ConfigurationError("trace time constant must be positive")
        if any(not t > 0 for t in self.z_time_constants):
            raise ConfigurationError("z time constants must be positive")
        if not self.settle_tolerance > 0:
            raise ConfigurationError("settling tolerance must be positive")
        if self.max_settle_steps < 1:
            raise ConfigurationError("max settling steps must be >= 1")
        if not 0 < self.eps_floor < 1:
            raise ConfigurationError("eps_floor must lie in (0, 1)")
        if self.structural_interval < 1:
            raise ConfigurationError("structural interval must be >= 1")
        if not 0 <= self.label_hypercolumn < self.n_hidden_hc:
            raise ConfigurationError("label hypercolumn out of range")
        if len(self.input_names) != self.n_input_hc or len(self.hidden_names) != self.n_hidden_hc:
            raise ConfigurationError("name count does not match hypercolumn count")
        for names, sizes, what in (
            (self.input_states, self.input_sizes, "input"),
            (self.hidden_states, self.hidden_sizes, "hidden"),
        ):
            if len(names) != len(sizes):
                raise ConfigurationError(f"{what} state label list count mismatch")
            for idx, (st, M) in enumerate(zip(names, sizes)):
                if len(st) != M:
                    raise ConfigurationError(
                        f"{what} hypercolumn {idx} declares {M} minicolumns but {len(st)} state labels"
                    )

    @property
    def n_input_hc(self) -> int:
        return len(self.input_sizes)

    @property
    def n_hidden_hc(self) -> int:
        return len(self.hidden_sizes)

    @property
    def n_input(self) -> int:
        return int(sum(self.input_sizes))

    @property
    def n_hidden(self) -> int:
        return int(sum(self.hidden_sizes))

    @property
    def input_offsets(self) -> np.ndarray:
        return _offsets(self.input_sizes)

    @property
    def hidden_offsets(self) -> np.ndarray:
        return _offsets(self.hidden_sizes)

    @property
    def input_hc_of_unit(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_input_hc), self.input_sizes)

    @property
    def hidden_hc_of_unit(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_hidden_hc), self.hidden_sizes)

    def unit_mask(self, hc_mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Expand an (H_inp, H_hid) mask to (N_in, N_hid) unit pairs."""
        hc_mask = self.connectivity if hc_mask is None else hc_mask
        return hc_mask[self.input_hc_of_unit][:, self.hidden_hc_of_unit]

    def to_dict(self) -> dict:
        return {
            "input": [
                {"name": n, "states": list(s)} for n, s in zip(self.input_names, self.input_states)
            ],
            "hidden": [
                {"name": n, "states": list(s)} for n, s in zip(self.hidden_names, self.hidden_states)
            ],
            "connectivity": self.connectivity.astype(int).tolist(),
            "plasticity_threshold": _dump_float(self.plasticity_threshold),
            "trace_time_constant": _dump_float(self.trace_time_constant),
            "z_time_constants": list(self.z_time_constants),
            "recurrence": bool(self.recurrence),
            "max_settle_steps": self.max_settle_steps,
            "settle_tolerance": self.settle_tolerance,
            "eps_floor": self.eps_floor,
            "structural_interval": self.structural_interval,
            "label_hypercolumn": self.label_hypercolumn,
            "max_shadow_pairs": self.max_shadow_pairs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        try:
            inputs = d["input"]
            hidden = d["hidden"]
        except KeyError as exc:
            raise ConfigurationError(f"config is missing section {exc}") from None

        def sizes_and_labels(entries, prefix):
            names, states = [], []
            for idx, e in enumerate(entries):
                names.append(e.get("name", f"{prefix}{idx}"))
                if "states" in e:
                    states.append(tuple(e["states"]))
                elif "size" in e:
                    states.append(tuple(str(k) for k in range(int(e["size"]))))
                else:
                    raise ConfigurationError(f"{prefix} hypercolumn {idx} declares neither states nor size")
            return names, states

        in_names, in_states = sizes_and_labels(inputs, "in")
        hid_names, hid_states = sizes_and_labels(hidden, "hid")
        kwargs = {
            k: d[k]
            for k in (
                "plasticity_threshold",
                "trace_time_constant",
                "z_time_constants",
                "recurrence",
                "max_settle_steps",
                "settle_tolerance",
                "eps_floor",
                "structural_interval",
                "label_hypercolumn",
                "max_shadow_pairs",
            )
            if k in d
        }
        return cls(
            input_sizes=tuple(len(s) for s in in_states),
            hidden_sizes=tuple(len(s) for s in hid_states),
            connectivity=d.get("connectivity"),
            input_names=tuple(in_names),
            input_states=tuple(in_states),
            hidden_names=tuple(hid_names),
            hidden_states=tuple(hid_states),
            **kwargs,
        )


@dataclass
class TraceState:
    """Running probability estimates; the sufficient statistics of learning.

    ``p_joint`` is kept for every (input unit, hidden unit) pair.  Entries on
    silent connections are the shadow traces used to score candidates for
    structural plasticity; ``tracked`` says which HC pairs are kept current.
    """

    p_pre: np.ndarray
    p_post: np.ndarray
    p_joint: np.ndarray
    mask: np.ndarray
    tracked: np.ndarray
    update_count: int = 0
    p_rec: Optional[np.ndarray] = None

    def copy(self) -> "TraceState":
        return TraceState(
            p_pre=self.p_pre.copy(),
            p_post=self.p_post.copy(),
            p_joint=self.p_joint.copy(),
            mask=self.mask.copy(),
            tracked=self.tracked.copy(),
            update_count=self.update_count,
            p_rec=None if self.p_rec is None else self.p_rec.copy(),
        )


@dataclass
class WeightView:
    """Closed-form bias and weights derived from a :class:`TraceState`.

    ``weight`` is NaN on masked pairs: a silent connection has no weight.
    ``pmi`` holds the log-PMI for every pair, including shadow traces, and is
    what structural plasticity and the reconstruction pathway read.
    """

    bias: np.ndarray
    weight: np.ndarray
    pmi: np.ndarray
    unit_mask: np.ndarray
    input_bias: np.ndarray
    recurrent: Optional[np.ndarray] = None

    @property
    def dense(self) -> np.ndarray:
        """Weights with masked entries contributing zero."""
        return np.where(self.unit_mask, self.pmi, 0.0)


@dataclass
class ActivationState:
    input_activity: np.ndarray
    support: np.ndarray
    posterior: np.ndarray
    phi: np.ndarray
    trajectory: Optional[np.ndarray] = None


def initial_traces(config: NetworkConfig, rng: Optional[np.random.Generator] = None,
                   noise: float = 0.0) -> TraceState:
    """Uniform marginals with independent joints, i.e. every weight zero.

    With ``noise > 0`` the joint traces are multiplicatively jittered, which
    breaks the symmetry between minicolumns for unsupervised learning.
    """
    p_pre = np.concatenate([np.full(M, 1.0 / M) for M in config.input_sizes])
    p_post = np.concatenate([np.full(M, 1.0 / M) for M in config.hidden_sizes])
    p_joint = np.outer(p_pre, p_post)
    if noise > 0:
        if rng is None:
            raise ConfigurationError("noisy initialisation needs an rng")
        p_joint = p_joint * np.exp(noise * rng.standard_normal(p_joint.shape))
    mask = config.connectivity.copy()
    tracked = np.ones_like(mask)
    if config.max_shadow_pairs is not None:
        # Shadow pool: the first silent pairs in (hidden, input) index order.
        tracked = mask.copy()
        silent = [(i, j) for j in range(mask.shape[1]) for i in range(mask.shape[0]) if not mask[i, j]]
        for i, j in silent[: int(config.max_shadow_pairs)]:
            tracked[i, j] = True
    p_rec = np.outer(p_post, p_post) if config.recurrence else None
    return TraceState(p_pre, p_post, p_joint, mask, tracked, 0, p_rec)


def weights_from_traces(traces: TraceState, config: NetworkConfig) -> WeightView:
    """Evaluate ``b = log p_post`` and ``w = log p_joint / (p_pre p_post)``."""
    eps = config.eps_floor
    if (
        traces.p_pre.min() < eps
        or traces.p_post.min() < eps
        or traces.p_joint.min() < eps * eps
        or (traces.p_rec is not None and traces.p_rec.min() < eps * eps)
    ):
        raise InvariantViolation("trace below probability floor; learning left the valid domain")
    bias = np.log(traces.p_post)
    # one log of the ratio, so that exact independence gives exactly zero
    pmi = np.log(traces.p_joint / np.outer(traces.p_pre, traces.p_post))
    unit_mask = config.unit_mask(traces.mask)
    weight = np.where(unit_mask, pmi, np.nan)
    recurrent = None
    if traces.p_rec is not None:
        recurrent = np.log(traces.p_rec / np.outer(traces.p_post, traces.p_post))
        hc = config.hidden_hc_of_unit
        # A hypercolumn never feeds itself.
        recurrent[hc[:, None] == hc[None, :]] = 0.0
    return WeightView(bias, weight, pmi, unit_mask, np.log(traces.p_pre), recurrent)


def soft_wta(support: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-hypercolumn softmax along the last axis, max-shifted for stability."""
    support = np.asarray(support, dtype=np.float64)
    out = np.empty_like(support)
    for a, b in zip(offsets[:-1], offsets[1:]):
        seg = support[..., a:b]
        e = np.exp(seg - seg.max(axis=-1, keepdims=True))
        out[..., a:b] = e / e.sum(axis=-1, keepdims=True)
    return out


def check_activity(activity, sizes: Sequence[int], what: str = "input") -> np.ndarray:
    x = np.asarray(activity, dtype=np.float64)
    n = int(sum(sizes))
    if x.shape[-1] != n:
        raise ConfigurationError(f"{what} activity has {x.shape[-1]} units, layout expects {n}")
    if not np.all(np.isfinite(x)) or x.min(initial=0.0) < 0:
        raise ConfigurationError(f"{what} activity must be finite and non-negative")
    offs = _offsets(sizes)
    sums = np.add.reduceat(x, offs[:-1], axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        raise ConfigurationError(f"{what} activity is not a probability simplex in every hypercolumn")
    return x


def one_hot(states: Sequence[int], sizes: Sequence[int]) -> np.ndarray:
    """Encode one categorical state per hypercolumn as concatenated one-hots."""
    states = np.asarray(states, dtype=np.int64)
    offs = _offsets(sizes)
    if states.shape[-1] != len(sizes):
        raise ConfigurationError("one state per hypercolumn expected")
    if np.any(states < 0) or np.any(states >= np.asarray(sizes)):
        raise ConfigurationError("state index out of range")
    out = np.zeros(states.shape[:-1] + (int(offs[-1]),))
    idx = states + offs[:-1]
    np.put_along_axis(out, idx, 1.0, axis=-1)
    return out


def winners(posterior: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Index of the winning minicolumn per hypercolumn; lowest index on ties."""
    return np.stack(
        [np.argmax(posterior[..., a:b], axis=-1) for a, b in zip(offsets[:-1], offsets[1:])], axis=-1
    )


def compute_support(input_activity, weights: WeightView, config: NetworkConfig):
    """Support of every hidden minicolumn plus its per-input-HC terms.

    Returns ``(support, phi)`` with ``phi[i, u]`` the evidence input hypercolumn
    ``i`` supplies to hidden unit ``u``.  The support is evaluated as one dot
    product, independently of the segment sums forming ``phi``.
    """
    x = check_activity(input_activity, config.input_sizes)
    dense = weights.dense
    support = weights.bias + x @ dense
    contrib = x[..., :, None] * dense
    phi = np.add.reduceat(contrib, config.input_offsets[:-1], axis=-2)
    return support, phi


class Network:
    """A single BCPNN layer: configuration plus traces.

    Weight views are cached and invalidated whenever :meth:`touch` is called
    (the learning functions do that after every mutation).
    """

    def __init__(self, config: NetworkConfig, traces: Optional[TraceState] = None):
        self.config = config
        self.traces = traces if traces is not None else initial_traces(config)
        self._weights: Optional[WeightView] = None

    @classmethod
    def initial(cls, config: NetworkConfig, seed: Optional[int] = None, noise: float = 0.0) -> "Network":
        rng = np.random.Generator(np.random.Philox(seed)) if seed is not None else None
        return cls(config, initial_traces(config, rng, noise))

    @classmethod
    def from_parameters(cls, config: NetworkConfig, bias, weight, p_pre=None,
                        recurrent=None) -> "Network":
        """Build traces that reproduce hand-chosen biases and weights.

        ``exp(bias)`` must be a simplex per hidden hypercolumn.  Joint traces
        are set to ``exp(w) * p_pre * p_post``; they need not be consistent
        with the marginals (nothing downstream relies on that).
        """
        bias = np.asarray(bias, dtype=np.float64)
        p_post = np.exp(bias)
        check_activity(p_post, config.hidden_sizes, "exp(bias)")
        if p_pre is None:
            p_pre = np.concatenate([np.full(M, 1.0 / M) for M in config.input_sizes])
        p_pre = check_activity(p_pre, config.input_sizes, "p_pre")
        weight = np.nan_to_num(np.asarray(weight, dtype=np.float64), nan=0.0)
        p_joint = np.exp(weight) * np.outer(p_pre, p_post)
        p_rec = None
        if config.recurrence:
            rec = np.zeros((config.n_hidden, config.n_hidden)) if recurrent is None else np.asarray(recurrent)
            p_rec = np.exp(rec) * np.outer(p_post, p_post)
        mask = config.connectivity.copy()
        traces = TraceState(p_pre.copy(), p_post, p_joint, mask, np.ones_like(mask), 0, p_rec)
        return cls(config, traces)

    def touch(self) -> None:
        self._weights = None

    @property
    def weights(self) -> WeightView:
        if self._weights is None:
            self._weights = weights_from_traces(self.traces, self.config)
        return self._weights

    def snapshot(self) -> "Network":
        return Network(self.config, self.traces.copy())

    def forward(self, input_activity) -> ActivationState:
        support, phi = compute_support(input_activity, self.weights, self.config)
        posterior = soft_wta(support, self.config.hidden_offsets)
        return ActivationState(np.asarray(input_activity, dtype=np.float64), support, posterior, phi)

    def posterior_batch(self, X) -> np.ndarray:
        """Feedforward posteriors for a batch of inputs (rows)."""
        X = check_activity(X, self.config.input_sizes)
        w = self.weights
        return soft_wta(w.bias + X @ w.dense, self.config.hidden_offsets)

    def predict(self, X, hypercolumn: Optional[int] = None) -> np.ndarray:
        j = self.config.label_hypercolumn if hypercolumn is None else hypercolumn
        offs = self.config.hidden_offsets
        post = self.posterior_batch(X)
        return np.argmax(post[..., offs[j]:offs[j + 1]], axis=-1)


def forward(input_activity, model: Network) -> ActivationState:
    return model.forward(input_activity)


@dataclass
class StackedNetwork:
    """Layers where each hidden population is the next layer's input."""

    layers: list = field(default_factory=list)

    def __post_init__(self):
        for lower, upper in zip(self.layers[:-1], self.layers[1:]):
            if tuple(lower.config.hidden_sizes) != tuple(upper.config.input_sizes):
                raise ConfigurationError("layer hidden layout must equal the next layer's input layout")

    def forward(self, input_activity) -> list:
        states = []
        x = input_activity
        for layer in self.layers:
            st = layer.forward(x)
            states.append(st)
            x = st.posterior
        return states
