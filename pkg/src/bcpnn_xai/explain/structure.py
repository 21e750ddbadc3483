"""Global structure read-outs: ranked connection graph and receptive fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Network, check_activity
from ..errors import ConfigurationError
from ..learning import USAGE_DENOMINATOR, usage_matrix


@dataclass
class Connection:
    input_hc: int
    hidden_hc: int
    active: bool
    usage: float


@dataclass
class ImportanceGraph:
    """Every (input HC, hidden HC) pair, sorted by usage (descending).

    Silent pairs carry the usage they would have if switched on.  Ties keep
    index order, so an untrained model lists pairs in (i, j) order.
    """

    edges: list
    usage: np.ndarray
    denominator: str = USAGE_DENOMINATOR

    def ranking(self, hidden_hc: int, active_only: bool = True) -> list:
        return [
            e.input_hc for e in self.edges
            if e.hidden_hc == hidden_hc and (e.active or not active_only)
        ]

    def aggregate(self) -> np.ndarray:
        """Per-input-HC importance, ``sum_j U_ij`` over active connections."""
        mask = np.zeros_like(self.usage, dtype=bool)
        for e in self.edges:
            mask[e.input_hc, e.hidden_hc] = e.active
        return np.where(mask, self.usage, 0.0).sum(axis=1)


def global_importance(model: Network) -> ImportanceGraph:
    U = usage_matrix(model.traces, model.weights, model.config)
    mask = model.traces.mask
    pairs = [(i, j) for i in range(U.shape[0]) for j in range(U.shape[1])]
    # negate through 0.0 + so that -0.0 and 0.0 sort together
    pairs.sort(key=lambda p: (0.0 - U[p], p[0], p[1]))
    edges = [Connection(i, j, bool(mask[i, j]), float(U[i, j])) for i, j in pairs]
    return ImportanceGraph(edges, U)


@dataclass
class ReceptiveField:
    """``R(i, m) = pi_im * w_imjk * c_ij`` for hidden minicolumn ``target``.

    ``tuning[u]`` is the mean activation of the target over the reference
    inputs whose winning state in the hypercolumn of input unit ``u`` is
    that unit (NaN when the state never wins in the reference set).
    """

    target: tuple
    values: np.ndarray
    mode: str
    tuning: Optional[np.ndarray] = None
    reference_size: int = 0


def receptive_field(model: Network, target: tuple, query=None, reference=None) -> ReceptiveField:
    """Single-query field, or the mean over a reference set plus a tuning curve."""
    cfg = model.config
    j, k = int(target[0]), int(target[1])
    if not 0 <= j < cfg.n_hidden_hc or not 0 <= k < cfg.hidden_sizes[j]:
        raise ConfigurationError(f"target minicolumn ({j}, {k}) out of range")
    if (query is None) == (reference is None):
        raise ConfigurationError("give exactly one of a query or a reference set")
    u = int(cfg.hidden_offsets[j] + k)
    w = model.weights.dense[:, u]
    if query is not None:
        x = check_activity(query, cfg.input_sizes)
        return ReceptiveField((j, k), x * w, "single-query")

    X = check_activity(np.atleast_2d(reference), cfg.input_sizes)
    values = X.mean(axis=0) * w
    act = model.posterior_batch(X)[:, u]
    tuning = np.full(cfg.n_input, np.nan)
    io = cfg.input_offsets
    for i in range(cfg.n_input_hc):
        win = np.argmax(X[:, io[i]:io[i + 1]], axis=1)
        for m in range(cfg.input_sizes[i]):
            sel = win == m
            if sel.any():
                tuning[io[i] + m] = act[sel].mean()
    return ReceptiveField((j, k), values, "mean-over-reference-set", tuning, len(X))
