"""Closed-form local attribution and its chaining across stacked layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import ActivationState, Network, StackedNetwork, winners
from ..errors import ConfigurationError


@dataclass
class AttributionVector:
    """Evidence for one hidden minicolumn, split by input hypercolumn (nats)."""

    target: tuple
    unit: int
    bias: float
    phi: np.ndarray
    support: float
    evidence: np.ndarray
    labels: Sequence[str] = field(default_factory=tuple)

    @property
    def total(self) -> float:
        return self.bias + float(self.phi.sum())

    @property
    def residual(self) -> float:
        return self.support - self.total

    def bars(self) -> list:
        """Waterfall rows: prior, one row per input attribute, total."""
        rows = [{"label": "prior", "value": self.bias}]
        for i, v in enumerate(self.phi):
            name = self.labels[i] if i < len(self.labels) else f"input{i}"
            rows.append({"label": name, "value": float(v)})
        rows.append({"label": "total", "value": self.support})
        return rows


def _resolve_target(model: Network, state: ActivationState, target) -> tuple:
    cfg = model.config
    if target is None:
        j = cfg.label_hypercolumn
        k = int(winners(state.posterior, cfg.hidden_offsets)[j])
        return j, k
    j, k = int(target[0]), int(target[1])
    if not 0 <= j < cfg.n_hidden_hc or not 0 <= k < cfg.hidden_sizes[j]:
        raise ConfigurationError(f"target minicolumn ({j}, {k}) out of range")
    return j, k


def attribute(query, model: Network, target: Optional[tuple] = None) -> AttributionVector:
    """Exact decomposition ``s_jk = b_jk + sum_i phi_i`` for ``target=(j, k)``.

    ``query`` is an input activity vector or a forward state.  ``evidence``
    holds the per-input-minicolumn terms ``pi_im * w_imjk`` (zero on silent
    connections).  Default target is the winner of the label hypercolumn.
    """
    state = query if isinstance(query, ActivationState) else model.forward(query)
    j, k = _resolve_target(model, state, target)
    u = int(model.config.hidden_offsets[j] + k)
    w = model.weights
    evidence = state.input_activity * w.dense[:, u]
    return AttributionVector(
        target=(j, k),
        unit=u,
        bias=float(w.bias[u]),
        phi=state.phi[:, u].copy(),
        support=float(state.support[u]),
        evidence=evidence,
        labels=tuple(model.config.input_names or ()),
    )


@dataclass
class CrossLayerAttribution:
    """Per-layer attributions of every hidden winner, plus chained leaf totals.

    ``levels[l][j]`` explains the winning minicolumn of hidden HC ``j`` in
    layer ``l``.  The root is ``levels[-1][target_hc]`` (or the explicitly
    requested minicolumn).  Leaf totals distribute the root's absolute
    evidence over the first layer's input hypercolumns by multiplying
    normalised shares along every path.
    """

    root: AttributionVector
    levels: list
    leaf_signed: np.ndarray
    leaf_absolute: np.ndarray

    def tree(self, max_depth: Optional[int] = None) -> dict:
        def node(level: int, vec: AttributionVector, depth: int) -> dict:
            out = {
                "layer": level,
                "hypercolumn": vec.target[0],
                "minicolumn": vec.target[1],
                "bias": vec.bias,
                "support": vec.support,
                "phi": vec.phi.tolist(),
            }
            if level > 0 and (max_depth is None or depth < max_depth):
                out["children"] = [node(level - 1, c, depth + 1) for c in self.levels[level - 1]]
            return out

        return node(len(self.levels) - 1, self.root, 0)


def _shares(vec: AttributionVector, absolute: bool) -> np.ndarray:
    tot = float(np.abs(vec.phi).sum())
    if tot == 0.0:
        return np.zeros_like(vec.phi)
    return (np.abs(vec.phi) if absolute else vec.phi) / tot


def cross_layer_attribution(query, stack: StackedNetwork, target: Optional[tuple] = None) -> CrossLayerAttribution:
    """Chain per-layer attributions from the final winner down to the inputs."""
    if isinstance(stack, Network):
        stack = StackedNetwork([stack])
    if not stack.layers:
        raise ConfigurationError("empty stack")
    states = stack.forward(query)
    levels = []
    for layer, st in zip(stack.layers, states):
        cfg = layer.config
        win = winners(st.posterior, cfg.hidden_offsets)
        levels.append([attribute(st, layer, (j, int(win[j]))) for j in range(cfg.n_hidden_hc)])
    root = attribute(states[-1], stack.layers[-1], target)

    totals = []
    for absolute in (False, True):
        v = _shares(root, absolute)
        for level in range(len(levels) - 2, -1, -1):
            S = np.stack([_shares(vec, absolute) for vec in levels[level]])
            v = v @ S
        totals.append(v * float(np.abs(root.phi).sum()))
    return CrossLayerAttribution(root, levels, totals[0], totals[1])
