"""Exact per-hypercolumn robustness radius under within-simplex reallocation.

Distance is total variation summed over input hypercolumns,
``sum_i 0.5 * ||x_i - x'_i||_1``; mass may only move inside a hypercolumn.
Moving ``q`` from donor ``m`` to recipient ``m'`` of input HC ``i`` changes
the gap ``s_k* - s_k'`` by ``-q * (d_m' - d_m)`` with
``d_m = w_{m,k'} - w_{m,k*}``, so the cheapest flip is a fractional
knapsack per challenger, solved greedily by rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import Network, check_activity, winners
from ..errors import ConfigurationError

METRIC = "total variation, mass moved within each input hypercolumn"


@dataclass
class RobustnessCertificate:
    hypercolumn: int
    winner: int
    radius: float
    challenger: Optional[int]
    metric: str = METRIC
    plan: list = field(default_factory=list)

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.radius)


def _challenger_plan(x, dense, io, u_win, u_ch, gap):
    """Cheapest reallocation closing ``gap``.

    Returns the cost and every improving move sorted by rate; applying the
    moves greedily up to the cost reproduces the optimal reallocation.
    """
    d = dense[:, u_ch] - dense[:, u_win]
    items = []
    for i in range(len(io) - 1):
        a, b = io[i], io[i + 1]
        seg = d[a:b]
        r = a + int(np.argmax(seg))
        for m in range(a, b):
            rate = d[r] - d[m]
            if rate > 0 and x[m] > 0:
                items.append((rate, m, r, x[m]))
    # highest rate first; index order breaks ties deterministically
    items.sort(key=lambda t: (-t[0], t[1]))
    if gap <= 0:
        return 0.0, items
    need = gap
    cost = 0.0
    for rate, m, r, cap in items:
        q = min(cap, need / rate)
        cost += q
        need -= q * rate
        if q < cap:
            return cost, items
    if need > 0:
        return math.inf, []
    return cost, items


def certified_radius(query, model: Network, j: int) -> RobustnessCertificate:
    """Smallest perturbation after which a challenger's support reaches the winner's."""
    cfg = model.config
    if not 0 <= j < cfg.n_hidden_hc:
        raise ConfigurationError(f"hypercolumn {j} out of range")
    x = check_activity(query, cfg.input_sizes)
    w = model.weights
    dense = w.dense
    s = w.bias + x @ dense
    ho = cfg.hidden_offsets
    k_star = int(winners(s, ho)[j])
    u_win = ho[j] + k_star
    best = (math.inf, None, [])
    for k in range(cfg.hidden_sizes[j]):
        if k == k_star:
            continue
        u = ho[j] + k
        cost, moves = _challenger_plan(x, dense, cfg.input_offsets, u_win, u, s[u_win] - s[u])
        if cost < best[0]:
            best = (cost, k, moves)
    plan = [
        {"donor": int(m), "recipient": int(r), "rate": float(rate), "capacity": float(cap)}
        for rate, m, r, cap in best[2]
    ]
    return RobustnessCertificate(j, k_star, float(best[0]), best[1], METRIC, plan)


def certificates(query, model: Network) -> list:
    return [certified_radius(query, model, j) for j in range(model.config.n_hidden_hc)]


def optimal_perturbation(query, certificate: RobustnessCertificate, extra: float = 0.0) -> np.ndarray:
    """Move ``radius + extra`` mass along the certificate's plan, best rate first.

    Mass beyond what the plan's donors hold is not moved.
    """
    if certificate.unbounded:
        raise ConfigurationError("no reallocation flips this winner")
    x = np.array(query, dtype=np.float64)
    budget = certificate.radius + extra
    for mv in certificate.plan:
        if budget <= 0:
            break
        q = min(mv["capacity"], budget)
        x[mv["donor"]] -= q
        x[mv["recipient"]] += q
        budget -= q
    return np.clip(x, 0.0, None)
