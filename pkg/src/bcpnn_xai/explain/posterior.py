"""Posterior read-outs: per-hypercolumn entropy, surprise and winner margin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..core import ActivationState, Network, winners
from ..errors import ConfigurationError


def entropy(p) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) if nz.size else 0.0


@dataclass
class PosteriorReport:
    posterior: np.ndarray
    entropies: np.ndarray
    winners: np.ndarray
    settled: bool = False


def _posterior_of(query, model: Network, settled: bool) -> np.ndarray:
    state = query if isinstance(query, ActivationState) else model.forward(query)
    if not settled:
        return state.posterior
    from ..recurrent import settle

    return settle(state, model).final


def posterior_with_entropy(query, model: Network, settled: bool = False) -> PosteriorReport:
    post = _posterior_of(query, model, settled)
    offs = model.config.hidden_offsets
    ent = np.array([entropy(post[a:b]) for a, b in zip(offs[:-1], offs[1:])])
    return PosteriorReport(post.copy(), ent, winners(post, offs), settled)


@dataclass
class SurpriseScore:
    total: float
    per_hypercolumn: np.ndarray
    settled: bool = False


def surprise_from_posterior(posterior, offsets) -> SurpriseScore:
    """``S = -sum_j log pi_{j, k*}`` over hidden hypercolumns."""
    post = np.asarray(posterior, dtype=np.float64)
    terms = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        top = float(post[a:b].max())
        terms.append(-np.log(top) if top > 0 else np.inf)
    terms = np.array(terms)
    # max pi >= 1/M > 0, but rounding can leave -0.0 for a one-hot winner
    terms = np.maximum(terms, 0.0)
    return SurpriseScore(float(terms.sum()), terms)


def surprise(query, model: Network, settled: bool = False) -> SurpriseScore:
    """Surprise of a query; the feedforward posterior unless ``settled``."""
    s = surprise_from_posterior(_posterior_of(query, model, settled), model.config.hidden_offsets)
    s.settled = settled
    return s


def margin_from_posterior(posterior, offsets, j: int) -> float:
    """Gap between the two largest activations in hypercolumn ``j``."""
    if not 0 <= j < len(offsets) - 1:
        raise ConfigurationError(f"hypercolumn {j} out of range")
    seg = np.sort(np.asarray(posterior, dtype=np.float64)[offsets[j]:offsets[j + 1]])
    return float(seg[-1] - seg[-2])


def margin(query, model: Network, j: int, settled: bool = False) -> float:
    return margin_from_posterior(_posterior_of(query, model, settled), model.config.hidden_offsets, j)


def margins(posterior, offsets) -> np.ndarray:
    return np.array([margin_from_posterior(posterior, offsets, j) for j in range(len(offsets) - 1)])


def margin_trajectory(trajectory, offsets, j: int) -> np.ndarray:
    """Margin of hypercolumn ``j`` at every recorded settling step."""
    return np.array([margin_from_posterior(p, offsets, j) for p in np.asarray(trajectory)])


def expected_calibration_error(confidence, correct, n_bins: int = 10) -> float:
    """Bin-weighted gap between mean confidence and accuracy."""
    conf = np.asarray(confidence, dtype=np.float64)
    hit = np.asarray(correct, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.digitize(conf, edges[1:-1], right=True), 0, n_bins - 1)
    ece = 0.0
    for b in range(n_bins):
        sel = idx == b
        if sel.any():
            ece += sel.mean() * abs(conf[sel].mean() - hit[sel].mean())
    return float(ece)


def auroc(positive_scores, negative_scores) -> float:
    """Probability a positive outscores a negative (ties count half)."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))
