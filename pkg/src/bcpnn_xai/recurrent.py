"""Hidden-layer attractor dynamics and input reconstruction (INPRC)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ActivationState, Network, soft_wta, winners
from .errors import ConfigurationError


@dataclass
class AttractorRun:
    trajectory: np.ndarray
    settling_step: int
    update_norms: np.ndarray
    converged: bool
    clamped: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]


@dataclass
class Reconstruction:
    activity: np.ndarray
    mode: str
    target: Optional[tuple] = None
    hidden: Optional[np.ndarray] = None
    run: Optional[AttractorRun] = None


def _require_recurrence(model: Network):
    if not model.config.recurrence or model.weights.recurrent is None:
        raise ConfigurationError("recurrence disabled")


def _apply_clamp(pi: np.ndarray, clamp: dict, offsets: np.ndarray) -> np.ndarray:
    for j, k in clamp.items():
        pi[offsets[j]:offsets[j + 1]] = 0.0
        pi[offsets[j] + k] = 1.0
    return pi


def settle(initial: ActivationState, model: Network, T: Optional[int] = None,
           eps: Optional[float] = None, clamp: Optional[dict] = None) -> AttractorRun:
    """Iterate the hidden state to a fixed point.

    Each step recomputes ``support = initial.support + recurrent evidence``
    (``initial.support`` already holds bias plus feedforward terms) and
    renormalises all hypercolumns synchronously.  Stops at the first ``t``
    with ``max|pi(t+1) - pi(t)| < eps``; that ``t`` is the settling step.
    ``clamp`` maps hidden HC index to a minicolumn held one-hot throughout.
    """
    _require_recurrence(model)
    cfg = model.config
    T = cfg.max_settle_steps if T is None else int(T)
    eps = cfg.settle_tolerance if eps is None else float(eps)
    if T < 1 or not eps > 0:
        raise ConfigurationError("need T >= 1 and eps > 0")
    clamp = dict(clamp or {})
    offs = cfg.hidden_offsets
    for j, k in clamp.items():
        if not 0 <= j < cfg.n_hidden_hc or not 0 <= k < cfg.hidden_sizes[j]:
            raise ConfigurationError(f"clamp target ({j}, {k}) out of range")
    R = model.weights.recurrent
    drive = np.asarray(initial.support, dtype=np.float64)
    pi = _apply_clamp(np.array(initial.posterior, dtype=np.float64), clamp, offs)
    traj = [pi]
    norms = []
    settled = None
    for t in range(T):
        nxt = _apply_clamp(soft_wta(drive + pi @ R, offs), clamp, offs)
        norms.append(float(np.max(np.abs(nxt - pi))))
        traj.append(nxt)
        pi = nxt
        if norms[-1] < eps:
            settled = t
            break
    converged = settled is not None
    return AttractorRun(
        trajectory=np.array(traj),
        settling_step=settled if converged else T,
        update_norms=np.array(norms),
        converged=converged,
        clamped=clamp,
    )


def read_reconstruction(hidden: np.ndarray, model: Network) -> np.ndarray:
    """INPRC activity from a hidden state through the feedback pathway."""
    w = model.weights
    support = w.input_bias + w.pmi @ hidden
    return soft_wta(support, model.config.input_offsets)


def reconstruct(state: ActivationState, model: Network, target: Optional[tuple] = None,
                single_pass: bool = False) -> Reconstruction:
    """Free (``target=None``) or clamped reconstruction of the input.

    Clamped mode forces hidden minicolumn ``target = (j, k)`` to dominate,
    re-settles the other hypercolumns with it held fixed and reads the
    feedback pathway.  If ``k`` already wins in ``j`` after free settling
    the clamp is a no-op and the free reconstruction is returned.
    ``single_pass`` skips settling and reads the feedback directly.
    """
    cfg = model.config
    if target is not None:
        j, k = int(target[0]), int(target[1])
        if not 0 <= j < cfg.n_hidden_hc or not 0 <= k < cfg.hidden_sizes[j]:
            raise ConfigurationError(f"target minicolumn ({j}, {k}) out of range")
        target = (j, k)

    if single_pass:
        free_run = None
        hidden = np.asarray(state.posterior, dtype=np.float64)
    else:
        free_run = settle(state, model)
        hidden = free_run.final
    if target is None:
        return Reconstruction(read_reconstruction(hidden, model), "free", None, hidden, free_run)

    j, k = target
    offs = cfg.hidden_offsets
    if winners(hidden, offs)[j] == k:
        return Reconstruction(read_reconstruction(hidden, model), "clamped", target, hidden, free_run)
    if single_pass:
        hidden = _apply_clamp(hidden.copy(), {j: k}, offs)
        return Reconstruction(read_reconstruction(hidden, model), "clamped", target, hidden, None)
    run = settle(state, model, clamp={j: k})
    return Reconstruction(read_reconstruction(run.final, model), "clamped", target, run.final, run)
