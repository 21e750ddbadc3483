"""Settling-trajectory diagnostics and contrastive reconstructions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import ActivationState, Network, winners
from ..errors import ConfigurationError
from ..recurrent import AttractorRun, Reconstruction, reconstruct


@dataclass
class AttractorDiagnostics:
    settling_step: int
    basin_width: float
    trajectory_length: float
    converged: bool
    dominant_hc: int
    basin_widths: np.ndarray


def attractor_diagnostics(run, offsets, eps: float = 1e-4,
                          dominant: Optional[int] = None) -> AttractorDiagnostics:
    """Settling step, basin width and path length of a recorded trajectory.

    ``run`` is an :class:`AttractorRun` or a (T+1, N) array of states.  The
    settling step is the first ``t`` with ``max|pi(t+1) - pi(t)| < eps``
    (the last step if none).  Basin width is ``-log`` of the runner-up
    activation at that step in the dominant hypercolumn, by default the one
    whose winner is most active.  Path length sums the L2 step sizes.
    """
    traj = run.trajectory if isinstance(run, AttractorRun) else np.asarray(run, dtype=np.float64)
    if traj.ndim != 2 or len(traj) < 1:
        raise ConfigurationError("trajectory must be a (steps, units) array")
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    steps = np.diff(traj, axis=0)
    inf_norm = np.abs(steps).max(axis=1) if len(steps) else np.zeros(0)
    below = np.flatnonzero(inf_norm < eps)
    converged = below.size > 0 or len(traj) == 1
    t_star = int(below[0]) if below.size else max(len(traj) - 1, 0)
    length = float(np.linalg.norm(steps, axis=1).sum()) if len(steps) else 0.0

    state = traj[t_star]
    widths = []
    tops = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        seg = np.sort(state[a:b])
        tops.append(seg[-1])
        widths.append(-math.log(seg[-2]) if seg[-2] > 0 else math.inf)
    widths = np.array(widths)
    if dominant is None:
        dominant = int(np.argmax(tops))
    return AttractorDiagnostics(t_star, float(widths[dominant]), length, bool(converged), int(dominant), widths)


@dataclass
class Counterfactual:
    """Query, its free reconstruction and the reconstruction clamped to ``target``.

    ``changed`` lists input hypercolumns whose winner differs between the
    query and the clamped reconstruction; ``changed_vs_free`` compares the
    two reconstructions.
    """

    query: np.ndarray
    target: tuple
    free: Reconstruction
    clamped: Reconstruction
    changed: list
    changed_vs_free: list


def counterfactual(query, model: Network, target, single_pass: bool = False) -> Counterfactual:
    """Contrastive pair for hidden minicolumn ``target = (j, k)``.

    An integer ``target`` is read as a class of the label hypercolumn.
    """
    cfg = model.config
    if np.isscalar(target):
        target = (cfg.label_hypercolumn, int(target))
    state = query if isinstance(query, ActivationState) else model.forward(query)
    free = reconstruct(state, model, None, single_pass)
    clamped = reconstruct(state, model, tuple(target), single_pass)
    io = cfg.input_offsets
    wq = winners(state.input_activity, io)
    wf = winners(free.activity, io)
    wc = winners(clamped.activity, io)
    return Counterfactual(
        query=state.input_activity.copy(),
        target=clamped.target,
        free=free,
        clamped=clamped,
        changed=[int(i) for i in np.flatnonzero(wq != wc)],
        changed_vs_free=[int(i) for i in np.flatnonzero(wf != wc)],
    )
