"""Two-sided CUSUM over live p-trace values."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigurationError

SIGMA_FLOOR = 1e-9


@dataclass
class DriftAlarm:
    step: int
    trace: int
    direction: str
    statistic: float


@dataclass
class DriftMonitor:
    """CUSUM state per monitored trace.

    ``observe`` feeds one raw posterior sample: it updates a live p-trace
    (an EMA with time constant ``live_tau`` started at the baseline) and
    runs the CUSUM on that trace.  ``drift_step`` runs the CUSUM on a
    trace value supplied directly.  An alarm fires when a statistic reaches
    ``h``; that statistic is then reset.
    """

    baseline: np.ndarray
    sigma: np.ndarray
    k: np.ndarray
    h: np.ndarray
    live_tau: float = 20.0
    c_plus: Optional[np.ndarray] = None
    c_minus: Optional[np.ndarray] = None
    live: Optional[np.ndarray] = None
    step: int = 0
    alarms: list = field(default_factory=list)

    def __post_init__(self):
        self.baseline = np.asarray(self.baseline, dtype=np.float64)
        n = self.baseline.shape
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), n).copy()
        self.k = np.broadcast_to(np.asarray(self.k, dtype=np.float64), n).copy()
        self.h = np.broadcast_to(np.asarray(self.h, dtype=np.float64), n).copy()
        if np.any(self.k < 0) or np.any(self.h < 0):
            raise ConfigurationError("CUSUM slack and threshold must be non-negative")
        if not self.live_tau >= 1:
            raise ConfigurationError("live trace time constant must be >= 1")
        if self.c_plus is None:
            self.c_plus = np.zeros(n)
        if self.c_minus is None:
            self.c_minus = np.zeros(n)
        if self.live is None:
            self.live = self.baseline.copy()

    @classmethod
    def from_baseline(cls, samples, k_sigma: float = 0.5, h_sigma: float = 5.0,
                      live_tau: float = 20.0) -> "DriftMonitor":
        """Capture baseline mean and per-sample spread from a window of samples."""
        S = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if len(S) < 2:
            raise ConfigurationError("baseline window needs at least two samples")
        mean = S.mean(axis=0)
        sigma = np.maximum(S.std(axis=0, ddof=1), SIGMA_FLOOR)
        return cls(mean, sigma, k_sigma * sigma, h_sigma * sigma, live_tau)

    def observe(self, sample) -> list:
        x = np.asarray(sample, dtype=np.float64)
        self.live += (x - self.live) / self.live_tau
        return drift_step(self, self.live)


def drift_step(monitor: DriftMonitor, p) -> list:
    """One CUSUM update with trace values ``p``; returns the new alarms."""
    p = np.asarray(p, dtype=np.float64)
    m = monitor
    m.c_plus = np.maximum(0.0, m.c_plus + (p - m.baseline - m.k))
    m.c_minus = np.maximum(0.0, m.c_minus + (m.baseline - p - m.k))
    new = []
    for name, stat in (("up", m.c_plus), ("down", m.c_minus)):
        for t in np.flatnonzero(stat >= m.h):
            new.append(DriftAlarm(m.step, int(t), name, float(stat[t])))
            stat[t] = 0.0
    m.step += 1
    m.alarms.extend(new)
    return new
