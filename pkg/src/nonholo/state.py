"""State containers shared by the assemblers and the integrator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class AugmentedState:
    """Coordinates, velocities and (for variational runs) multiplier state."""

    q: np.ndarray
    v: np.ndarray
    lam: Optional[np.ndarray] = None
    lam_dot: Optional[np.ndarray] = None
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.v = np.asarray(self.v, dtype=float).ravel()
        if self.q.shape != self.v.shape:
            raise ValueError("q and v must have the same length")
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=float).ravel()
        if self.lam_dot is not None:
            self.lam_dot = np.asarray(self.lam_dot, dtype=float).ravel()


@dataclass
class StepEval:
    """Everything a system computes at one (t, y): the derivative plus diagnostics."""

    dy: np.ndarray
    a: np.ndarray
    lam: np.ndarray
    R: np.ndarray
    E_L: float
    E_M: float
    power_D: float
    residuals: np.ndarray
    lam_dot: Optional[np.ndarray] = None

    @property
    def reaction_power(self) -> float:
        n = len(self.a)
        return float(np.dot(self.R, self.dy[:n]))
