"""Slow variables and the compact region they are watched in."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit

__all__ = ["Region", "SlowState"]


@dataclass(frozen=True)
class SlowState:
    """Slow variables ``h = (Q, W, E_1j, E_2j)``; ``W`` is the piston velocity over eps."""

    Q: float
    W: float
    E1: tuple[float, ...]
    E2: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "E1", tuple(float(e) for e in np.atleast_1d(self.E1)))
        object.__setattr__(self, "E2", tuple(float(e) for e in np.atleast_1d(self.E2)))
        if not self.E1 or not self.E2:
            raise ValueError("need at least one particle on each side")
        if min(self.E1 + self.E2) < 0.0:
            raise ValueError("particle energies must be non-negative")

    @property
    def n1(self) -> int:
        return len(self.E1)

    @property
    def n2(self) -> int:
        return len(self.E2)

    @property
    def E1_total(self) -> float:
        return math.fsum(self.E1)

    @property
    def E2_total(self) -> float:
        return math.fsum(self.E2)

    @property
    def total_energy(self) -> float:
        return 0.5 * self.W**2 + self.E1_total + self.E2_total

    def as_array(self) -> np.ndarray:
        return np.array([self.Q, self.W, *self.E1, *self.E2], dtype=float)

    @classmethod
    def from_array(cls, h, n1: int) -> SlowState:
        h = np.asarray(h, dtype=float)
        return cls(float(h[0]), float(h[1]), tuple(h[2:2 + n1]), tuple(h[2 + n1:]))


@dataclass(frozen=True)
class Region:
    """Compact set of admissible slow states.

    ``Q`` in ``[q_min, q_max]``, ``|W| <= w_max``, every particle energy at
    least ``e_floor`` and total energy ``W^2/2 + E1 + E2`` in ``[e_min, e_max]``.
    """

    q_min: float = 0.1
    q_max: float = 0.9
    w_max: float = 2.0
    e_floor: float = 1e-3
    e_min: float = 0.0
    e_max: float = 4.0
    scales: tuple[float, float, float] | None = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.q_min < self.q_max < 1.0:
            raise ValueError("need 0 < q_min < q_max < 1")
        if not self.w_max > 0.0:
            raise ValueError("w_max must be positive")
        if not 0.0 <= self.e_floor:
            raise ValueError("e_floor must be non-negative")
        if not 0.0 <= self.e_min < self.e_max:
            raise ValueError("need 0 <= e_min < e_max")

    def contains(self, h) -> bool:
        h = h.as_array() if isinstance(h, SlowState) else np.asarray(h, dtype=float)
        return bool(_contains_vec(h, self.bounds()))

    def bounds(self) -> np.ndarray:
        return np.array([self.q_min, self.q_max, self.w_max, self.e_floor, self.e_min, self.e_max])

    def weights(self, n: int) -> np.ndarray:
        """Per-component inverse scales for the weighted max-norm on ``h``."""
        sq, sw, se = self.scales or (self.q_max - self.q_min, self.w_max, self.e_max)
        return np.concatenate([[1.0 / sq, 1.0 / sw], np.full(n, 1.0 / se)])

    @property
    def diameter(self) -> float:
        """Weighted diameter: any two points of the region are closer than this."""
        w = self.weights(1)
        return float(max((self.q_max - self.q_min) * w[0], 2 * self.w_max * w[1], self.e_max * w[2]))


@njit
def _contains_vec(h, b):
    """Membership of flat slow state ``h`` in the region with ``bounds() == b``."""
    q = h[0]
    w = h[1]
    if q < b[0] or q > b[1] or abs(w) > b[2]:
        return False
    tot = 0.5 * w * w
    for j in range(2, h.shape[0]):
        if h[j] < b[3]:
            return False
        tot += h[j]
    return b[4] <= tot <= b[5]
