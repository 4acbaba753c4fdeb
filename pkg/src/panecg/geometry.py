"""Spherical view angles and direction vectors.

Convention (fixed once, used everywhere): theta is the polar angle from +z,
phi the azimuth from +x, both in degrees at API boundaries.  theta lies in
[0, 180], phi in (-180, 180].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ViewAngle", "unit_direction", "wrap_phi", "clamp_theta"]


def wrap_phi(phi: float) -> float:
    """Wrap an azimuth in degrees into (-180, 180]."""
    phi = (phi + 180.0) % 360.0 - 180.0
    return 180.0 if phi == -180.0 else phi


def clamp_theta(theta: float) -> float:
    return min(max(theta, 0.0), 180.0)


@dataclass(frozen=True)
class ViewAngle:
    """Polar/azimuth pair in degrees."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= 180.0):
            raise ValueError(f"theta {self.theta} outside [0, 180]")
        if not (-180.0 < self.phi <= 180.0):
            raise ValueError(f"phi {self.phi} outside (-180, 180]")

    def offset(self, dtheta: float, dphi: float) -> "ViewAngle":
        """Shifted angle, clamped/wrapped back into the valid ranges."""
        return ViewAngle(clamp_theta(self.theta + dtheta), wrap_phi(self.phi + dphi))

    def as_tuple(self) -> tuple[float, float]:
        return (self.theta, self.phi)


def unit_direction(angle: ViewAngle) -> np.ndarray:
    """Unit vector (sin t cos p, sin t sin p, cos t) for the angle in degrees."""
    t = math.radians(angle.theta)
    p = math.radians(angle.phi)
    return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)], dtype=np.float64)
