"""Diagonal RIS: anomalous-reflection phase law, array-factor patterns, DoF counts.

Cells sit on a half-wavelength grid indexed i, j = 1..sqrt(K), so moving one
index shifts the phase of a plane wave by pi * u.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .em import Medium
from .errors import ParameterError


@dataclass(frozen=True)
class Angle:
    """Direction (elevation from the panel normal, azimuth), radians."""

    elevation: float
    azimuth: float

    def __post_init__(self):
        if not 0 <= self.elevation <= np.pi / 2 + 1e-12:
            raise ParameterError("elevation must lie in [0, pi/2]")
        object.__setattr__(self, "azimuth", float(np.mod(self.azimuth, 2 * np.pi)))

    @classmethod
    def from_degrees(cls, elevation, azimuth):
        return cls(np.radians(elevation), np.radians(azimuth))

    @property
    def ux(self):
        return np.sin(self.elevation) * np.cos(self.azimuth)

    @property
    def uy(self):
        return np.sin(self.elevation) * np.sin(self.azimuth)

    def unit_vector(self):
        s = np.sin(self.elevation)
        return np.array([s * np.cos(self.azimuth), s * np.sin(self.azimuth),
                         np.cos(self.elevation)])


def _check_spacing(spacing, medium):
    if spacing is None:
        return
    if medium is None or not math.isclose(spacing, medium.wavelength / 2, rel_tol=1e-9):
        raise ParameterError("the anomalous-reflection law here assumes lambda/2 cell spacing")


@dataclass
class RisPanel:
    side: int
    phases: np.ndarray

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float)
        if ph.shape != (self.side, self.side):
            raise ParameterError(f"phases must be {self.side} x {self.side}")
        self.phases = np.mod(ph, 2 * np.pi)

    @property
    def n_cells(self):
        return self.side**2

    @property
    def reflection_coefficients(self):
        return np.exp(1j * self.phases)

    def reflection_matrix(self):
        """Diagonal K x K reflection matrix, cell (i, j) at k = i + sqrt(K)(j - 1) (1-based)."""
        return np.diag(self.reflection_coefficients.ravel(order="F"))

    @classmethod
    def uniform(cls, side, phase=0.0):
        return cls(side, np.full((side, side), phase))


def anomalous_phase_profile(incident: Angle, desired: Angle, side: int,
                            spacing: Optional[float] = None,
                            medium: Optional[Medium] = None) -> np.ndarray:
    """Cell phases steering a wave from ``incident`` towards ``desired``, wrapped to [0, 2 pi)."""
    _check_spacing(spacing, medium)
    idx = np.arange(1, side + 1)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    theta = -np.pi * i * (incident.ux + desired.ux) - np.pi * j * (incident.uy + desired.uy)
    return np.mod(theta, 2 * np.pi)


def array_factor(panel: RisPanel, incident: Angle, ux, uy) -> np.ndarray:
    """Complex array factor towards direction cosines (ux, uy), any broadcastable shape."""
    ux = np.asarray(ux, dtype=float)
    uy = np.asarray(uy, dtype=float)
    idx = np.arange(1, panel.side + 1)
    # separable sum over the two cell indices for each direction
    rho = panel.reflection_coefficients
    ex = np.exp(1j * np.pi * np.multiply.outer(ux + incident.ux, idx))
    ey = np.exp(1j * np.pi * np.multiply.outer(uy + incident.uy, idx))
    return np.sum((ex @ rho) * ey, axis=-1)


def reflected_pattern(panel: RisPanel, incident: Angle, elevations, azimuths) -> np.ndarray:
    """Array-factor magnitude on the grid elevations x azimuths (radians)."""
    el, az = np.meshgrid(np.asarray(elevations), np.asarray(azimuths), indexing="ij")
    ux = np.sin(el) * np.cos(az)
    uy = np.sin(el) * np.sin(az)
    return np.abs(array_factor(panel, incident, ux, uy))


def pattern_peak(panel: RisPanel, incident: Angle, step_deg: float = 1.0) -> Angle:
    """Direction of the largest reflected array factor on a regular angular grid."""
    el = np.radians(np.arange(0.0, 90.0 + 1e-9, step_deg))
    az = np.radians(np.arange(0.0, 360.0, step_deg))
    pat = reflected_pattern(panel, incident, el, az)
    i, j = np.unravel_index(int(np.argmax(pat)), pat.shape)
    return Angle(el[i], az[j])


def angular_distance(a: Angle, b: Angle) -> float:
    c = float(np.clip(a.unit_vector() @ b.unit_vector(), -1.0, 1.0))
    return math.acos(c)


RIS_STRUCTURES = ("diagonal", "nondiagonal_reciprocal", "nondiagonal_nonreciprocal")


def ris_dof(k: int, structure: str = "diagonal") -> int:
    """Tunable parameters of a K-cell RIS reflection matrix for a given structure."""
    if k < 1:
        raise ParameterError("K must be >= 1")
    if structure == "diagonal":
        return k
    if structure == "nondiagonal_reciprocal":
        return k * (k - 1) // 2
    if structure == "nondiagonal_nonreciprocal":
        return k * k
    raise ParameterError(f"unknown RIS structure {structure!r}")
