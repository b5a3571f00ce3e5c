"""Free-space dyadic Green's function, field superposition and far-field patterns.

All fields are monochromatic complex envelopes with an exp(+j w t) time
dependence, so an outgoing spherical wave goes as exp(-j k0 |r|) / |r|.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError, SingularityError

ETA0 = 376.730313668  # free-space impedance, ohm


@dataclass(frozen=True)
class Medium:
    """Homogeneous lossless medium at a single frequency."""

    wavelength: float
    impedance: float = ETA0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ParameterError(f"wavelength must be positive, got {self.wavelength}")
        if not self.impedance > 0:
            raise ParameterError(f"impedance must be positive, got {self.impedance}")

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    @classmethod
    def from_frequency(cls, frequency_hz: float, impedance: float = ETA0) -> "Medium":
        return cls(wavelength=299_792_458.0 / frequency_hz, impedance=impedance)


@dataclass(frozen=True)
class CurrentElement:
    """Hertzian (point) current element of moment ``length * amplitude`` along ``orientation``."""

    position: np.ndarray
    orientation: np.ndarray
    length: float
    amplitude: complex = 1.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        ori = np.asarray(self.orientation, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ParameterError("element position must be finite")
        if abs(np.linalg.norm(ori) - 1.0) > 1e-12:
            raise ParameterError(f"orientation must be a unit vector, |p| = {np.linalg.norm(ori)}")
        if not self.length > 0:
            raise ParameterError("element length must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", ori)

    @property
    def moment(self) -> np.ndarray:
        return self.length * complex(self.amplitude) * self.orientation


def _mat(a):
    # scalar or stacked coefficients broadcast against 3 x 3 blocks
    return np.asarray(a)[..., None, None]


def _split_radius(r):
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 3:
        raise ParameterError(f"expected trailing dimension 3, got shape {r.shape}")
    dist = np.asarray(np.linalg.norm(r, axis=-1))
    if np.any(dist == 0):
        raise SingularityError("Green's function is singular at r = 0")
    rhat = r / dist[..., None]
    return dist, rhat


def green_dyadic_terms(r, medium: Medium):
    """Return the radiative, intermediate and reactive parts of the dyadic kernel.

    Each term already carries the common prefactor, so the three arrays sum to
    :func:`green_dyadic`. Accepts a single vector or a stack of shape ``(..., 3)``.
    """
    dist, rhat = _split_radius(r)
    lam = medium.wavelength
    k0 = medium.wavenumber
    pre = -1j * medium.impedance * np.exp(-1j * k0 * dist) / (2 * lam * dist)
    outer = rhat[..., :, None] * rhat[..., None, :]
    eye = np.eye(3)
    x = np.asarray(lam / (2 * np.pi * dist))
    pre = _mat(pre)
    radiative = pre * (eye - outer)
    near = eye - 3 * outer
    intermediate = pre * _mat(-1j * x) * near
    reactive = -pre * _mat(x**2) * near
    return radiative, intermediate, reactive


def green_dyadic(r, medium: Medium) -> np.ndarray:
    """Electric dyadic Green's function G_e(r) of free space.

    Parameters
    ----------
    r : array_like, shape (3,) or (..., 3)
        Separation vector(s) between observation and source point, meters.
    medium : Medium

    Returns
    -------
    ndarray, shape (3, 3) or (..., 3, 3), complex
        Field (V/m) radiated by a unit current moment (A m).

    Notes
    -----
    The 1/|r|^2 term carries 1/(j k0 |r|), i.e. a factor -j lambda / (2 pi |r|);
    with this sign every column solves the vector Helmholtz equation and
    Re{G} stays bounded as |r| -> 0.
    """
    dist, rhat = _split_radius(r)
    lam = medium.wavelength
    pre = -1j * medium.impedance * np.exp(-1j * medium.wavenumber * dist) / (2 * lam * dist)
    x = lam / (2 * np.pi * dist)
    outer = rhat[..., :, None] * rhat[..., None, :]
    eye = np.eye(3)
    a = _mat(1 - 1j * x - x**2)
    b = _mat(-1 + 3j * x + 3 * x**2)
    return _mat(pre) * (a * eye + b * outer)


def _as_arrays(elements: Sequence[CurrentElement]):
    if len(elements) == 0:
        raise ParameterError("at least one current element is required")
    pos = np.array([e.position for e in elements])
    mom = np.array([e.moment for e in elements])
    return pos, mom


def field_from_currents(elements: Sequence[CurrentElement], r, medium: Medium) -> np.ndarray:
    """Superpose the fields of point current elements at observation point ``r``."""
    pos, mom = _as_arrays(elements)
    sep = np.asarray(r, dtype=float).reshape(3) - pos
    if np.any(np.linalg.norm(sep, axis=-1) == 0):
        raise SingularityError("observation point coincides with a current element")
    g = green_dyadic(sep, medium)
    return np.einsum("kij,kj->i", g, mom)


def source_spectrum(elements: Sequence[CurrentElement], k) -> np.ndarray:
    """Spatial Fourier transform of the point-current distribution at wavevector ``k``."""
    pos, mom = _as_arrays(elements)
    phase = np.exp(1j * pos @ np.asarray(k, dtype=float))
    return phase @ mom


def far_field(elements: Sequence[CurrentElement], direction, medium: Medium) -> np.ndarray:
    """Far-field pattern vector j k0 eta r x (r x J(k0 r)) along a unit ``direction``.

    The spherical spreading factor exp(-j k0 R) / (4 pi R) is left to the caller.
    """
    u = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ParameterError(f"direction must be a unit vector, |u| = {np.linalg.norm(u)}")
    k0 = medium.wavenumber
    jt = source_spectrum(elements, k0 * u)
    return 1j * k0 * medium.impedance * np.cross(u, np.cross(u, jt))


def far_field_at(elements: Sequence[CurrentElement], r, medium: Medium) -> np.ndarray:
    """Far-field approximation of the radiated field at the point ``r``."""
    r = np.asarray(r, dtype=float).reshape(3)
    dist = np.linalg.norm(r)
    spread = np.exp(-1j * medium.wavenumber * dist) / (4 * np.pi * dist)
    return spread * far_field(elements, r / dist, medium)


def is_radiating(k, medium: Medium, tolerance: float = 1e-9) -> bool:
    """True when the wavevector ``k`` lies on the sphere |k| = k0 (propagating plane wave)."""
    k = np.asarray(k, dtype=float).reshape(3)
    k0sq = medium.wavenumber**2
    return bool(abs(k @ k - k0sq) <= tolerance * k0sq)


def is_visible(kx, ky, medium: Medium):
    """Visible-region test for transverse wavenumbers on a planar aperture."""
    return np.asarray(kx) ** 2 + np.asarray(ky) ** 2 <= medium.wavenumber**2
