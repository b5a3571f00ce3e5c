"""Degrees-of-freedom calculators for apertures and paraxial links.

Counts are per polarization; pass ``polarizations=2`` to double them.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .em import Medium
from .errors import ParameterError

_KINDS = ("segment", "rectangle", "box")


@dataclass(frozen=True)
class ApertureGeometry:
    kind: str
    lengths: tuple

    def __post_init__(self):
        n = {"segment": 1, "rectangle": 2, "box": 3}.get(self.kind)
        if n is None:
            raise ParameterError(f"unknown aperture kind {self.kind!r}")
        lengths = tuple(float(x) for x in self.lengths)
        if len(lengths) != n:
            raise ParameterError(f"{self.kind} needs {n} lengths, got {len(lengths)}")
        if any(not x > 0 for x in lengths):
            raise ParameterError(f"aperture lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def segment(cls, length):
        return cls("segment", (length,))

    @classmethod
    def rectangle(cls, lx, ly):
        return cls("rectangle", (lx, ly))

    @classmethod
    def square(cls, side):
        return cls("rectangle", (side, side))

    @classmethod
    def box(cls, lx, ly, lz):
        return cls("box", (lx, ly, lz))

    @classmethod
    def cube(cls, side):
        return cls("box", (side, side, side))

    @property
    def is_regular(self) -> bool:
        return len(set(self.lengths)) == 1


@dataclass(frozen=True)
class LinkGeometry:
    """Two parallel, center-aligned apertures at distance ``distance``.

    For ``kind="segments"`` the sizes are lengths; for ``kind="squares"`` they
    are areas.
    """

    kind: str
    tx_size: float
    rx_size: float
    distance: float
    paraxial: bool = True

    def __post_init__(self):
        if self.kind not in ("segments", "squares"):
            raise ParameterError(f"unknown link kind {self.kind!r}")
        if not (self.tx_size > 0 and self.rx_size > 0):
            raise ParameterError("aperture sizes must be positive")
        if not self.distance > 0:
            raise ParameterError("link distance must be positive")

    @classmethod
    def segments(cls, lt, lr, d):
        return cls("segments", lt, lr, d)

    @classmethod
    def squares(cls, at, ar, d):
        return cls("squares", at, ar, d)


@dataclass
class DofResult:
    value: float
    method: str
    lattice_count: Optional[int] = None

    def rounded(self) -> int:
        return int(math.floor(self.value + 0.5))


def _warn_small(geometry, lam):
    if min(geometry.lengths) < 4 * lam:
        warnings.warn(
            f"aperture side {min(geometry.lengths) / lam:.2f} wavelengths is below 4; "
            "asymptotic DoF formulas are unreliable",
            stacklevel=3,
        )


def count_visible_1d(length, wavelength) -> int:
    """Fourier modes ``k_n = 2 pi n / L`` with ``|k_n| <= k0``."""
    nmax = math.floor(length / wavelength * (1 + 1e-12))
    return 2 * nmax + 1


def count_visible_2d(lx, ly, wavelength) -> int:
    """Size of the index set {(nx, ny): (nx lam/Lx)^2 + (ny lam/Ly)^2 <= 1}."""
    nx_max = math.floor(lx / wavelength * (1 + 1e-12))
    nx = np.arange(-nx_max, nx_max + 1)
    # for each nx, the admissible |ny| <= Ly/lam * sqrt(1 - (nx lam/Lx)^2)
    rem = np.clip(1.0 - (nx * wavelength / lx) ** 2, 0.0, None)
    ny_max = np.floor(ly / wavelength * np.sqrt(rem) * (1 + 1e-12)).astype(int)
    return int(np.sum(2 * ny_max + 1))


def count_shell_3d(lx, ly, lz, wavelength, thickness=None) -> int:
    """Lattice wavevectors (2 pi n_i / L_i) within a shell of radius k0 and given thickness.

    Default thickness is 2 pi / L (first sinc lobe); for unequal sides the
    geometric-mean side is used.
    """
    k0 = 2 * np.pi / wavelength
    if thickness is None:
        thickness = 2 * np.pi / (lx * ly * lz) ** (1 / 3)
    kmax = k0 + thickness / 2
    axes = []
    for side in (lx, ly, lz):
        nmax = math.ceil(kmax * side / (2 * np.pi))
        axes.append(2 * np.pi * np.arange(-nmax, nmax + 1) / side)
    kx, ky, kz = np.meshgrid(*axes, indexing="ij", sparse=True)
    kabs = np.sqrt(kx**2 + ky**2 + kz**2)
    return int(np.count_nonzero(np.abs(kabs - k0) <= thickness / 2))


def dof_unbounded(geometry: ApertureGeometry, medium: Medium, method="formula",
                  polarizations=1) -> DofResult:
    """Number of radiating degrees of freedom of an aperture in unbounded space.

    ``method="formula"`` gives the closed forms 2L/lam (segment), pi L^2/lam^2
    (square) and pi/3 + 4 pi L^2/lam^2 (cube, exact shell volume times lattice
    density). ``method="lattice"`` enumerates Fourier-mode indices instead and
    handles unequal sides.
    """
    lam = medium.wavelength
    _warn_small(geometry, lam)
    if method == "formula":
        if not geometry.is_regular:
            raise ParameterError(
                "closed-form DoF exists only for square/cube apertures; use method='lattice'"
            )
        side = geometry.lengths[0]
        if geometry.kind == "segment":
            value = 2 * side / lam
        elif geometry.kind == "rectangle":
            value = np.pi * side**2 / lam**2
        else:
            value = np.pi / 3 + 4 * np.pi * side**2 / lam**2
        return DofResult(value=polarizations * value, method="formula")
    if method == "lattice":
        if geometry.kind == "segment":
            n = count_visible_1d(geometry.lengths[0], lam)
        elif geometry.kind == "rectangle":
            n = count_visible_2d(*geometry.lengths, lam)
        else:
            n = count_shell_3d(*geometry.lengths, lam)
        n *= polarizations
        return DofResult(value=float(n), method="lattice", lattice_count=n)
    raise ParameterError(f"unknown method {method!r}")


def link_zeta(rx_length, distance) -> float:
    return rx_length / math.sqrt(4 * distance**2 + rx_length**2)


def dof_link(geometry: LinkGeometry, medium: Medium, method="corrected",
             polarizations=1) -> DofResult:
    """Number of well-coupled communication modes of a paraxial link.

    ``classic`` is the Fresnel-number product, which grows without bound with
    the receiver size; ``corrected`` saturates at the unbounded-space count of
    the transmit aperture. For squares the corrected form needs At < Ar.
    """
    lam = medium.wavelength
    d = geometry.distance
    if geometry.kind == "segments":
        lt, lr = geometry.tx_size, geometry.rx_size
        if method == "classic":
            value = lt * lr / (lam * d)
        elif method == "corrected":
            value = 2 * lt / lam * link_zeta(lr, d)
        else:
            raise ParameterError(f"unknown method {method!r}")
    else:
        at, ar = geometry.tx_size, geometry.rx_size
        if method == "classic":
            value = at * ar / (lam**2 * d**2)
        elif method == "corrected":
            if at >= ar:
                raise ParameterError(
                    "corrected square-link DoF requires At < Ar; swap transmitter and receiver"
                )
            zeta = link_zeta(math.sqrt(ar), d)
            value = 4 * at / lam**2 * zeta * math.atan(zeta)
        else:
            raise ParameterError(f"unknown method {method!r}")
    return DofResult(value=polarizations * value, method=method)


@dataclass(frozen=True)
class DftCodebook:
    matrix: np.ndarray
    beam_index: np.ndarray
    angles: np.ndarray  # radians, arcsin(2 n / N)

    @property
    def angles_deg(self):
        return np.degrees(self.angles)


def dft_codebook(n: int) -> DftCodebook:
    """Unitary DFT beamforming codebook for an ``n``-element half-wavelength ULA."""
    if n < 1:
        raise ParameterError("codebook size must be >= 1")
    m = np.arange(n)
    matrix = np.exp(-2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)
    half = n // 2
    idx = np.arange(-half, half + 1)
    angles = np.arcsin(np.clip(2 * idx / n, -1.0, 1.0))
    return DftCodebook(matrix=matrix, beam_index=idx, angles=angles)
