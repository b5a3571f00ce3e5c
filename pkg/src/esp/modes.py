"""Communication modes between sampled spaces, water-filling and link capacities."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .em import Medium, green_dyadic
from .errors import ParameterError, SingularityError

ILL_CONDITIONED = 1e8


@dataclass(frozen=True)
class SampledSpace:
    """A region discretized into point-dipole samples.

    Attributes
    ----------
    positions : ndarray, shape (n, 3)
    orientations : ndarray, shape (n, 3)
        Unit polarization of each sample.
    element_length : float
        Effective dipole length (sample moment per unit current).
    pitch : float
        Sampling step, recorded to flag undersampling.
    """

    positions: np.ndarray
    orientations: np.ndarray
    element_length: float
    pitch: float

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        ori = np.asarray(self.orientations, dtype=float)
        if ori.ndim == 1:
            ori = np.broadcast_to(ori, pos.shape).copy()
        if pos.shape != ori.shape or pos.shape[1] != 3:
            raise ParameterError("positions and orientations must both have shape (n, 3)")
        norms = np.linalg.norm(ori, axis=1)
        if np.any(np.abs(norms - 1) > 1e-12):
            raise ParameterError("orientations must be unit vectors")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", ori)

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def segment(cls, length, pitch, center=(0.0, 0.0, 0.0), axis=(1.0, 0.0, 0.0),
                orientation=(0.0, 0.0, 1.0), element_length=None):
        """Uniform samples along a straight segment, endpoints included."""
        n = int(np.floor(length / pitch + 1e-9)) + 1
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        offsets = (np.arange(n) - (n - 1) / 2) * pitch
        pos = np.asarray(center, dtype=float) + offsets[:, None] * axis
        return cls(pos, np.asarray(orientation, dtype=float),
                   pitch if element_length is None else element_length, pitch)

    @classmethod
    def square(cls, side, pitch, center=(0.0, 0.0, 0.0), orientation=(0.0, 1.0, 0.0),
               element_length=None):
        """Uniform samples on a square in the plane z = center_z."""
        n = int(np.floor(side / pitch + 1e-9)) + 1
        off = (np.arange(n) - (n - 1) / 2) * pitch
        gx, gy = np.meshgrid(off, off, indexing="ij")
        pos = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
        pos = pos + np.asarray(center, dtype=float)
        return cls(pos, np.asarray(orientation, dtype=float),
                   pitch if element_length is None else element_length, pitch)


def coupling_matrix(src: SampledSpace, dst: SampledSpace, medium: Medium) -> np.ndarray:
    """Green coupling from ``src`` samples (columns) to ``dst`` samples (rows).

    Entry (m, n) is l_dst l_src p_m . G_e(r_m - r_n) . p_n.
    """
    for space, name in ((src, "source"), (dst, "destination")):
        if space.pitch > medium.wavelength / 2 * (1 + 1e-9):
            warnings.warn(f"{name} space pitch exceeds lambda/2 (undersampled)", stacklevel=2)
    sep = dst.positions[:, None, :] - src.positions[None, :, :]
    if np.any(np.einsum("ijk,ijk->ij", sep, sep) == 0):
        raise SingularityError("source and destination samples coincide")
    g = green_dyadic(sep, medium)
    scale = dst.element_length * src.element_length
    return scale * np.einsum("mi,mnij,nj->mn", dst.orientations, g, src.orientations)


@dataclass(frozen=True)
class ModeDecomposition:
    left_basis: np.ndarray
    singular_values: np.ndarray
    right_basis: np.ndarray

    @property
    def gains(self):
        return self.singular_values**2

    def reconstruct(self):
        return (self.left_basis * self.singular_values) @ self.right_basis.conj().T


def mode_decomposition(coupling, full: bool = False) -> ModeDecomposition:
    """Singular triplets of a coupling matrix, descending.

    Each right singular vector is rotated so its largest-magnitude entry is
    real positive; the matching left vector absorbs the conjugate phase.
    """
    h = np.asarray(coupling, dtype=complex)
    if not np.all(np.isfinite(h)):
        raise ParameterError("coupling matrix has non-finite entries")
    u, s, vh = np.linalg.svd(h, full_matrices=full)
    v = vh.conj().T
    r = len(s)
    idx = np.argmax(np.abs(v[:, :r]), axis=0)
    pivot = v[idx, np.arange(r)]
    phase = np.ones(r, dtype=complex)
    nz = np.abs(pivot) > 0
    phase[nz] = np.abs(pivot[nz]) / pivot[nz]
    v[:, :r] *= phase
    u[:, :r] *= phase
    return ModeDecomposition(left_basis=u, singular_values=s, right_basis=v)


def count_dof(decomposition: ModeDecomposition, threshold_db: Optional[float] = None,
              energy_fraction: Optional[float] = None) -> int:
    """Number of significant modes by a dB threshold or a cumulative-energy fraction."""
    g = np.asarray(decomposition.singular_values, dtype=float) ** 2
    if g.size == 0:
        raise ParameterError("no singular values")
    if (threshold_db is None) == (energy_fraction is None):
        raise ParameterError("give exactly one of threshold_db or energy_fraction")
    if threshold_db is not None:
        return int(np.count_nonzero(g >= g[0] * 10 ** (-threshold_db / 10)))
    if not 0 < energy_fraction <= 1:
        raise ParameterError("energy_fraction must lie in (0, 1]")
    cum = np.cumsum(g)
    target = energy_fraction * cum[-1]
    # tolerate rounding on the final partial sum
    return int(min(np.searchsorted(cum, target * (1 - 1e-12)) + 1, g.size))


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    water_level: float

    @property
    def active(self):
        return self.powers > 0


def water_filling(gains, noise_power: float, total_power: float,
                  max_iter: int = 200) -> PowerAllocation:
    """Capacity-optimal power split over parallel channels with gains sigma_n^2.

    The water level is bracketed by bisection on the monotone function
    sum(max(mu - noise/g_n, 0)); once the active set is stable the level is
    recomputed in closed form so the powers sum to ``total_power`` exactly.
    """
    g = np.asarray(gains, dtype=float)
    if g.size == 0:
        raise ParameterError("gains must be non-empty")
    if np.any(g <= 0):
        raise ParameterError("gains must be positive")
    if not (noise_power > 0 and total_power > 0):
        raise ParameterError("noise_power and total_power must be positive")
    floors = noise_power / g
    lo, hi = floors.min(), floors.max() + total_power
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if np.maximum(mid - floors, 0).sum() > total_power:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(abs(hi), 1.0):
            break
    mu = 0.5 * (lo + hi)
    active = floors < mu
    mu = (total_power + floors[active].sum()) / active.sum()
    powers = np.where(active, np.maximum(mu - floors, 0.0), 0.0)
    return PowerAllocation(powers=powers, water_level=float(mu))


def capacity_for_powers(gains, powers, noise_power) -> float:
    g = np.asarray(gains, dtype=float)
    return float(np.sum(np.log2(1 + np.asarray(powers) * g / noise_power)))


def link_capacity(gains, noise_power: float, total_power: float) -> float:
    """Water-filled capacity (bit/s/Hz) of parallel channels."""
    alloc = water_filling(gains, noise_power, total_power)
    return capacity_for_powers(gains, alloc.powers, noise_power)


def matrix_capacity(h, noise_power: float, total_power: float) -> float:
    """Water-filled capacity of a MIMO matrix channel (zero modes dropped)."""
    s = np.linalg.svd(np.asarray(h), compute_uv=False)
    g = s[s > s[0] * 1e-12] ** 2 if s.size and s[0] > 0 else np.array([])
    if g.size == 0:
        return 0.0
    return link_capacity(g, noise_power, total_power)


@dataclass(frozen=True)
class CascadeLink:
    """Source -> scattering device -> receiver link, H = H_R R H_T.

    ``h_t`` is K x N (source modes to device), ``h_r`` is M x K.
    """

    h_t: np.ndarray
    h_r: np.ndarray

    def __post_init__(self):
        ht = np.atleast_2d(np.asarray(self.h_t, dtype=complex))
        hr = np.atleast_2d(np.asarray(self.h_r, dtype=complex))
        if hr.shape[1] != ht.shape[0]:
            raise ParameterError(
                f"H_R has {hr.shape[1]} columns but H_T has {ht.shape[0]} rows"
            )
        object.__setattr__(self, "h_t", ht)
        object.__setattr__(self, "h_r", hr)

    @classmethod
    def from_couplings(cls, gamma_t, gamma_r, u=None, v=None):
        """Build H_T = V^-1 Gamma_T and H_R = Gamma_R U from mode couplings."""
        gt = np.diag(np.asarray(gamma_t, dtype=complex))
        gr = np.diag(np.asarray(gamma_r, dtype=complex))
        ht = gt if v is None else _checked_solve(v, gt)
        hr = gr if u is None else gr @ u
        return cls(ht, hr)

    @property
    def n_tx(self):
        return self.h_t.shape[1]

    @property
    def n_rx(self):
        return self.h_r.shape[0]

    @property
    def n_device(self):
        return self.h_t.shape[0]

    @property
    def n_modes(self):
        return min(self.n_tx, self.n_rx)

    def singular_values(self):
        st = np.linalg.svd(self.h_t, compute_uv=False)
        sr = np.linalg.svd(self.h_r, compute_uv=False)
        return st, sr

    def product_gains(self):
        """Squared products of the sorted per-hop singular values, first N_c entries."""
        st, sr = self.singular_values()
        nc = min(self.n_modes, st.size, sr.size)
        return (st[:nc] * sr[:nc]) ** 2


def _checked_solve(v, rhs):
    cond = np.linalg.cond(v)
    if cond > ILL_CONDITIONED:
        warnings.warn(f"mode basis is ill-conditioned (cond = {cond:.3g})", stacklevel=3)
    return np.linalg.solve(v, rhs)


def cascade_capacity(link: CascadeLink, noise_power: float, total_power: float) -> float:
    """Capacity of the device-assisted link with the capacity-optimal device matrix."""
    g = link.product_gains()
    g = g[g > 0]
    if g.size == 0:
        return 0.0
    return link_capacity(g, noise_power, total_power)


def cascade_allocation(link: CascadeLink, noise_power: float, total_power: float):
    """Water-filling powers over all K device modes; entries beyond N_c are zero."""
    g = link.product_gains()
    alloc = water_filling(np.where(g > 0, g, np.finfo(float).tiny), noise_power, total_power)
    powers = np.zeros(link.n_device)
    powers[: g.size] = alloc.powers
    return PowerAllocation(powers=powers, water_level=alloc.water_level)


def optimal_scatter_matrix(h_t, h_r) -> np.ndarray:
    """Device matrix R = V_R U_T^H that diagonalizes H_R R H_T.

    U_T holds the left singular vectors of ``h_t`` and V_R the right singular
    vectors of ``h_r``, both as full K x K unitaries.
    """
    ht = np.atleast_2d(np.asarray(h_t, dtype=complex))
    hr = np.atleast_2d(np.asarray(h_r, dtype=complex))
    if hr.shape[1] != ht.shape[0]:
        raise ParameterError("H_R columns must match H_T rows")
    u_t, s_t, _ = np.linalg.svd(ht)
    _, s_r, vh_r = np.linalg.svd(hr)
    for s, name in ((s_t, "H_T"), (s_r, "H_R")):
        if s.size > 1 and np.any(np.abs(np.diff(s)) <= 1e-9 * s[0]):
            warnings.warn(f"{name} has repeated singular values; optimal R is not unique",
                          stacklevel=2)
    return vh_r.conj().T @ u_t.conj().T


def end_to_end(h_r, r, h_t):
    return np.asarray(h_r) @ np.asarray(r) @ np.asarray(h_t)


def mode_transfer_matrix(d, g=None, u=None, v=None, born=True):
    """Mode transfer matrix C = U D (I - G D)^-1 V^-1.

    With ``born=True`` the feedback term is dropped (weak scattering), giving
    C = U D V^-1. Missing bases default to the identity.
    """
    d = np.atleast_2d(np.asarray(d, dtype=complex))
    k = d.shape[0]
    core = d
    if not born:
        if g is None:
            raise ParameterError("the exact transfer matrix needs the self-coupling G")
        core = d @ np.linalg.inv(np.eye(k) - np.asarray(g) @ d)
    left = core if u is None else np.asarray(u) @ core
    if v is None:
        return left
    # right-multiplication by V^-1: solve X V = left
    cond = np.linalg.cond(v)
    if cond > ILL_CONDITIONED:
        warnings.warn(f"mode basis V is ill-conditioned (cond = {cond:.3g})", stacklevel=2)
    return np.linalg.solve(np.asarray(v).T, left.T).T
