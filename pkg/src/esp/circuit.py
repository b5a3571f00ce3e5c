"""Multiport circuit model of port-loaded dipole arrays and DSA load synthesis.

Port convention: with impressed open-circuit voltages v, the port currents
satisfy -(Z_L + Z) i = v, so i = -(Z_L + Z)^-1 v. Loads are Z_L = diag(r + j theta).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .em import Medium, green_dyadic
from .errors import NearResonanceError, ParameterError, PassivityError, SingularityError

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class DipoleArray:
    positions: np.ndarray
    orientations: np.ndarray
    element_length: float
    self_reactance: float = 0.0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        ori = np.asarray(self.orientations, dtype=float)
        if ori.ndim == 1:
            ori = np.broadcast_to(ori, pos.shape).copy()
        if pos.shape != ori.shape or pos.shape[1] != 3:
            raise ParameterError("positions and orientations must have shape (K, 3)")
        if np.any(np.abs(np.linalg.norm(ori, axis=1) - 1) > 1e-12):
            raise ParameterError("orientations must be unit vectors")
        if not self.element_length > 0:
            raise ParameterError("element_length must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", ori)

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def hexagonal(cls, rings, spacing, element_length, orientation=(0.0, 0.0, 1.0),
                  self_reactance=0.0):
        """Center element plus ``rings`` hexagonal rings in the xy-plane (1 + 3n(n+1) elements).

        Ordering is ring by ring, starting at the center.
        """
        pts = [(0.0, 0.0)]
        a1 = np.array([1.0, 0.0])
        a2 = np.array([0.5, np.sqrt(3) / 2])
        dirs = [a2 - a1, -a1, -a2, a1 - a2, a1, a2]
        for n in range(1, rings + 1):
            p = n * a1
            for d in dirs:
                for _ in range(n):
                    pts.append(tuple(p))
                    p = p + d
        xy = np.array(pts) * spacing
        pos = np.column_stack([xy, np.zeros(len(xy))])
        return cls(pos, np.asarray(orientation, dtype=float), element_length, self_reactance)


def radiation_resistance(element_length, medium: Medium) -> float:
    """Hertzian-dipole radiation resistance (2 pi eta / 3) (l / lambda)^2."""
    return 2 * np.pi * medium.impedance / 3 * (element_length / medium.wavelength) ** 2


def impedance_matrix(array: DipoleArray, medium: Medium) -> np.ndarray:
    """Port impedance matrix of short dipoles.

    Off-diagonal entries are -l^2 p_n . G_e(r_n - r_k) . p_k, the open-circuit
    voltage induced at port n per unit current at port k (v = -l p . E). With
    this sign Re{Z} tends to the radiation resistance as elements merge, so it
    is positive semi-definite and the diagonal R_rad + j X_self is consistent.
    """
    pos, ori = array.positions, array.orientations
    k = len(array)
    sep = pos[:, None, :] - pos[None, :, :]
    off = ~np.eye(k, dtype=bool)
    if np.any(np.einsum("ijk,ijk->ij", sep, sep)[off] == 0):
        raise SingularityError("array has duplicate element positions")
    if array.element_length > medium.wavelength / 10:
        warnings.warn("element length exceeds lambda/10; Hertzian model is crude", stacklevel=2)
    z = np.zeros((k, k), dtype=complex)
    rows, cols = np.nonzero(off)
    g = green_dyadic(sep[rows, cols], medium)
    z[rows, cols] = -array.element_length**2 * np.einsum(
        "ni,nij,nj->n", ori[rows], g, ori[cols]
    )
    z[np.diag_indices(k)] = radiation_resistance(array.element_length, medium) + 1j * array.self_reactance
    return z


@dataclass(frozen=True)
class LoadVector:
    """Per-port loads z_L,k = r_k + j theta_k (ohm)."""

    reactance: np.ndarray
    resistance: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.reactance, dtype=float).ravel()
        object.__setattr__(self, "reactance", x)
        if self.resistance is not None:
            r = np.broadcast_to(np.asarray(self.resistance, dtype=float), x.shape).copy()
            if np.any(r < 0):
                raise ParameterError("load resistance must be non-negative")
            object.__setattr__(self, "resistance", r)

    def __len__(self):
        return self.reactance.size

    @property
    def impedances(self) -> np.ndarray:
        r = 0.0 if self.resistance is None else self.resistance
        return r + 1j * self.reactance

    @property
    def is_reactive(self) -> bool:
        return self.resistance is None or not np.any(self.resistance)

    def dissipated_power(self, currents) -> float:
        i = np.asarray(currents)
        return float(np.sum(self.impedances.real * np.abs(i) ** 2))


def _loaded(z, loads: LoadVector):
    z = np.asarray(z, dtype=complex)
    if len(loads) != z.shape[0]:
        raise ParameterError(f"{len(loads)} loads for a {z.shape[0]}-port network")
    return z + np.diag(loads.impedances)


def _solve(m, rhs):
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NearResonanceError(
            f"Z_L + Z is near-singular (condition number {cond:.3g})", condition_number=cond
        )
    return np.linalg.solve(m, rhs)


def reflection_matrix(z, loads: LoadVector) -> np.ndarray:
    """R(theta) = -Z (Z_L + Z)^-1, computed with a transposed linear solve."""
    z = np.asarray(z, dtype=complex)
    m = _loaded(z, loads)
    return -_solve(m.T, z.T).T


def radiated_power(z, currents) -> float:
    """Radiated power i^H Re{Z} i of a lossless structure."""
    z = np.asarray(z, dtype=complex)
    i = np.asarray(currents, dtype=complex)
    if i.shape[0] != z.shape[0]:
        raise ParameterError("current vector does not match the impedance matrix")
    p = float(np.real(np.vdot(i, z.real @ i)))
    if p < 0:
        scale = float(np.real(np.vdot(i, np.abs(z.real) @ np.abs(i)))) or 1.0
        if p < -1e-12 * max(scale, 1.0):
            raise PassivityError(f"negative radiated power {p:.3g}; check the diagonal model")
        p = 0.0
    return p


def characteristic_mode_loads(z, target_current) -> LoadVector:
    """Reactances that make ``target_current`` resonate on the loaded structure.

    Chooses theta_k = -[Im{Z} i]_k / i_k so that the reactive part of every
    port equation cancels, (Z_L + Z) i = Re{Z} i. When that ratio is not
    real, its real part is used and a warning reports the leftover.
    """
    z = np.asarray(z, dtype=complex)
    i = np.asarray(target_current, dtype=complex)
    if np.any(i == 0):
        raise ZeroDivisionError("target current has zero entries")
    ratio = -(z.imag @ i) / i
    resid = np.max(np.abs(ratio.imag))
    if resid > 1e-9 * max(np.max(np.abs(ratio.real)), 1e-300):
        warnings.warn(
            f"resonance ratio is not real (max imaginary part {resid:.3g} ohm); using real part",
            stacklevel=2,
        )
    return LoadVector(ratio.real)


def resonance_residual(z, loads: LoadVector, current) -> float:
    """max_k |Im{[(Z_L + Z) i]_k}| for the loaded network."""
    return float(np.max(np.abs((_loaded(z, loads) @ np.asarray(current)).imag)))


@dataclass(frozen=True)
class DsaConfig:
    """K ports of which the first ``n_active`` are driven by RF chains."""

    n_ports: int
    n_active: int

    def __post_init__(self):
        if not 1 <= self.n_active <= self.n_ports:
            raise ParameterError("need 1 <= n_active <= n_ports")

    @property
    def n_passive(self):
        return self.n_ports - self.n_active

    @property
    def selection(self) -> np.ndarray:
        q = np.zeros((self.n_ports, self.n_active))
        q[np.arange(self.n_active), np.arange(self.n_active)] = 1.0
        return q


def dsa_currents(z, loads: LoadVector, config: DsaConfig, v_a) -> np.ndarray:
    """Port currents i = -(Z_L + Z)^-1 Q v_a."""
    m = _loaded(z, loads)
    return -_solve(m, config.selection @ np.asarray(v_a, dtype=complex))


def dsa_forward(z, loads: LoadVector, config: DsaConfig, v_a, receive_coupling,
                alpha: float = 1.0) -> np.ndarray:
    """Noiseless end-to-end response y = -alpha C (Z_L + Z)^-1 Q v_a."""
    c = np.asarray(receive_coupling, dtype=complex)
    if c.shape[1] != config.n_ports:
        raise ParameterError("receive coupling must have one column per port")
    return alpha * c @ dsa_currents(z, loads, config, v_a)


def dsa_transfer(z, loads: LoadVector, config: DsaConfig, receive_coupling, alpha=1.0):
    """End-to-end matrix mapping active-port voltages to the receiver."""
    m = _loaded(z, loads)
    return -alpha * np.asarray(receive_coupling) @ _solve(m, config.selection)


def synthetic_channel(z, singular_values, n_modes, rng):
    """Rank-r receive coupling seen through the well-radiating modes of ``z``.

    Returns C = diag(s) W^H Re{Z}^{1/2}, with W a random orthonormal r-frame
    inside the ``n_modes`` strongest eigenvectors of Re{Z}. Driving the
    currents Re{Z}^{-1/2} W e_n with unit radiated power yields s_n at the
    n-th receive mode, so ``singular_values`` are the ideal per-stream gains
    for unit radiated power.
    """
    s = np.asarray(singular_values, dtype=float)
    r = s.size
    if r > n_modes:
        raise ParameterError("rank cannot exceed the number of radiating modes used")
    lam, vec = np.linalg.eigh(np.asarray(z).real)
    lam, vec = lam[::-1][:n_modes], vec[:, ::-1][:, :n_modes]
    a = rng.standard_normal((n_modes, r)) + 1j * rng.standard_normal((n_modes, r))
    frame, _ = np.linalg.qr(a)
    return (s[:, None] * frame.conj().T * np.sqrt(lam)) @ vec.conj().T


@dataclass
class DsaResult:
    loads: LoadVector
    achieved: np.ndarray  # end-to-end matrix with unit-voltage columns, phase aligned
    column_phases: np.ndarray
    residual: float  # ||achieved - target||_F / ||target||_F
    radiated_power: float
    leakage_db: float  # off-diagonal to diagonal power ratio
    gain_loss_db: np.ndarray  # per column, |target_nn| / |achieved_nn|
    objective_history: list = field(default_factory=list)
    converged: bool = True
    restart: int = 0


class _DsaProblem:
    """Objective, power and adjoint gradients for one DSA synthesis instance."""

    def __init__(self, z, config, coupling, target, power, alpha, phase_free):
        self.z = np.asarray(z, dtype=complex)
        self.rr = self.z.real
        self.q = config.selection
        self.c = np.asarray(coupling, dtype=complex)
        self.h = np.asarray(target, dtype=complex)
        self.p_t = power
        self.alpha = alpha
        self.phase_free = phase_free
        self.scale = float(np.sum(np.abs(self.h) ** 2))
        if self.h.shape != (self.c.shape[0], config.n_active):
            raise ParameterError(
                f"target must be {self.c.shape[0]} x {config.n_active}, got {self.h.shape}"
            )

    def evaluate(self, theta, weight=0.0, grad=True):
        m = self.z + np.diag(1j * theta)
        x = -np.linalg.solve(m, self.q)  # port currents per unit drive
        e = self.alpha * self.c @ x
        if self.phase_free:
            corr = np.einsum("ij,ij->j", e.conj(), self.h)
            phi = np.where(np.abs(corr) > 0, corr / np.where(corr == 0, 1, np.abs(corr)), 1.0)
        else:
            phi = np.ones(e.shape[1], dtype=complex)
        g = e * phi - self.h
        fit = float(np.sum(np.abs(g) ** 2))
        p = float(np.real(np.einsum("ij,ij->", x.conj(), self.rr @ x)))
        dev = (p - self.p_t) / self.p_t
        total = fit + weight * self.scale * dev**2
        if not grad:
            return total, fit, p
        minv_h = np.linalg.solve(m.conj().T, np.column_stack([self.c.conj().T @ g, self.rr @ x]))
        y = minv_h[:, : g.shape[1]]
        yp = minv_h[:, g.shape[1]:]
        # x = -M^-1 Q, hence dx/dtheta_k = -j M^-1 e_k x_k and dE = alpha C dx
        dfit = 2 * self.alpha * np.imag(np.sum(phi * x * y.conj(), axis=1))
        dp = 2 * np.imag(np.sum(x * yp.conj(), axis=1))
        dtotal = dfit + weight * self.scale * 2 * dev / self.p_t * dp
        return total, fit, p, dtotal, dfit, dp

    def achieved(self, theta):
        m = self.z + np.diag(1j * theta)
        x = -np.linalg.solve(m, self.q)
        e = self.alpha * self.c @ x
        corr = np.einsum("ij,ij->j", e.conj(), self.h)
        phi = corr / np.abs(corr) if self.phase_free else np.ones(e.shape[1])
        return e, phi, x


def dsa_optimize(z, config: DsaConfig, receive_coupling, target, power: float, *,
                 alpha: float = 1.0, restarts: int = 8, seed: int = 0, phase_free: bool = True,
                 max_iter: int = 20000, tolerance: float = 0.01, max_weight_doublings: int = 12,
                 init=None, ftol: float = 1e-9) -> DsaResult:
    """Reactive loads whose end-to-end response best matches ``target``.

    Minimizes ||-alpha C (Z_L(theta) + Z)^-1 Q - H_o||_F^2 over real
    reactances, with the total radiated power (unit drive on every active port)
    pulled to ``power`` by a quadratic penalty whose weight doubles until the
    relative violation drops below ``tolerance``. Each column may carry a free
    unit-modulus phase (``phase_free``), since every RF chain sets its own
    phase. L-BFGS with the adjoint gradient runs from theta = 0 and from
    ``restarts`` random starts; the lowest final objective wins, ties going to
    the lowest restart index. A restart converges when L-BFGS stops on a
    relative objective decrease below ``ftol`` with the power constraint met.
    """
    prob = _DsaProblem(z, config, receive_coupling, target, power, alpha, phase_free)
    k = config.n_ports
    span = 5 * max(np.max(np.abs(prob.z.imag)), 1e-12)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(k) if init is None else np.asarray(init, dtype=float)]
    starts += [rng.uniform(-span, span, k) for _ in range(restarts)]

    best = None
    for idx, theta0 in enumerate(starts):
        theta, hist, ok = _solve_penalized(prob, theta0, max_iter, tolerance, max_weight_doublings,
                                           ftol)
        total, fit, p = prob.evaluate(theta, 0.0, grad=False)
        violation = abs(p - power) / power
        key = (violation > tolerance, fit)
        log.debug("restart %d: fit %.4g, power violation %.3g", idx, fit, violation)
        if best is None or key < best[0]:
            best = (key, idx, theta, hist, ok)
    _, idx, theta, hist, ok = best
    e, phi, x = prob.achieved(theta)
    achieved = e * phi
    p = float(np.real(np.einsum("ij,ij->", x.conj(), prob.rr @ x)))
    if not ok:
        warnings.warn("DSA optimizer did not converge; returning best-so-far loads", stacklevel=2)
    return DsaResult(
        loads=LoadVector(theta),
        achieved=achieved,
        column_phases=phi,
        residual=float(np.linalg.norm(achieved - prob.h) / np.linalg.norm(prob.h)),
        radiated_power=p,
        leakage_db=leakage_db(achieved),
        gain_loss_db=gain_loss_db(achieved, prob.h),
        objective_history=hist,
        converged=ok,
        restart=idx,
    )


def _solve_penalized(prob, theta0, max_iter, tolerance, max_doublings, ftol):
    theta = np.asarray(theta0, dtype=float)
    weight = 1.0
    history = []
    ok = False
    for _ in range(max_doublings + 1):
        stage = []

        def fun(t):
            out = prob.evaluate(t, weight)
            return out[0], out[3]

        res = optimize.minimize(fun, theta, jac=True, method="L-BFGS-B",
                                options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-10},
                                callback=lambda t: stage.append(fun(t)[0]))
        theta = res.x
        history.append(stage)
        _, _, p = prob.evaluate(theta, weight, grad=False)
        ok = bool(res.success or res.status == 0 or "ABNORMAL" in str(res.message))
        if abs(p - prob.p_t) / prob.p_t < tolerance:
            return theta, history, ok
        weight *= 2
    return theta, history, False


def leakage_db(h) -> float:
    """Off-diagonal power relative to diagonal power of a (rectangular) matrix, in dB."""
    h = np.asarray(h)
    n = min(h.shape)
    mask = np.zeros(h.shape, dtype=bool)
    mask[np.arange(n), np.arange(n)] = True
    power = np.abs(h) ** 2
    off = power[~mask].sum()
    if off == 0:
        return float("-inf")
    return float(10 * np.log10(off / power[mask].sum()))


def gain_loss_db(achieved, target) -> np.ndarray:
    n = min(np.shape(target))
    idx = np.arange(n)
    a = np.abs(np.asarray(achieved)[idx, idx])
    t = np.abs(np.asarray(target)[idx, idx])
    return 20 * np.log10(t / a)
