"""Stacked intelligent metasurface (SIM): diffraction model, training and DoA readout.

Layer ``l`` (1..L) sits at z = l * layer_spacing; the incident field is given
on the input aperture plane z = 0, which shares the atom lattice. Receive
antennas lie on a centered half-wavelength lattice one layer spacing behind
the last layer. Lattice indices are row-major: index = ix * side + iy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .em import Medium
from .errors import DivergenceError, ParameterError


def _square_side(n, what):
    side = math.isqrt(n)
    if side * side != n:
        raise ParameterError(f"{what} = {n} is not a perfect square")
    return side


def lattice(side, spacing, z=0.0):
    """Centered square lattice of ``side**2`` points in the plane at height ``z``."""
    off = (np.arange(side) - (side - 1) / 2) * spacing
    gx, gy = np.meshgrid(off, off, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(side * side, float(z))])


def rs_kernel(dist, axial, area, medium: Medium):
    """Rayleigh-Sommerfeld transmission coefficient between two apertures."""
    lam = medium.wavelength
    return (area * axial / dist**2) * (1 / (2 * np.pi * dist) - 1j / lam) * np.exp(
        1j * medium.wavenumber * dist
    )


@dataclass(frozen=True)
class SimStack:
    n_layers: int
    n_atoms: int
    atom_spacing: float
    layer_spacing: float
    medium: Medium
    n_antennas: int = 16
    atom_area: Optional[float] = None
    antenna_spacing: Optional[float] = None

    def __post_init__(self):
        if self.n_layers < 1:
            raise ParameterError("a SIM needs at least one layer")
        _square_side(self.n_atoms, "atoms per layer")
        _square_side(self.n_antennas, "receive antennas")
        if not self.layer_spacing > 0:
            raise ParameterError("layer spacing must be positive")
        if not self.atom_spacing > 0:
            raise ParameterError("atom spacing must be positive")

    @property
    def side(self):
        return math.isqrt(self.n_atoms)

    @property
    def area(self):
        return self.atom_spacing**2 if self.atom_area is None else self.atom_area

    def atom_positions(self, layer):
        return lattice(self.side, self.atom_spacing, layer * self.layer_spacing)

    def antenna_positions(self):
        spacing = self.medium.wavelength / 2 if self.antenna_spacing is None else self.antenna_spacing
        return lattice(math.isqrt(self.n_antennas), spacing,
                       (self.n_layers + 1) * self.layer_spacing)

    def with_layers(self, n_layers):
        return SimStack(n_layers, self.n_atoms, self.atom_spacing, self.layer_spacing,
                        self.medium, self.n_antennas, self.atom_area, self.antenna_spacing)


def layer_propagation(stack: SimStack, layer: int) -> np.ndarray:
    """Propagation matrix W^(l) from layer l-1 (the input plane for l = 1) to layer l."""
    if not 1 <= layer <= stack.n_layers:
        raise ParameterError(f"layer must be in 1..{stack.n_layers}")
    src = stack.atom_positions(layer - 1)
    dst = stack.atom_positions(layer)
    dist = np.linalg.norm(dst[:, None, :] - src[None, :, :], axis=-1)
    return rs_kernel(dist, stack.layer_spacing, stack.area, stack.medium)


def readout_matrix(stack: SimStack) -> np.ndarray:
    """H_R, N_a x M coupling from the last layer to the receive antennas."""
    src = stack.atom_positions(stack.n_layers)
    dst = stack.antenna_positions()
    dist = np.linalg.norm(dst[:, None, :] - src[None, :, :], axis=-1)
    return rs_kernel(dist, stack.layer_spacing, stack.area, stack.medium)


def propagation_matrices(stack: SimStack):
    return [layer_propagation(stack, l) for l in range(1, stack.n_layers + 1)]


def wrap_phase(theta):
    return np.mod(theta, 2 * np.pi)


def sim_response(stack: SimStack, phases, include_input_propagation: bool = True,
                 weights=None) -> np.ndarray:
    """Overall M x M transfer Phi^(L) W^(L) ... Phi^(1) W^(1).

    With ``include_input_propagation=False`` the input-plane hop W^(1) is
    dropped and the incident field is taken directly on layer 1.
    """
    theta = np.asarray(phases, dtype=float)
    if theta.shape != (stack.n_layers, stack.n_atoms):
        raise ParameterError(f"phases must have shape {(stack.n_layers, stack.n_atoms)}")
    ws = propagation_matrices(stack) if weights is None else weights
    resp = np.eye(stack.n_atoms, dtype=complex)
    for l in range(stack.n_layers):
        step = resp if (l == 0 and not include_input_propagation) else ws[l] @ resp
        resp = np.exp(1j * theta[l])[:, None] * step
    return resp


def dft_target(n_antennas: int) -> np.ndarray:
    """Unitary 2D DFT over a sqrt(N_a) x sqrt(N_a) grid (Kronecker of two 1D DFTs)."""
    side = _square_side(n_antennas, "N_a")
    k = np.arange(side)
    f = np.exp(-2j * np.pi * np.outer(k, k) / side) / np.sqrt(side)
    return np.kron(f, f)


def dft_steering_target(n_antennas: int, n_atoms: int) -> np.ndarray:
    """N_a x M target whose row (a, b) correlates the atom lattice with DFT bin (a, b).

    Equals :func:`dft_target` when ``n_atoms == n_antennas``.
    """
    s = _square_side(n_antennas, "N_a")
    side = _square_side(n_atoms, "M")
    k = np.arange(s)
    u = np.arange(side)
    f = np.exp(-2j * np.pi * np.outer(k, u) / s)
    return np.kron(f, f) / np.sqrt(n_atoms)


def grid_angles(n_antennas: int) -> np.ndarray:
    """Electrical angle pair (psi_x, psi_y) matched by each receive antenna, in [-pi, pi)."""
    s = _square_side(n_antennas, "N_a")
    a, b = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    psi = np.stack([-2 * np.pi * a.ravel() / s, -2 * np.pi * b.ravel() / s], axis=1)
    return wrap_angle(psi)


def wrap_angle(psi):
    return (np.asarray(psi) + np.pi) % (2 * np.pi) - np.pi


def plane_wave(n_atoms: int, psi_x: float, psi_y: float) -> np.ndarray:
    """Incident samples exp(-j(psi_x u + psi_y v)) on the integer atom lattice."""
    side = _square_side(n_atoms, "M")
    u, v = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return np.exp(-1j * (psi_x * u.ravel() + psi_y * v.ravel()))


@dataclass(frozen=True)
class TrainSchedule:
    learning_rate: float = 0.1
    decay: float = 0.99
    max_iter: int = 10_000
    stop_threshold: float = 1e-6  # relative to the initial loss
    fit_scale: bool = False  # fit a free complex gain on the SIM output
    backtrack: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and 0 < self.decay < 1 and self.max_iter > 0
                and self.stop_threshold > 0):
            raise ParameterError("invalid training schedule")


@dataclass
class TrainResult:
    phases: np.ndarray
    loss_history: list
    scale: complex = 1.0
    iterations: int = 0

    @property
    def loss(self):
        return self.loss_history[-1]


class SimModel:
    """Cached propagation matrices plus loss/gradient evaluation for one stack."""

    def __init__(self, stack: SimStack, readout=None, include_input_propagation=True):
        self.stack = stack
        self.ws = propagation_matrices(stack)
        self.h_r = readout_matrix(stack) if readout is None else np.asarray(readout)
        self.include_input = include_input_propagation

    def response(self, theta):
        return sim_response(self.stack, theta, self.include_input, self.ws)

    def output(self, theta):
        return self.h_r @ self.response(theta)

    def loss(self, theta, target, fit_scale=False):
        out = self.output(theta)
        beta = _best_scale(out, target) if fit_scale else 1.0
        return float(np.sum(np.abs(beta * out - target) ** 2)), beta

    def gradient(self, theta, target, fit_scale=False):
        """Loss and its exact partial derivatives with respect to every phase.

        The transfer factorizes per layer as H_R P_l Phi^(l) S_l; the
        derivative for atom m of layer l is -2 Im(phi_m [S_l E^H H_R P_l]_mm)
        with E the output error.
        """
        theta = np.asarray(theta, dtype=float)
        n_l, m = theta.shape
        phis = np.exp(1j * theta)
        # forward: S_l = W_l B_{l-1} ... B_1 (or B_{l-1}...B_1 for l = 1 without W_1)
        pre = []
        acc = np.eye(m, dtype=complex)
        for l in range(n_l):
            s_l = acc if (l == 0 and not self.include_input) else self.ws[l] @ acc
            pre.append(s_l)
            acc = phis[l][:, None] * s_l
        out = self.h_r @ acc
        beta = _best_scale(out, target) if fit_scale else 1.0
        err = beta * out - target
        loss = float(np.sum(np.abs(err) ** 2))
        grad = np.empty_like(theta)
        # backward: A_l = beta H_R P_l with P_L = I, P_{l-1} = P_l Phi_l W_l
        a = beta * self.h_r
        for l in range(n_l - 1, -1, -1):
            ea = err.conj().T @ a
            d = np.einsum("mi,im->m", pre[l], ea)
            grad[l] = -2 * np.imag(phis[l] * d)
            if l > 0:
                a = (a * phis[l][None, :]) @ self.ws[l]
        return loss, grad, beta


def _best_scale(out, target):
    den = np.vdot(out, out)
    return np.vdot(out, target) / den if den != 0 else 1.0


def sim_train(stack: SimStack, target, schedule: TrainSchedule = TrainSchedule(), seed=0,
              readout=None, init=None, model: Optional[SimModel] = None) -> TrainResult:
    """Gradient descent on the SIM phases against a target transfer matrix.

    Each iteration computes the analytic gradient, scales every layer's
    gradient so its largest entry is pi, steps by the learning rate and
    decays the rate. With ``backtrack`` a step that raises the loss is
    rejected and the rate halved, so the recorded history never increases.
    Stops when an accepted decrement falls below ``stop_threshold`` times the
    initial loss or after ``max_iter`` iterations.
    """
    model = SimModel(stack, readout) if model is None else model
    target = np.asarray(target, dtype=complex)
    if target.shape != (model.h_r.shape[0], stack.n_atoms):
        raise ParameterError(f"target must be {(model.h_r.shape[0], stack.n_atoms)}")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, (stack.n_layers, stack.n_atoms)) if init is None \
        else wrap_phase(np.asarray(init, dtype=float))
    lr = schedule.learning_rate
    loss, grad, beta = model.gradient(theta, target, schedule.fit_scale)
    initial = loss
    history = [loss]
    it = 0
    for it in range(1, schedule.max_iter + 1):
        peak = np.max(np.abs(grad), axis=1, keepdims=True)
        step = np.where(peak > 0, np.pi * grad / np.where(peak > 0, peak, 1), 0.0)
        cand = wrap_phase(theta - lr * step)
        c_loss, c_grad, c_beta = model.gradient(cand, target, schedule.fit_scale)
        if not np.isfinite(c_loss):
            raise DivergenceError(f"non-finite loss at iteration {it}")
        if schedule.backtrack and c_loss > loss:
            lr *= 0.5
            if lr < 1e-14:
                break
            continue
        if not schedule.backtrack and c_loss > 10 * initial:
            raise DivergenceError(
                f"loss {c_loss:.4g} exceeds 10x the initial {initial:.4g} at iteration {it}"
            )
        decrement = loss - c_loss
        theta, loss, grad, beta = cand, c_loss, c_grad, c_beta
        history.append(loss)
        lr *= schedule.decay
        if 0 <= decrement < schedule.stop_threshold * initial:
            break
    return TrainResult(phases=theta, loss_history=history, scale=beta, iterations=it)


def quantize_phases(phases, bits: int):
    """Round phases to the nearest of 2**bits uniform levels on [0, 2 pi)."""
    levels = 2**bits
    step = 2 * np.pi / levels
    return wrap_phase(np.round(np.asarray(phases) / step) * step)


def received_energy(model: SimModel, phases, incident, noise_power, snapshots, rng):
    """Per-antenna energy summed over snapshots of a unit-modulus random symbol."""
    sig = model.output(phases) @ np.asarray(incident, dtype=complex)
    sym = np.exp(2j * np.pi * rng.random(snapshots))
    clean = sig[:, None] * sym[None, :]
    noise = np.sqrt(noise_power / 2) * (rng.standard_normal(clean.shape)
                                        + 1j * rng.standard_normal(clean.shape))
    return np.sum(np.abs(clean + noise) ** 2, axis=1)


def doa_estimate(stack: SimStack, phases, incident, noise_power=0.0, snapshots=64, seed=None,
                 model: Optional[SimModel] = None, rng=None):
    """Energy-detection estimate of (psi_x, psi_y): the grid angles of the brightest antenna."""
    model = SimModel(stack) if model is None else model
    rng = np.random.default_rng(seed) if rng is None else rng
    energy = received_energy(model, phases, incident, noise_power, snapshots, rng)
    best = int(np.argmax(energy))
    psi = grid_angles(stack.n_antennas)[best]
    return float(psi[0]), float(psi[1])


def doa_mse(stack: SimStack, phases, snr_db, trials=500, snapshots=1, rng=None,
            model: Optional[SimModel] = None):
    """Mean squared electrical-angle error of the energy-detection DoA estimate.

    Each trial draws an on-grid direction, a symbol sequence and unit noise
    once; the same draws are reused at every SNR point (common random
    numbers). SNR is the mean per-antenna signal power over noise power.

    Returns
    -------
    mse : ndarray, one value per entry of ``snr_db``
    hits : ndarray, fraction of trials whose estimate is exact
    """
    model = SimModel(stack) if model is None else model
    rng = np.random.default_rng() if rng is None else rng
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    grid = grid_angles(stack.n_antennas)
    out = model.output(phases)
    idx = rng.integers(0, grid.shape[0], trials)
    sym = np.exp(2j * np.pi * rng.random((trials, snapshots)))
    shape = (trials, stack.n_antennas, snapshots)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    waves = np.array([plane_wave(stack.n_atoms, *psi) for psi in grid])
    sig = waves @ out.T  # (n_grid, N_a)
    clean = sig[idx][:, :, None] * sym[:, None, :]
    ref = np.mean(np.abs(sig[idx]) ** 2, axis=1)[:, None, None]
    mse = np.empty(snr_db.size)
    hits = np.empty(snr_db.size)
    for i, s in enumerate(snr_db):
        rx = clean + np.sqrt(ref / 10 ** (s / 10)) * noise
        est = grid[np.argmax(np.sum(np.abs(rx) ** 2, axis=2), axis=1)]
        err = wrap_angle(est - grid[idx])
        sq = np.sum(err**2, axis=1)
        mse[i] = np.mean(sq)
        hits[i] = np.mean(sq == 0)
    return mse, hits
