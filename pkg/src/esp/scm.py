"""Self-conjugating metasurface (SCM) uplink: modified power-method beam alignment.

The AP transmits sqrt(P) x[k-1]; the sensor receives z = sqrt(P) H x + eta,
retro-directs r = g e^{j theta} z*, and the AP observes y = H^T r + n*, which
equals e^{j theta} A* x* + g e^{j theta} H^T eta* + n* with A = sqrt(P) g H^H H.
The next beam is x[k] = y*/||y|| and the data phase is read from x[k-1]^H x[k].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ParameterError

MODULATION_ORDER = {"BPSK": 2, "QPSK": 4}


def random_orthonormal(rng, rows, cols):
    """Haar-distributed complex matrix with orthonormal columns."""
    a = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    return q * (d / np.abs(d))


@dataclass(frozen=True)
class MimoChannel:
    h: np.ndarray  # M x N, sensor cells x AP antennas
    singular_values: np.ndarray
    right_vectors: np.ndarray  # N x r
    left_vectors: np.ndarray  # M x r
    seed: object = None

    @property
    def n_ap(self):
        return self.h.shape[1]

    @property
    def n_cells(self):
        return self.h.shape[0]

    @property
    def rank(self):
        return self.singular_values.size

    @property
    def top_vector(self):
        return self.right_vectors[:, 0]

    def round_trip(self, p_tx, gain):
        """A = sqrt(P_tx) g H^H H."""
        return np.sqrt(p_tx) * gain * (self.h.conj().T @ self.h)


def make_channel(n_ap: int, n_cells: int, rank: int, singular_values: Sequence[float],
                 seed=0, rng=None) -> MimoChannel:
    """Rank-``rank`` channel H = sum_i s_i u_i v_i^H with Haar-random singular vectors."""
    s = np.asarray(singular_values, dtype=float)
    if rank > min(n_ap, n_cells):
        raise ParameterError(f"rank {rank} exceeds min(N, M) = {min(n_ap, n_cells)}")
    if s.size != rank:
        raise ParameterError("need exactly one singular value per rank")
    if np.any(s <= 0) or np.any(np.diff(s) > 0):
        raise ParameterError("singular values must be positive and non-increasing")
    rng = np.random.default_rng(seed) if rng is None else rng
    u = random_orthonormal(rng, n_cells, rank)
    v = random_orthonormal(rng, n_ap, rank)
    h = (u * s) @ v.conj().T
    return MimoChannel(h=h, singular_values=s, right_vectors=v, left_vectors=u, seed=seed)


@dataclass(frozen=True)
class ScmParams:
    p_tx: float = 1.0
    gain: float = 1.0
    noise_ap: float = 0.0
    noise_sensor: float = 0.0
    modulation: Union[str, int] = "BPSK"

    def __post_init__(self):
        if not self.p_tx > 0:
            raise ParameterError("transmit power must be positive")
        if not 0 < self.gain <= 1:
            raise ParameterError("SCM gain must lie in (0, 1]")
        if self.noise_ap < 0 or self.noise_sensor < 0:
            raise ParameterError("noise powers must be non-negative")
        modulation_order(self.modulation)

    @property
    def order(self):
        return modulation_order(self.modulation)


def modulation_order(modulation) -> int:
    if isinstance(modulation, str):
        key = modulation.upper()
        if key in MODULATION_ORDER:
            return MODULATION_ORDER[key]
        if key.endswith("-PSK") and key[:-4].isdigit():
            return int(key[:-4])
        raise ParameterError(f"unknown modulation {modulation!r}")
    order = int(modulation)
    if order < 2:
        raise ParameterError("PSK order must be >= 2")
    return order


def constellation(order: int) -> np.ndarray:
    return 2 * np.pi * np.arange(order) / order


def detect(phase, order: int) -> float:
    """Nearest M-PSK phase; exact ties go to the lower constellation index."""
    pts = constellation(order)
    diff = np.abs(np.angle(np.exp(1j * (phase - pts))))
    best = np.flatnonzero(diff <= diff.min() + 1e-12)[0]
    return float(pts[best])


def snr_max(channel: MimoChannel, params: ScmParams) -> float:
    """Linear SNR at the AP for a beam on the top right singular vector."""
    s1 = channel.singular_values[0]
    noise = params.noise_ap + params.gain**2 * params.noise_sensor * s1**2
    if noise == 0:
        return np.inf
    return params.p_tx * params.gain**2 * s1**4 / noise


def params_for_snr_max(channel: MimoChannel, snr_max_db: float, p_tx=1.0, gain=1.0,
                       modulation="BPSK") -> ScmParams:
    """AP noise power giving the requested SNR_max (no sensor-side noise)."""
    s1 = channel.singular_values[0]
    noise = p_tx * gain**2 * s1**4 / 10 ** (snr_max_db / 10)
    return ScmParams(p_tx=p_tx, gain=gain, noise_ap=noise, modulation=modulation)


def beam_snr(channel: MimoChannel, params: ScmParams, x) -> float:
    """Linear SNR of the round trip driven by beam ``x`` after matched combining at the AP.

    Signal power is ||A x||^2; noise is the AP noise plus the sensor noise
    funneled through H^T along the signal direction.
    """
    ax = np.sqrt(params.p_tx) * params.gain * (channel.h.conj().T @ (channel.h @ x))
    sig = float(np.real(np.vdot(ax, ax)))
    if sig == 0:
        return 0.0
    leak = float(np.linalg.norm(channel.h @ ax) ** 2) / sig
    noise = params.noise_ap + params.gain**2 * params.noise_sensor * leak
    return np.inf if noise == 0 else sig / noise


def bootstrap_snr(snr_max_db: float, n_ap: int) -> float:
    """Bootstrap SNR in dB: SNR_max / N."""
    if n_ap < 1:
        raise ParameterError("N must be >= 1")
    return snr_max_db - 10 * np.log10(n_ap)


def complex_noise(rng, power, shape):
    if power == 0:
        return np.zeros(shape, dtype=complex)
    return np.sqrt(power / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class StepOutput:
    x: np.ndarray
    y: np.ndarray
    u: complex
    theta_hat: float
    z: np.ndarray
    r: np.ndarray


def scm_step(x_prev, channel: MimoChannel, params: ScmParams, theta, rng) -> StepOutput:
    """One iteration of the modified power method."""
    x_prev = np.asarray(x_prev, dtype=complex)
    h = channel.h
    z = np.sqrt(params.p_tx) * (h @ x_prev) + complex_noise(rng, params.noise_sensor, h.shape[0])
    r = params.gain * np.exp(1j * theta) * z.conj()
    n = complex_noise(rng, params.noise_ap, h.shape[1])
    y = h.T @ r + n.conj()
    x = y.conj() / np.linalg.norm(y)
    u = complex(np.vdot(x_prev, x))
    return StepOutput(x=x, y=y, u=u, theta_hat=detect(-np.angle(u), params.order), z=z, r=r)


@dataclass
class LinkTrajectory:
    x: np.ndarray  # (K+1, N) beams, x[0] is the initial guess
    u: np.ndarray  # (K,)
    snr_db: np.ndarray  # (K+1,)
    theta: np.ndarray  # (K,) transmitted data phases
    theta_hat: np.ndarray  # (K,)
    alignment: np.ndarray  # (K+1,) |v1^H x[k]|
    snr_max_db: float = np.nan

    @property
    def errors(self) -> np.ndarray:
        diff = np.angle(np.exp(1j * (self.theta - self.theta_hat)))
        return np.abs(diff) > 1e-9

    @property
    def n_errors(self) -> int:
        return int(np.count_nonzero(self.errors))

    def convergence_index(self, margin_db=1.0):
        """First iteration whose SNR is within ``margin_db`` of SNR_max, or None."""
        hit = np.flatnonzero(self.snr_db >= self.snr_max_db - margin_db)
        return int(hit[0]) if hit.size else None


def random_unit_vector(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_packet(rng, length, modulation="BPSK"):
    order = modulation_order(modulation)
    return constellation(order)[rng.integers(0, order, length)]


def run_link(channel: MimoChannel, params: ScmParams, packet, seed=0, x0=None,
             rng=None) -> LinkTrajectory:
    """Run the modified power method over a packet of data phases (one per iteration)."""
    packet = np.asarray(packet, dtype=float)
    if packet.size < 1:
        raise ParameterError("packet must hold at least one symbol")
    rng = np.random.default_rng(seed) if rng is None else rng
    x = random_unit_vector(rng, channel.n_ap) if x0 is None else np.asarray(x0, dtype=complex)
    xs = [x]
    us, hats = [], []
    for theta in packet:
        out = scm_step(x, channel, params, theta, rng)
        x = out.x
        xs.append(x)
        us.append(out.u)
        hats.append(out.theta_hat)
    xs = np.array(xs)
    snr = np.array([beam_snr(channel, params, xk) for xk in xs])
    with np.errstate(divide="ignore"):
        snr_db = 10 * np.log10(snr)
        smax = 10 * np.log10(snr_max(channel, params))
    align = np.abs(xs @ channel.top_vector.conj())
    return LinkTrajectory(x=xs, u=np.array(us), snr_db=snr_db, theta=packet,
                          theta_hat=np.array(hats), alignment=align, snr_max_db=float(smax))
