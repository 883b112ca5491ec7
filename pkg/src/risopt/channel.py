"""Channel generation and evaluation for a BS / RIS / K-user downlink.

The base station talks to K single-antenna users directly (Rayleigh) and
through a reconfigurable surface (Rician on both hops).  All large-scale
gains use a power-law path loss anchored at a reference gain at 1 m.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_REFERENCE_PATHLOSS_DB = -30.0


def dbm_to_watt(dbm: float) -> float:
    """Convert a dBm figure to linear watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def path_loss(distance: float, exponent: float, reference_db: float = DEFAULT_REFERENCE_PATHLOSS_DB) -> float:
    """Power-law path loss: 10^(reference_db/10) * distance^(-exponent).

    ``reference_db`` is the gain in dB at 1 m.  Raises ``ValueError`` for a
    non-positive distance.
    """
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return 10.0 ** (reference_db / 10.0) * float(distance) ** (-exponent)


@dataclass
class NetworkScenario:
    """Geometry and statistical parameters of one BS / RIS / K-user drop.

    Positions are 2-D coordinates in meters.  ``noise_power`` is linear
    watts; use :func:`load_scenario` to read a config that carries noise in
    dBm.  ``rician_factor`` is the linear Rician K-factor shared by the
    BS-RIS and RIS-user links; the BS-user link is always Rayleigh.
    """

    bs_position: np.ndarray
    ris_position: np.ndarray
    user_positions: np.ndarray
    nt: int
    n_ris: int
    noise_power: float
    pathloss_exp_bs_ris: float = 2.1
    pathloss_exp_ris_user: float = 2.1
    pathloss_exp_bs_user: float = 4.0
    rician_factor: float = 1.0
    reference_pathloss_db: float = DEFAULT_REFERENCE_PATHLOSS_DB
    seed: int = 0

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=float).reshape(2)
        self.ris_position = np.asarray(self.ris_position, dtype=float).reshape(2)
        self.user_positions = np.asarray(self.user_positions, dtype=float).reshape(-1, 2)
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if self.n_ris < 1:
            raise ValueError("n_ris must be >= 1")
        if self.num_users < 1:
            raise ValueError("at least one user is required")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be nonnegative")
        for d in (self.dist_bs_ris, *self.dist_ris_user, *self.dist_bs_user):
            if d <= 0:
                raise ValueError("all node separations must be positive")

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def dist_bs_ris(self) -> float:
        return float(np.linalg.norm(self.ris_position - self.bs_position))

    @property
    def dist_ris_user(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.ris_position, axis=1)

    @property
    def dist_bs_user(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.bs_position, axis=1)


def load_scenario(path: str | Path) -> NetworkScenario:
    """Load a :class:`NetworkScenario` from a JSON config file.

    Keys match the dataclass fields, except noise which is given in dBm
    under ``noise_dbm``.  Positions are ``[x, y]`` meter pairs.
    """
    with open(path, "r", encoding="utf-8") as f:
        cfg = json.load(f)
    return scenario_from_dict(cfg)


def scenario_from_dict(cfg: dict) -> NetworkScenario:
    cfg = dict(cfg)
    if "noise_dbm" in cfg:
        cfg["noise_power"] = dbm_to_watt(float(cfg.pop("noise_dbm")))
    known = {f for f in NetworkScenario.__dataclass_fields__}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    return NetworkScenario(**cfg)


@dataclass(frozen=True)
class ChannelSet:
    """One realization of all channels.

    g: (N, Nt) BS->RIS matrix; h_r: (K, N) RIS->user rows; h_d: (K, Nt)
    BS->user rows.  Arrays are marked read-only so a set can be shared
    across threads.
    """

    g: np.ndarray
    h_r: np.ndarray
    h_d: np.ndarray

    def __post_init__(self):
        for arr in (self.g, self.h_r, self.h_d):
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError("channel entries must be finite")
            arr.flags.writeable = False
        n, nt = self.g.shape
        if self.h_r.shape[1] != n or self.h_d.shape[1] != nt:
            raise ValueError("inconsistent channel dimensions")
        if self.h_r.shape[0] != self.h_d.shape[0]:
            raise ValueError("h_r and h_d must agree on the user count")

    @property
    def num_users(self) -> int:
        return self.h_r.shape[0]


def _steering(n: int, angle: float) -> np.ndarray:
    """ULA steering vector, half-wavelength spacing, array along the x-axis."""
    return np.exp(1j * np.pi * np.arange(n) * np.cos(angle))


def _rician(pl: float, kappa: float, los: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shape = los.shape
    nlos = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    mix = np.sqrt(kappa / (1.0 + kappa)) * los + np.sqrt(1.0 / (1.0 + kappa)) * nlos
    return np.sqrt(pl) * mix


def generate_channels(scenario: NetworkScenario) -> ChannelSet:
    """Draw one channel realization, deterministic given ``scenario.seed``.

    BS-RIS and RIS-user links are Rician with the scenario's K-factor and a
    line-of-sight part built from steering-vector outer products; the
    BS-user link is Rayleigh.
    """
    rng = np.random.default_rng(scenario.seed)
    n, nt, kappa = scenario.n_ris, scenario.nt, scenario.rician_factor
    ref = scenario.reference_pathloss_db

    d = scenario.ris_position - scenario.bs_position
    aod_bs = float(np.arctan2(d[1], d[0]))
    aoa_ris = float(np.arctan2(-d[1], -d[0]))
    los_g = np.outer(_steering(n, aoa_ris), _steering(nt, aod_bs).conj())
    pl_g = path_loss(scenario.dist_bs_ris, scenario.pathloss_exp_bs_ris, ref)
    g = _rician(pl_g, kappa, los_g, rng)

    h_r = np.empty((scenario.num_users, n), dtype=complex)
    for k in range(scenario.num_users):
        dk = scenario.user_positions[k] - scenario.ris_position
        los = _steering(n, float(np.arctan2(dk[1], dk[0])))
        pl = path_loss(scenario.dist_ris_user[k], scenario.pathloss_exp_ris_user, ref)
        h_r[k] = _rician(pl, kappa, los, rng)

    h_d = np.empty((scenario.num_users, nt), dtype=complex)
    for k in range(scenario.num_users):
        pl = path_loss(scenario.dist_bs_user[k], scenario.pathloss_exp_bs_user, ref)
        nlos = (rng.standard_normal(nt) + 1j * rng.standard_normal(nt)) / np.sqrt(2.0)
        h_d[k] = np.sqrt(pl) * nlos

    return ChannelSet(g=g, h_r=h_r, h_d=h_d)


def reflected_channel(channels: ChannelSet, phi: np.ndarray, user: int) -> np.ndarray:
    """Reflected-path part of the effective channel for one user.

    ``phi`` is a raw complex N-vector (not necessarily unit-modulus); the
    result is linear in it.
    """
    return channels.g.conj().T @ (np.conj(phi) * channels.h_r[user])


def composite_channel(channels: ChannelSet, phases, user: int) -> np.ndarray:
    """Effective BS->user channel h_k = h_d + (h_r^H diag(phi) G)^H.

    The returned vector is the one whose conjugate transpose multiplies a
    precoder, i.e. the received amplitude is ``h_k^H w``.  ``phases`` may be
    a PhaseShiftVector or a raw complex vector.
    """
    if user < 0 or user >= channels.num_users:
        raise IndexError(f"user index {user} out of range")
    phi = np.asarray(getattr(phases, "phi", phases))
    return channels.h_d[user] + reflected_channel(channels, phi, user)


def sinr(channels: ChannelSet, phases, w: np.ndarray, user: int, noise_power: float) -> float:
    """SINR of one user under precoding matrix ``w`` (Nt x K columns)."""
    h = composite_channel(channels, phases, user)
    amps = np.abs(h.conj() @ w) ** 2
    signal = amps[user]
    interference = float(np.sum(amps)) - float(signal)
    return float(signal / (interference + noise_power))


def all_sinrs(channels: ChannelSet, phases, w: np.ndarray, noise_power: float) -> np.ndarray:
    return np.array(
        [sinr(channels, phases, w, k, noise_power) for k in range(channels.num_users)]
    )
