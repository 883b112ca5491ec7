"""Conventional-variable subproblem solvers for fixed phase shifts.

Covers the classic transmit-side toolbox: MRT, zero forcing, SINR-target
power minimization via uplink-downlink duality, one-round WMMSE, water
filling, and Dinkelbach's method for energy-efficiency ratios.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from risopt.channel import ChannelSet, composite_channel

LN2 = float(np.log(2.0))


class SingularChannelError(ValueError):
    """Effective channel matrix is rank deficient beyond the guard."""


class InfeasibleError(RuntimeError):
    """Requested targets cannot be met; carries the best residual found."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class BeamformingMatrix:
    """Nt x K transmit precoder; column k serves user k."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex)
        if w.ndim != 2:
            raise ValueError("precoder must be a 2-D matrix")
        if not np.all(np.isfinite(w.view(float))):
            raise ValueError("precoder entries must be finite")
        object.__setattr__(self, "w", w)

    @property
    def total_power(self) -> float:
        return float(np.linalg.norm(self.w) ** 2)


@dataclass(frozen=True)
class PowerAllocation:
    """Per-user transmit powers in watts."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any(p < -1e-12):
            raise ValueError("powers must be nonnegative")
        object.__setattr__(self, "p", np.maximum(p, 0.0))

    @property
    def total(self) -> float:
        return float(np.sum(self.p))


def mrt(h: np.ndarray, power: float) -> np.ndarray:
    """Maximum-ratio transmission: w = sqrt(power) * h / ||h||."""
    if power < 0:
        raise ValueError("power must be nonnegative")
    h = np.asarray(h, dtype=complex).reshape(-1)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("degenerate zero channel")
    return np.sqrt(power) * h / norm


def zf(h_rows: np.ndarray, cond_limit: float = 1e10) -> BeamformingMatrix:
    """Zero-forcing precoder for the K x Nt matrix of effective channel rows.

    Row k is h_k^H, so the received amplitude for user k is
    ``h_rows[k] @ w[:, k]``.  Columns are normalized to unit power and the
    diagonal of ``h_rows @ w`` comes out real positive.
    """
    h_rows = np.asarray(h_rows, dtype=complex)
    k, nt = h_rows.shape
    if k > nt:
        raise SingularChannelError(f"need K <= Nt for zero forcing, got {k} > {nt}")
    s = np.linalg.svd(h_rows, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > cond_limit:
        raise SingularChannelError(f"channel condition number exceeds {cond_limit:.0e}")
    w = np.linalg.pinv(h_rows)
    w = w / np.linalg.norm(w, axis=0, keepdims=True)
    return BeamformingMatrix(w)


def effective_rows(channels: ChannelSet, phases) -> np.ndarray:
    """K x Nt matrix whose row k is h_k^H at the given phases."""
    return np.stack(
        [composite_channel(channels, phases, i).conj() for i in range(channels.num_users)]
    )


def power_min_beamforming(
    channels: ChannelSet,
    phases,
    sinr_targets: Sequence[float],
    noise_power: float,
    tol: float = 1e-9,
    max_iter: int = 500,
) -> tuple[BeamformingMatrix, float]:
    """Minimum total power meeting per-user SINR targets at fixed phases.

    Runs the uplink fixed-point iteration on the dual powers, then recovers
    downlink MMSE directions and the powers solving the per-user SINR
    equalities.  Raises :class:`InfeasibleError` when the fixed point
    diverges, reporting the best min(SINR/target) fraction reached.
    """
    targets = np.asarray(sinr_targets, dtype=float)
    if np.any(targets <= 0):
        raise ValueError("SINR targets must be positive")
    k = channels.num_users
    if targets.size != k:
        raise ValueError("one SINR target per user required")
    h = np.stack([composite_channel(channels, phases, i) for i in range(k)])
    nt = h.shape[1]
    eye = np.eye(nt, dtype=complex)

    def covariance(q: np.ndarray) -> np.ndarray:
        return noise_power * eye + (h.T * q) @ h.conj()

    q = np.zeros(k)
    power_cap = 1e9 * noise_power * float(np.max(targets)) * k
    best_fraction = 0.0
    converged = False
    for _ in range(max_iter):
        sinv_h = np.linalg.solve(covariance(q), h.T).T  # row i: Sigma^{-1} h_i
        t = np.real(np.sum(h.conj() * sinv_h, axis=1))
        # Sherman-Morrison downdate: h^H Sigma_{-k}^{-1} h = t / (1 - q t)
        slack = 1.0 - q * t
        if np.any(slack <= 0):
            raise InfeasibleError(
                "SINR targets unattainable: dual fixed point diverged",
                residual=best_fraction,
            )
        denom = t / slack
        if np.any(q > 0):
            best_fraction = max(best_fraction, float(np.min(q * denom / targets)))
        q_new = targets / denom
        if np.any(~np.isfinite(q_new)) or np.sum(q_new) > power_cap:
            raise InfeasibleError(
                "SINR targets unattainable: dual fixed point diverged",
                residual=best_fraction,
            )
        delta = np.max(np.abs(q_new - q)) / (1.0 + np.max(q_new))
        q = q_new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise InfeasibleError(
            "dual fixed point did not converge within the iteration cap",
            residual=best_fraction,
        )

    u = np.linalg.solve(covariance(q), h.T).T
    u = (u.T / np.linalg.norm(u, axis=1)).T
    a = np.abs(h.conj() @ u.T) ** 2  # a[i, j] = |h_i^H u_j|^2
    m = -a.copy()
    np.fill_diagonal(m, np.diag(a) / targets)
    p = np.linalg.solve(m, np.full(k, noise_power))
    if np.any(p <= 0):
        raise InfeasibleError(
            "downlink power coupling produced nonpositive powers",
            residual=best_fraction,
        )
    w = u.T * np.sqrt(p)
    return BeamformingMatrix(w), float(np.sum(p))


def waterfill(gains: Sequence[float], noise_power: float, budget: float) -> PowerAllocation:
    """Water-filling powers p_k = max(0, mu - noise/gain_k) with sum = budget."""
    gains = np.asarray(gains, dtype=float)
    if np.any(gains <= 0):
        raise ValueError("gains must be positive")
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if budget == 0:
        return PowerAllocation(np.zeros(gains.size))
    floors = noise_power / gains
    order = np.argsort(floors)
    sorted_floors = floors[order]
    csum = np.cumsum(sorted_floors)
    mu = sorted_floors[0] + budget  # fallback: single active user
    for m in range(gains.size, 0, -1):
        level = (budget + csum[m - 1]) / m
        if level >= sorted_floors[m - 1]:
            mu = level
            break
    return PowerAllocation(np.maximum(0.0, mu - floors))


def make_ee_inner(
    gains: Sequence[float],
    noise_power: float,
    budget: float,
    min_rates: Sequence[float],
) -> Callable[[float], np.ndarray]:
    """Analytic inner maximizer for Dinkelbach on separable log rates.

    Builds ``p(lam) = argmax sum log2(1 + g_k p_k / noise) - lam * sum p_k``
    over the box-plus-budget set {p_k >= lo_k, sum p <= budget}, where lo_k
    enforces the minimum rates.  Raises :class:`InfeasibleError` when the
    rate floors alone exceed the budget.
    """
    gains = np.asarray(gains, dtype=float)
    min_rates = np.asarray(min_rates, dtype=float)
    if np.any(gains <= 0):
        raise ValueError("gains must be positive")
    floors = noise_power * (2.0**min_rates - 1.0) / gains
    if np.sum(floors) > budget * (1 + 1e-12):
        raise InfeasibleError(
            "minimum rates exceed the power budget",
            residual=float(budget / max(np.sum(floors), 1e-300)),
        )
    inv_g = noise_power / gains

    def allocate(level: float) -> np.ndarray:
        return np.maximum(floors, 1.0 / (level * LN2) - inv_g)

    def inner(lam: float) -> np.ndarray:
        if lam > 0:
            p = allocate(lam)
            if np.sum(p) <= budget:
                return p
        # budget binds: bisect the extra multiplier nu >= 0
        lo = max(lam, 0.0)
        hi = max(lam, 1e-12)
        while np.sum(allocate(hi)) > budget:
            hi = 2.0 * hi + 1e-6
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.sum(allocate(mid)) > budget:
                lo = mid
            else:
                hi = mid
        p = allocate(hi)
        # spread the bisection residue over interior users for an exact budget
        interior = p > floors + 1e-15
        if np.any(interior):
            p[interior] += (budget - np.sum(p)) / np.count_nonzero(interior)
        return np.maximum(p, floors)

    return inner


def dinkelbach_ee(
    rate_fn: Callable[[np.ndarray], np.ndarray],
    power_fn: Callable[[np.ndarray], float],
    budget: float,
    min_rates: Sequence[float],
    inner_solver: Callable[[float], np.ndarray],
    tol: float = 1e-8,
    max_iter: int = 100,
    trace: list | None = None,
) -> tuple[PowerAllocation, float]:
    """Dinkelbach iterations for max rate(p)/power(p) under rate floors.

    ``inner_solver(lam)`` must return the feasible maximizer of
    ``sum(rate_fn(p)) - lam * power_fn(p)``; :func:`make_ee_inner` builds it
    for the separable ZF case.  Returns the allocation and the achieved
    ratio, with ``F(lam*) = 0`` within ``tol``.
    """
    min_rates = np.asarray(min_rates, dtype=float)
    lam = 0.0
    prev_f = np.inf
    p = inner_solver(lam)
    for _ in range(max_iter):
        p = inner_solver(lam)
        rates = np.asarray(rate_fn(p), dtype=float)
        if np.any(rates < min_rates - 1e-9):
            raise InfeasibleError(
                "inner solver violates the minimum rates",
                residual=float(np.min(rates - min_rates)),
            )
        total_power = float(power_fn(p))
        f = float(np.sum(rates)) - lam * total_power
        if trace is not None:
            trace.append((lam, f))
        if f > prev_f + 1e-9 * (1.0 + abs(prev_f)):
            raise RuntimeError("Dinkelbach value increased; inner problem not concave?")
        prev_f = f
        if abs(f) < tol:
            break
        lam_new = float(np.sum(rates)) / total_power
        if lam_new < lam - 1e-12 * (1.0 + abs(lam)):
            raise RuntimeError("Dinkelbach ratio iterates must be non-decreasing")
        lam = lam_new
    return PowerAllocation(p), lam


def wmmse_step(
    channels: ChannelSet,
    phases,
    w: np.ndarray,
    weights: Sequence[float],
    noise_power: float,
    power_budget: float,
) -> BeamformingMatrix:
    """One full WMMSE round: receiver, MSE-weight, and precoder updates.

    The precoder update enforces the total power budget through a bisected
    Lagrange multiplier.  A round never decreases the weighted sum rate.
    """
    alpha = np.asarray(weights, dtype=float)
    k = channels.num_users
    h = np.stack([composite_channel(channels, phases, i) for i in range(k)])
    nt = h.shape[1]
    w = np.asarray(w, dtype=complex).reshape(nt, k)
    eye = np.eye(nt, dtype=complex)

    t = h.conj() @ w  # t[i, j] = h_i^H w_j
    totals = np.sum(np.abs(t) ** 2, axis=1) + noise_power
    u = np.diag(t) / totals
    mse = 1.0 - np.abs(np.diag(t)) ** 2 / totals
    v = 1.0 / np.maximum(mse, 1e-300)

    coeff = alpha * v * np.abs(u) ** 2
    a = (h.T * coeff) @ h.conj()  # sum_k c_k h_k h_k^H
    rhs = h.T * (alpha * v * u)  # column i: alpha_i v_i u_i h_i

    def precoder(mu: float) -> np.ndarray:
        return np.linalg.solve(a + mu * eye, rhs)

    # a is rank K < Nt in general; the minimum-norm unconstrained solution
    # decides whether the power constraint is active
    w_new = np.linalg.pinv(a, hermitian=True) @ rhs
    if np.linalg.norm(w_new) ** 2 <= power_budget:
        return BeamformingMatrix(w_new)
    hi = 1.0
    while np.linalg.norm(precoder(hi)) ** 2 > power_budget:
        hi *= 2.0
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(precoder(mid)) ** 2 > power_budget:
            lo = mid
        else:
            hi = mid
    return BeamformingMatrix(precoder(hi))


def weighted_sum_rate(
    channels: ChannelSet,
    phases,
    w: np.ndarray,
    weights: Sequence[float],
    noise_power: float,
) -> float:
    """Weighted sum rate in bits/s/Hz for precoder columns w_k."""
    from risopt.channel import all_sinrs

    s = all_sinrs(channels, phases, np.asarray(w, dtype=complex), noise_power)
    return float(np.sum(np.asarray(weights, dtype=float) * np.log2(1.0 + s)))
