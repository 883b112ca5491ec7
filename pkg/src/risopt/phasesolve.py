"""Phase-shift subproblem solvers.

All solvers act on homogenized quadratics q(z) = [z; 1]^H R [z; 1] with R
Hermitian of size (N+1) x (N+1); linear terms live in the border row and
column.  Continuous solvers: majorize-minimize, unconstrained gradient
descent over angles, and Riemannian descent on the product-of-circles
manifold.  Discrete solvers: per-element successive refinement, an exact
branch-and-bound over the one-hot encoding, and a penalty relaxation over
the convex hull.  SINR feasibility problems go through an in-house ADMM
semidefinite solver with certified dual bounds.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from risopt.channel import ChannelSet
from risopt.phase import (
    TWO_PI,
    LiftedMatrix,
    PhaseShiftVector,
    dehomogenize,
    project_hull,
    project_unit_circle,
    quantize,
    rank_one_extract,
    wrap_angle,
)


class SolverError(RuntimeError):
    """Iterative solver failed to converge within its cap."""


class SizeLimitError(ValueError):
    """Problem exceeds the desk-scale guard of an exact solver."""


# ---------------------------------------------------------------------------
# quadratic forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseQuadratic:
    """Homogenized quadratic z~^H R z~ with z~ = [z; 1], R Hermitian."""

    r_mat: np.ndarray
    sense: str = "minimize"

    def __post_init__(self):
        r = np.asarray(self.r_mat, dtype=complex)
        if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
            raise ValueError("r_mat must be square of size >= 2")
        if not np.allclose(r, r.conj().T, atol=1e-10 * max(1.0, float(np.abs(r).max()))):
            raise ValueError("r_mat must be Hermitian")
        if self.sense not in ("minimize", "maximize"):
            raise ValueError("sense must be 'minimize' or 'maximize'")
        r = 0.5 * (r + r.conj().T)
        object.__setattr__(self, "r_mat", r)
        r.flags.writeable = False

    @property
    def n(self) -> int:
        return self.r_mat.shape[0] - 1

    def extend(self, z: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(z, dtype=complex).reshape(-1), [1.0 + 0j]])

    def value(self, z) -> float:
        """Evaluate at a raw complex vector or a PhaseShiftVector."""
        z = getattr(z, "phi", z)
        ext = self.extend(z)
        return float(np.real(ext.conj() @ self.r_mat @ ext))

    def negated(self) -> "PhaseQuadratic":
        sense = "maximize" if self.sense == "minimize" else "minimize"
        return PhaseQuadratic(-self.r_mat, sense=sense)


@dataclass(frozen=True)
class SinrConstraintSet:
    """Per-user SINR constraints as ratios of homogenized quadratics.

    SINR_k(z) = signal_k(z) / (interference_k(z) + noise_k); the residual of
    a point is min_k SINR_k - target_k, in linear SINR units.
    """

    signal: tuple
    interference: tuple
    noise: np.ndarray
    targets: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.signal)

    @property
    def n(self) -> int:
        return self.signal[0].n

    def sinr_values(self, z) -> np.ndarray:
        z = getattr(z, "phi", z)
        return np.array(
            [
                self.signal[k].value(z) / (self.interference[k].value(z) + self.noise[k])
                for k in range(self.num_users)
            ]
        )

    def residual(self, z) -> float:
        return float(np.min(self.sinr_values(z) - self.targets))


def build_sinr_quadratics(
    channels: ChannelSet,
    w: np.ndarray,
    noise_power: float,
    targets: Sequence[float],
) -> SinrConstraintSet:
    """Express every user's SINR at fixed precoding as quadratics in z.

    The received amplitude h_k(z)^H w_j is affine in the raw reflection
    vector z, so signal and interference become homogenized quadratics that
    reproduce the channel-level SINR at any unit-modulus z.
    """
    w = np.asarray(w, dtype=complex)
    k_users = channels.num_users
    n = channels.g.shape[0]
    targets = np.asarray(targets, dtype=float)
    gw = channels.g @ w  # (N, K)
    signal, interference = [], []
    for k in range(k_users):
        a = channels.h_r[k].conj()[:, None] * gw  # column j: a_{kj}
        b = channels.h_d[k].conj() @ w  # b_{kj} per column j
        c = np.vstack([a.conj(), b.conj()[None, :]])  # column j: [conj(a); conj(b)]
        r_all = [np.outer(c[:, j], c[:, j].conj()) for j in range(w.shape[1])]
        signal.append(PhaseQuadratic(r_all[k]))
        intf = np.zeros((n + 1, n + 1), dtype=complex)
        for j in range(w.shape[1]):
            if j != k:
                intf += r_all[j]
        interference.append(PhaseQuadratic(intf))
    return SinrConstraintSet(
        signal=tuple(signal),
        interference=tuple(interference),
        noise=np.full(k_users, float(noise_power)),
        targets=targets,
    )


# ---------------------------------------------------------------------------
# continuous solvers
# ---------------------------------------------------------------------------


def mm_quadratic(
    q: PhaseQuadratic,
    phi0: PhaseShiftVector,
    max_iter: int = 500,
    tol: float = 1e-10,
    history: list | None = None,
) -> PhaseShiftVector:
    """Majorize-minimize on the unit-modulus quadratic.

    Each step majorizes around the current point using the largest
    eigenvalue of R as the curvature cap and projects back onto the circle:
    x <- project((lam_max I - R) x).  The objective never increases; stops
    when the per-step decrease drops below ``tol``.
    """
    if q.sense != "minimize":
        raise ValueError("mm_quadratic requires a minimization-sense quadratic")
    r = q.r_mat
    lam_max = float(np.linalg.eigvalsh(r)[-1])
    x = q.extend(phi0.phi)
    scale = 1.0 + abs(lam_max) * x.size
    prev = float(np.real(x.conj() @ (r @ x)))
    if history is not None:
        history.append(prev)
    for _ in range(max_iter):
        v = lam_max * x - r @ x
        mag = np.abs(v)
        x = np.where(mag > 0, v / np.where(mag > 0, mag, 1.0), x)
        cur = float(np.real(x.conj() @ (r @ x)))
        assert cur <= prev + 1e-9 * scale, "majorization step increased the objective"
        if history is not None:
            history.append(cur)
        if prev - cur < tol:
            break
        prev = cur
    return project_unit_circle(dehomogenize(x))


def gradient_phase(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta0: np.ndarray,
    stepsize_rule: str = "backtracking",
    max_iter: int = 1000,
    tol: float = 1e-6,
    init_step: float = 1.0,
) -> PhaseShiftVector:
    """Gradient descent over unconstrained angles (no modulus constraint).

    ``objective(theta)`` returns (value, gradient) and must be 2pi-periodic
    per coordinate so the returned wrapped angles are equivalent.  Armijo
    backtracking keeps the descent monotone; stops once the gradient norm
    falls below ``tol`` or backtracking stalls.
    """
    if stepsize_rule != "backtracking":
        raise ValueError(f"unknown stepsize rule {stepsize_rule!r}")
    theta = np.asarray(theta0, dtype=float).copy()
    val, grad = objective(theta)
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise ValueError("objective returned non-finite value or gradient")
    step = init_step
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        while step > 1e-18:
            cand = theta - step * grad
            cval, cgrad = objective(cand)
            if np.isfinite(cval) and cval <= val - 1e-4 * step * gnorm**2:
                break
            step *= 0.5
        else:
            break
        theta, val, grad = cand, cval, cgrad
        if not np.all(np.isfinite(grad)):
            raise ValueError("objective returned non-finite gradient")
        step = min(step * 2.0, 1e6)
    return PhaseShiftVector(wrap_angle(theta))


def manifold_phase(
    q: PhaseQuadratic,
    phi0: PhaseShiftVector,
    max_iter: int = 2000,
    tol: float = 1e-8,
    history: list | None = None,
) -> PhaseShiftVector:
    """Riemannian gradient descent on the product-of-circles manifold.

    The Euclidean gradient of the de-homogenized quadratic is projected
    onto the tangent space of each circle and the iterate retracts by
    unit-circle projection; Armijo backtracking keeps the descent monotone.
    Stops when the Riemannian gradient norm falls below ``tol``.
    """
    if q.sense != "minimize":
        raise ValueError("manifold_phase requires a minimization-sense quadratic")
    n = q.n
    a = q.r_mat[:n, :n]
    b = q.r_mat[:n, n]
    const = float(np.real(q.r_mat[n, n]))

    def value(z):
        return float(np.real(z.conj() @ (a @ z)) + 2.0 * np.real(z.conj() @ b) + const)

    z = phi0.phi.astype(complex)
    val = value(z)
    if history is not None:
        history.append(val)
    step = 1.0 / (1.0 + float(np.linalg.norm(a, 2)))
    for _ in range(max_iter):
        egrad = 2.0 * (a @ z + b)
        rgrad = egrad - np.real(egrad * z.conj()) * z
        gnorm = float(np.linalg.norm(rgrad))
        if gnorm < tol:
            break
        while step > 1e-18:
            cand = z - step * rgrad
            mag = np.abs(cand)
            cand = np.where(mag > 0, cand / np.where(mag > 0, mag, 1.0), z)
            cval = value(cand)
            if cval <= val - 1e-4 * step * gnorm**2:
                break
            step *= 0.5
        else:
            break
        z, val = cand, cval
        if history is not None:
            history.append(val)
        step = min(step * 2.0, 1e6)
    return project_unit_circle(z)


def riemannian_gradient(q: PhaseQuadratic, phases: PhaseShiftVector) -> np.ndarray:
    """Tangent-space gradient of the quadratic at a unit-modulus point."""
    n = q.n
    z = phases.phi
    egrad = 2.0 * (q.r_mat[:n, :n] @ z + q.r_mat[:n, n])
    return egrad - np.real(egrad * z.conj()) * z


def quadratic_theta_objective(q: PhaseQuadratic) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Wrap a homogenized quadratic as an angle-domain value/gradient oracle."""
    r = q.r_mat
    n = q.n

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        ext = np.concatenate([np.exp(1j * theta), [1.0 + 0j]])
        rx = r @ ext
        val = float(np.real(ext.conj() @ rx))
        grad = 2.0 * np.imag(ext.conj() * rx)[:n]
        return val, grad

    return objective


# ---------------------------------------------------------------------------
# in-house ADMM semidefinite solver
# ---------------------------------------------------------------------------


def _psd_project(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    if vals[0] >= 0:
        return m
    pos = vals > 0
    return (vecs[:, pos] * vals[pos]) @ vecs[:, pos].conj().T


def _admm_diag_sdp(
    c: np.ndarray,
    tol: float,
    cap: int,
    warm: dict | None = None,
) -> tuple[np.ndarray, dict]:
    """min <C, V> s.t. diag(V) = 1, V >= 0 by two-block splitting ADMM."""
    n = c.shape[0]
    rho = max(float(np.linalg.norm(c)) / n, 1e-8)
    z = warm["z"].copy() if warm else np.eye(n, dtype=complex)
    u = warm["u"].copy() if warm else np.zeros((n, n), dtype=complex)
    x = z
    for it in range(cap):
        m = z - u - c / rho
        x = m - np.diag(np.diag(m) - 1.0)
        z_prev = z
        z = _psd_project(x + u)
        u = u + x - z
        prim = np.linalg.norm(x - z)
        dual = rho * np.linalg.norm(z - z_prev)
        scale = max(1.0, np.linalg.norm(x), np.linalg.norm(z))
        if prim < tol * scale and dual < tol * scale:
            return x, {"z": z, "u": u, "iters": it + 1}
        if it % 50 == 49:
            if prim > 10 * dual:
                rho *= 2.0
                u /= 2.0
            elif dual > 10 * prim:
                rho /= 2.0
                u *= 2.0
    raise SolverError(f"diag-SDP ADMM did not reach tol {tol:g} in {cap} iterations")


def _admm_maxslack_sdp(
    b_mats: np.ndarray,
    betas: np.ndarray,
    tol: float,
    cap: int,
    warm: dict | None = None,
) -> tuple[np.ndarray, float, np.ndarray, dict]:
    """max t s.t. <B_k, V> - beta_k >= t, diag(V) = 1, V >= 0.

    Returns (V, t, affine row multipliers, warm-start state).  Inequalities
    get nonnegative slacks s_k; the joint affine projection solves a dense
    Gram system assembled once per call.
    """
    kk, n, _ = b_mats.shape
    diag_b = np.stack([np.real(np.diag(bk)) for bk in b_mats])  # (K, n)
    gram_rows = np.real(np.einsum("kij,lji->kl", b_mats, b_mats)) + np.eye(kk) + 1.0
    gram = np.block([[np.eye(n), diag_b.T], [diag_b, gram_rows]])
    gram_inv = np.linalg.inv(gram)
    rhs_const = np.concatenate([np.ones(n), betas])

    rho = max(float(np.mean([np.linalg.norm(bk) for bk in b_mats])), 1e-8)
    if warm:
        zv, zs, zt = warm["zv"].copy(), warm["zs"].copy(), warm["zt"]
        uv, us, ut = warm["uv"].copy(), warm["us"].copy(), warm["ut"]
    else:
        zv = np.eye(n, dtype=complex)
        zs, zt = np.zeros(kk), 0.0
        uv = np.zeros((n, n), dtype=complex)
        us, ut = np.zeros(kk), 0.0
    w = np.zeros(n + kk)
    xv, xt = zv, zt
    for it in range(cap):
        mv = zv - uv
        ms = zs - us
        mt = zt - ut + 1.0 / rho  # maximize t: objective coefficient -1
        a_of_m = np.concatenate(
            [
                np.real(np.diag(mv)),
                np.real(np.einsum("kij,ji->k", b_mats, mv)) - ms - mt,
            ]
        )
        w = gram_inv @ (a_of_m - rhs_const)
        wd, wr = w[:n], w[n:]
        xv = mv - np.diag(wd.astype(complex)) - np.einsum("k,kij->ij", wr, b_mats)
        xs = ms + wr
        xt = mt + float(np.sum(wr))
        zv_prev, zs_prev, zt_prev = zv, zs, zt
        zv = _psd_project(xv + uv)
        zs = np.maximum(xs + us, 0.0)
        zt = xt + ut
        uv = uv + xv - zv
        us = us + xs - zs
        ut = ut + xt - zt
        prim = np.sqrt(
            np.linalg.norm(xv - zv) ** 2 + np.linalg.norm(xs - zs) ** 2 + (xt - zt) ** 2
        )
        dual = rho * np.sqrt(
            np.linalg.norm(zv - zv_prev) ** 2
            + np.linalg.norm(zs - zs_prev) ** 2
            + (zt - zt_prev) ** 2
        )
        scale = max(1.0, float(np.linalg.norm(xv)), abs(xt))
        if prim < tol * scale and dual < tol * scale:
            state = {"zv": zv, "zs": zs, "zt": zt, "uv": uv, "us": us, "ut": ut, "iters": it + 1}
            return xv, float(xt), rho * wr, state
        if it % 50 == 49:
            if prim > 10 * dual:
                rho *= 2.0
                uv, us, ut = uv / 2.0, us / 2.0, ut / 2.0
            elif dual > 10 * prim:
                rho /= 2.0
                uv, us, ut = uv * 2.0, us * 2.0, ut * 2.0
    raise SolverError(f"max-slack ADMM did not reach tol {tol:g} in {cap} iterations")


def _certified_max_bound(c: np.ndarray, v_hat: np.ndarray) -> float:
    """Certified upper bound on max <C, V> s.t. diag(V) = 1, V >= 0.

    Builds a dual-feasible diagonal from the complementarity guess
    y_i = (C V)_ii and shifts it by the most negative eigenvalue.
    """
    y = np.real(np.diag(c @ v_hat))
    m = float(np.linalg.eigvalsh(np.diag(y) - c)[0])
    if m < 0:
        y = y - m
    return float(np.sum(y))


def _certified_slack_bound(
    b_mats: np.ndarray, betas: np.ndarray, v_hat: np.ndarray, mu_raw: np.ndarray
) -> float:
    """Certified upper bound on the max-slack SDP value via weak duality."""
    kk = b_mats.shape[0]
    best = np.inf
    for mu0 in (mu_raw, -mu_raw, np.ones(kk)):
        mu = np.maximum(mu0, 0.0)
        total = float(np.sum(mu))
        mu = mu / total if total > 0 else np.full(kk, 1.0 / kk)
        q = np.einsum("k,kij->ij", mu, b_mats)
        y = np.real(np.diag(q @ v_hat))
        m = float(np.linalg.eigvalsh(np.diag(y) - q)[0])
        if m < 0:
            y = y - m
        best = min(best, float(np.sum(y) - mu @ betas))
    return best


@dataclass
class SdrResult:
    """Outcome of the lifted semidefinite route.

    ``objective_bound`` is a certified bound on the relaxation optimum (an
    upper bound for maximization sense, lower bound for minimization), so
    it provably bounds the value of every unit-modulus candidate.  In
    feasibility mode it bounds the best reachable SINR residual and
    ``feasible`` flags whether some extracted candidate met all targets.
    """

    v: LiftedMatrix
    phases: PhaseShiftVector
    objective_bound: float
    achieved: float
    feasible: bool


def sdr_phase(
    problem,
    mode: str = "optimize",
    num_samples: int = 1000,
    seed: int = 0,
    admm_tol: float = 1e-6,
    admm_cap: int = 5000,
    residual_tol: float = 1e-3,
    v0: LiftedMatrix | None = None,
) -> SdrResult:
    """Semidefinite relaxation of a phase quadratic or SINR feasibility set.

    mode="optimize": ``problem`` is a PhaseQuadratic; solves the lifted SDP
    with unit diagonal and recovers phases by Gaussian randomization scored
    by the quadratic itself.

    mode="feasibility": ``problem`` is a SinrConstraintSet; maximizes the
    common SINR residual delta by bisection, each step solving a max-slack
    SDP with targets gamma_k + delta.  Extraction scores candidates by
    their true min SINR residual; ``v0`` warm-starts the first solve.
    """
    if mode == "optimize":
        return _sdr_optimize(problem, num_samples, seed, admm_tol, admm_cap, v0)
    if mode == "feasibility":
        return _sdr_feasibility(
            problem, num_samples, seed, admm_tol, admm_cap, residual_tol, v0
        )
    raise ValueError(f"unknown mode {mode!r}")


def _sdr_optimize(q: PhaseQuadratic, num_samples, seed, tol, cap, v0) -> SdrResult:
    scale = max(float(np.abs(q.r_mat).max()), 1e-300)
    sign = 1.0 if q.sense == "maximize" else -1.0
    c = -sign * q.r_mat / scale  # the ADMM core minimizes <C, V>
    warm = None
    if v0 is not None:
        warm = {"z": v0.v.astype(complex), "u": np.zeros_like(v0.v, dtype=complex)}
    v_hat, _ = _admm_diag_sdp(c, tol, cap, warm)
    bound = sign * scale * _certified_max_bound(-c, v_hat)
    lifted = LiftedMatrix(0.5 * (v_hat + v_hat.conj().T))

    def score(phi):
        return sign * q.value(phi)

    phases = rank_one_extract(lifted, num_samples, score, seed=seed, psd_tol=100 * tol)
    achieved = q.value(phases)
    return SdrResult(
        v=lifted, phases=phases, objective_bound=bound, achieved=achieved, feasible=True
    )


def _sdr_feasibility(
    cons: SinrConstraintSet, num_samples, seed, tol, cap, residual_tol, v0
) -> SdrResult:
    kk = cons.num_users
    n1 = cons.n + 1
    sig = np.stack([cons.signal[k].r_mat for k in range(kk)])
    intf = np.stack([cons.interference[k].r_mat for k in range(kk)])
    scale = max(float(np.abs(sig).max()), float(np.abs(intf).max()), float(np.max(cons.noise)))
    sig, intf, noise = sig / scale, intf / scale, cons.noise / scale
    gam = cons.targets

    warm: dict | None = None
    if v0 is not None:
        warm = {
            "zv": v0.v.astype(complex),
            "zs": np.zeros(kk),
            "zt": 0.0,
            "uv": np.zeros((n1, n1), dtype=complex),
            "us": np.zeros(kk),
            "ut": 0.0,
        }

    def solve(delta):
        nonlocal warm
        b = np.stack([sig[k] - (gam[k] + delta) * intf[k] for k in range(kk)])
        beta = (gam + delta) * noise
        v_hat, t_hat, mults, warm = _admm_maxslack_sdp(b, beta, tol, cap, warm)
        bound = _certified_slack_bound(b, beta, v_hat, mults)
        return v_hat, t_hat, bound

    # bracket the zero crossing of the decreasing map delta -> t*(delta)
    lo = 0.0
    v_lo, t_lo, _ = solve(lo)
    if t_lo < 0:
        step = max(float(np.min(gam)), 1.0)
        while t_lo < 0:
            lo -= step
            step *= 2.0
            v_lo, t_lo, _ = solve(lo)
            if lo < -1e9:
                raise SolverError("failed to bracket a feasible SINR residual")
    hi = lo + max(1.0, abs(lo))
    _, _, bound_hi = solve(hi)
    while bound_hi >= 0:
        hi += max(1.0, hi - lo)
        _, _, bound_hi = solve(hi)
        if hi > 1e9:
            raise SolverError("SINR residual appears unbounded")
    while hi - lo > residual_tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        v_mid, t_mid, bound_mid = solve(mid)
        if t_mid >= 0:
            lo, v_lo = mid, v_mid
        elif bound_mid < 0:
            hi = mid
        else:
            break  # undecided band narrower than the solver tolerance

    lifted = LiftedMatrix(0.5 * (v_lo + v_lo.conj().T))
    phases = rank_one_extract(
        lifted, num_samples, cons.residual, seed=seed, psd_tol=100 * tol
    )
    achieved = cons.residual(phases)
    return SdrResult(
        v=lifted,
        phases=phases,
        objective_bound=hi,
        achieved=achieved,
        feasible=achieved >= 0.0,
    )


# ---------------------------------------------------------------------------
# discrete solvers
# ---------------------------------------------------------------------------


def successive_refinement(
    objective,
    phi0: PhaseShiftVector | None,
    b: int,
    max_sweeps: int = 100,
) -> PhaseShiftVector:
    """Coordinate descent over the b-bit levels, one element at a time.

    ``objective`` is a minimization-sense PhaseQuadratic or a callable on
    raw complex vectors.  Elements sweep in index order, each set to its
    best level given the others (lowest level index wins ties); terminates
    when a full sweep changes nothing.

    ``phi0=None`` sweeps from every constant-level start (plus the
    quantized majorize-minimize point for quadratics) and keeps the best
    endpoint, earliest start winning ties.
    """
    levels = 2**b
    grid = np.exp(1j * TWO_PI * np.arange(levels) / levels)
    if phi0 is None:
        if not isinstance(objective, PhaseQuadratic):
            raise ValueError("a start point is required for callable objectives")
        n = objective.n
        starts = [
            PhaseShiftVector(np.full(n, m * TWO_PI / levels), bits=b) for m in range(levels)
        ]
        starts.append(mm_quadratic(objective, starts[0]))
        best, best_val = None, np.inf
        for st in starts:
            cand = successive_refinement(objective, st, b, max_sweeps)
            val = objective.value(cand)
            if val < best_val - 1e-15:
                best, best_val = cand, val
        return best
    start = phi0 if phi0.bits == b else quantize(phi0, b)
    idx = np.round(start.theta / (TWO_PI / levels)).astype(int) % levels

    if isinstance(objective, PhaseQuadratic):
        if objective.sense != "minimize":
            raise ValueError("successive_refinement requires minimization sense")
        return _sr_quadratic(objective, idx, grid, b, max_sweeps)

    z = grid[idx].astype(complex)
    n = z.size
    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            best_m, best_val = idx[i], None
            for m in range(levels):
                z[i] = grid[m]
                val = float(objective(z))
                if best_val is None or val < best_val - 1e-15:
                    best_val, best_m = val, m
            if best_m != idx[i]:
                changed = True
                idx[i] = best_m
            z[i] = grid[idx[i]]
        if not changed:
            break
    return PhaseShiftVector(idx * (TWO_PI / levels), bits=b)


def _sr_quadratic(q: PhaseQuadratic, idx: np.ndarray, grid: np.ndarray, b: int, max_sweeps: int):
    r = q.r_mat
    n = q.n
    ext = np.concatenate([grid[idx], [1.0 + 0j]])
    rx = r @ ext
    diag = np.real(np.diag(r))[:n]
    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            old = ext[i]
            # objective change for level v: 2 Re(conj(v - old) (rx_i - R_ii old));
            # unit moduli kill the diagonal term
            base = rx[i] - diag[i] * old
            deltas = 2.0 * np.real(np.conj(grid - old) * base)
            m = int(np.argmin(deltas))
            if deltas[m] < -1e-15 and m != idx[i]:
                rx = rx + r[:, i] * (grid[m] - old)
                ext[i] = grid[m]
                idx[i] = m
                changed = True
        if not changed:
            break
    return PhaseShiftVector(idx * (TWO_PI / grid.size), bits=b)


def _bnb_guard(n: int, b: int):
    if b == 1 and n > 16:
        raise SizeLimitError("branch and bound limited to N <= 16 for b = 1")
    if b == 2 and n > 10:
        raise SizeLimitError("branch and bound limited to N <= 10 for b = 2")
    if b >= 3 and n * 2**b > 40:
        raise SizeLimitError("branch and bound limited to N * 2^b <= 40 for b >= 3")


def branch_and_bound(q: PhaseQuadratic, b: int) -> PhaseShiftVector:
    """Globally optimal b-bit phases for a quadratic, via one-hot encoding.

    The quadratic is linearized exactly over products of one-hot indicator
    groups (pairwise product variables with marginal equalities); a
    best-first search prunes with LP relaxation bounds and closes when no
    open node can beat the incumbent.  Desk-scale guard: N <= 16 for b = 1,
    N <= 10 for b = 2.
    """
    if q.sense != "minimize":
        raise ValueError("branch_and_bound requires a minimization-sense quadratic")
    n = q.n
    _bnb_guard(n, b)
    levels = 2**b
    grid = np.exp(1j * TWO_PI * np.arange(levels) / levels)
    a = q.r_mat[:n, :n]
    c_lin = q.r_mat[:n, n]
    const = float(np.real(q.r_mat[n, n]) + np.sum(np.real(np.diag(a))))

    cost_x = np.zeros(n * levels)
    for i in range(n):
        cost_x[i * levels : (i + 1) * levels] = 2.0 * np.real(np.conj(grid) * c_lin[i])
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    cost_z = np.zeros(len(pairs) * levels * levels)
    for p, (i, j) in enumerate(pairs):
        block = 2.0 * np.real(np.conj(grid)[:, None] * a[i, j] * grid[None, :])
        cost_z[p * levels**2 : (p + 1) * levels**2] = block.ravel()
    cost = np.concatenate([cost_x, cost_z])

    rows, cols, vals, rhs = [], [], [], []
    row = 0
    for i in range(n):
        for m in range(levels):
            rows.append(row)
            cols.append(i * levels + m)
            vals.append(1.0)
        rhs.append(1.0)
        row += 1
    zoff = n * levels
    for p, (i, j) in enumerate(pairs):
        base = zoff + p * levels**2
        for m in range(levels):
            for l in range(levels):
                rows.append(row)
                cols.append(base + m * levels + l)
                vals.append(1.0)
            rows.append(row)
            cols.append(i * levels + m)
            vals.append(-1.0)
            rhs.append(0.0)
            row += 1
        for l in range(levels):
            for m in range(levels):
                rows.append(row)
                cols.append(base + m * levels + l)
                vals.append(1.0)
            rows.append(row)
            cols.append(j * levels + l)
            vals.append(-1.0)
            rhs.append(0.0)
            row += 1
    a_eq = csr_matrix((vals, (rows, cols)), shape=(row, cost.size))
    b_eq = np.asarray(rhs, dtype=float)

    def lp_bound(fixed: dict[int, int]):
        bounds = [(0.0, 1.0)] * cost.size
        for i, m in fixed.items():
            for lv in range(levels):
                bounds[i * levels + lv] = (1.0, 1.0) if lv == m else (0.0, 0.0)
        res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if not res.success:
            return None, None
        return float(res.fun) + const, res.x

    def exact_value(assign: np.ndarray) -> float:
        return q.value(grid[assign])

    incumbent_assign = np.zeros(n, dtype=int)
    incumbent = exact_value(incumbent_assign)
    margin = 1e-9 * (1.0 + abs(incumbent))

    heap: list = []
    bound0, x0 = lp_bound({})
    if bound0 is not None:
        heapq.heappush(heap, (bound0, 0, {}, x0))
    counter = 1
    while heap:
        bound, _, fixed, xrel = heapq.heappop(heap)
        if bound >= incumbent - margin:
            continue
        xs = xrel[: n * levels].reshape(n, levels)
        rounded = np.argmax(xs, axis=1)
        rval = exact_value(rounded)
        if rval < incumbent:
            incumbent, incumbent_assign = rval, rounded
            margin = 1e-9 * (1.0 + abs(incumbent))
        frac = 1.0 - np.max(xs, axis=1)
        if np.max(frac) < 1e-7:
            continue  # integral relaxation: the rounding above is exact here
        branch_i = int(np.argmax(frac))
        for m in range(levels):
            child = dict(fixed)
            child[branch_i] = m
            cbound, cx = lp_bound(child)
            if cbound is None or cbound >= incumbent - margin:
                continue
            if len(child) == n:
                assign = np.array([child[i] for i in range(n)])
                val = exact_value(assign)
                if val < incumbent:
                    incumbent, incumbent_assign = val, assign
                    margin = 1e-9 * (1.0 + abs(incumbent))
            else:
                heapq.heappush(heap, (cbound, counter, child, cx))
                counter += 1
    return PhaseShiftVector(incumbent_assign * (TWO_PI / levels), bits=b)


def penalty_discrete(
    q: PhaseQuadratic,
    b: int,
    penalty_schedule: Sequence[float] | None = None,
    phi0: PhaseShiftVector | None = None,
    modulus_tol: float = 1e-4,
    max_inner: int = 500,
    violation_history: list | None = None,
) -> PhaseShiftVector:
    """Penalty relaxation of b-bit phases over the convex hull.

    Minimizes q(z) + rho * sum max(0, 1 - |z_n|)^2 over the hull of the
    grid by projected gradient, sweeping an increasing penalty schedule
    until every modulus reaches 1 - ``modulus_tol``, then snaps to the
    grid.  Warns and keeps the best iterate if the schedule tops out first.
    ``violation_history`` collects the max modulus shortfall per stage.
    """
    if q.sense != "minimize":
        raise ValueError("penalty_discrete requires a minimization-sense quadratic")
    n = q.n
    a = q.r_mat[:n, :n]
    c_lin = q.r_mat[:n, n]
    scale = max(float(np.abs(q.r_mat).max()), 1e-12)
    if penalty_schedule is None:
        penalty_schedule = scale * 4.0 ** np.arange(10)
    if phi0 is None:
        phi0 = mm_quadratic(q, PhaseShiftVector.zeros(n))
    z = project_hull(phi0.phi.astype(complex), b)
    lip0 = 2.0 * float(np.linalg.norm(a, 2))

    def fval(z, rho):
        pen = np.maximum(0.0, 1.0 - np.abs(z))
        return (
            float(np.real(z.conj() @ (a @ z)) + 2 * np.real(z.conj() @ c_lin))
            + rho * float(np.sum(pen**2))
        )

    def fgrad(z, rho):
        mag = np.abs(z)
        safe = np.where(mag > 0, mag, 1.0)
        pen_g = np.where(mag > 0, -2.0 * np.maximum(0.0, 1.0 - mag) * z / safe, 0.0)
        return 2.0 * (a @ z + c_lin) + rho * pen_g

    converged = False
    for rho in penalty_schedule:
        step = 1.0 / (lip0 + 2.0 * rho)
        val = fval(z, rho)
        for _ in range(max_inner):
            g = fgrad(z, rho)
            cand = project_hull(z - step * g, b)
            cval = fval(cand, rho)
            while cval > val - 1e-14 * scale and step > 1e-16:
                step *= 0.5
                cand = project_hull(z - step * g, b)
                cval = fval(cand, rho)
            if cval > val:
                break  # backtracking exhausted, keep the current iterate
            move = float(np.linalg.norm(cand - z))
            z, val = cand, cval
            step = min(step * 2.0, 1.0)
            if move < 1e-10:
                break
        if violation_history is not None:
            violation_history.append(float(np.max(1.0 - np.abs(z))))
        if np.min(np.abs(z)) >= 1.0 - modulus_tol:
            converged = True
            break
    if not converged:
        warnings.warn("penalty schedule exhausted before modulus convergence", RuntimeWarning)
    snapped = quantize(project_unit_circle(z), b)
    # keep the quantized start if the penalty path drifted somewhere worse
    fallback = quantize(project_unit_circle(phi0.phi), b)
    if q.value(fallback) < q.value(snapped):
        return fallback
    return snapped
