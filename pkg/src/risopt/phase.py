"""Phase-shift representations and the conversions between them.

A phase configuration lives either on the continuous torus [0, 2pi)^N or
on a b-bit grid.  Alternative encodings used by the solvers: the lifted
(homogenized) outer-product matrix, a one-hot binary vector per element,
and raw complex points inside the convex hull of the feasible set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


class NotPsdError(ValueError):
    """Lifted matrix is not positive semidefinite within tolerance."""


@dataclass(frozen=True)
class PhaseShiftVector:
    """Per-element phases theta in [0, 2pi), continuous or b-bit quantized.

    ``bits=None`` marks a continuous vector; otherwise every entry must be
    an integer multiple of 2pi/2^bits.
    """

    theta: np.ndarray
    bits: int | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        object.__setattr__(self, "theta", theta)
        if theta.size == 0:
            raise ValueError("empty phase vector")
        if np.any(theta < 0) or np.any(theta >= TWO_PI):
            raise ValueError("phases must lie in [0, 2pi)")
        if self.bits is not None:
            if self.bits < 1:
                raise ValueError("bits must be >= 1")
            step = TWO_PI / (2**self.bits)
            if not np.allclose(np.round(theta / step) * step, theta, atol=1e-12):
                raise ValueError("quantized phases must sit on the grid")
        theta.flags.writeable = False

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def phi(self) -> np.ndarray:
        """Unit-modulus reflection coefficients e^{j theta}."""
        return np.exp(1j * self.theta)

    def to_dict(self) -> dict:
        tag = "continuous" if self.bits is None else f"bits:{self.bits}"
        return {"theta": self.theta.tolist(), "resolution": tag}

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseShiftVector":
        tag = d["resolution"]
        bits = None if tag == "continuous" else int(tag.split(":", 1)[1])
        return cls(np.asarray(d["theta"], dtype=float), bits=bits)

    @classmethod
    def zeros(cls, n: int, bits: int | None = None) -> "PhaseShiftVector":
        return cls(np.zeros(n), bits=bits)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "PhaseShiftVector":
        return cls(rng.uniform(0.0, TWO_PI, size=n))


@dataclass(frozen=True)
class LiftedMatrix:
    """Homogenized lifting [phi; 1][phi; 1]^H and its SDP relaxations.

    ``v`` is (N+1) x (N+1) Hermitian with unit diagonal; positive
    semidefiniteness is required only within solver tolerance.
    """

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ValueError("lifted matrix must be square of size >= 2")
        if not np.allclose(v, v.conj().T, atol=1e-8):
            raise ValueError("lifted matrix must be Hermitian")
        object.__setattr__(self, "v", v)
        v.flags.writeable = False

    @property
    def n(self) -> int:
        """Number of phase elements (matrix size minus homogenization)."""
        return self.v.shape[0] - 1


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles into [0, 2pi)."""
    out = np.mod(theta, TWO_PI)
    # mod can return 2pi for tiny negative inputs after rounding
    out[out >= TWO_PI] = 0.0
    return out


def project_unit_circle(z: np.ndarray) -> PhaseShiftVector:
    """Elementwise nearest point on the unit circle; zeros map to angle 0."""
    z = np.asarray(z, dtype=complex).reshape(-1)
    theta = wrap_angle(np.angle(z))
    theta[z == 0] = 0.0
    return PhaseShiftVector(theta)


def quantize(phases: PhaseShiftVector, b: int) -> PhaseShiftVector:
    """Snap each phase to the nearest b-bit grid point on the circle.

    Ties at half a grid step break toward the lower grid point.
    """
    if b < 1:
        raise ValueError("bits must be >= 1")
    levels = 2**b
    step = TWO_PI / levels
    m = np.ceil(phases.theta / step - 0.5).astype(int) % levels
    return PhaseShiftVector(m * step, bits=b)


def lift(phases: PhaseShiftVector) -> LiftedMatrix:
    """Homogenized rank-one lifting [phi; 1][phi; 1]^H."""
    ext = np.concatenate([phases.phi, [1.0 + 0.0j]])
    return LiftedMatrix(np.outer(ext, ext.conj()))


def dehomogenize(ext: np.ndarray) -> np.ndarray:
    """Rotate an (N+1)-vector so its last coordinate is real positive, drop it."""
    last = ext[-1]
    if last != 0:
        ext = ext * (np.conj(last) / abs(last))
    return ext[:-1]


def rank_one_extract(
    v: LiftedMatrix,
    num_samples: int,
    evaluator: Callable[[np.ndarray], float],
    seed: int = 0,
    psd_tol: float = 1e-6,
) -> PhaseShiftVector:
    """Gaussian randomization of a lifted matrix back to unit-modulus phases.

    Draws ``num_samples`` vectors xi ~ CN(0, v), de-homogenizes each by the
    last coordinate, projects onto the unit circle, and returns the
    candidate with the highest ``evaluator`` score.  The principal
    eigenvector is always scored as an extra candidate; ties keep the
    earliest candidate.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    vals, vecs = np.linalg.eigh(v.v)
    scale = max(1.0, float(vals[-1]))
    if vals[0] < -psd_tol * scale:
        raise NotPsdError(f"minimum eigenvalue {vals[0]:.3e} below tolerance")
    # numerically-zero eigenvalues would inject sqrt(eps)-level sampling
    # noise; treat them as exact zeros
    vals = np.where(vals > 1e-12 * scale, vals, 0.0)

    candidates = [project_unit_circle(dehomogenize(vecs[:, -1]))]
    rng = np.random.default_rng(seed)
    half = vecs * np.sqrt(vals)
    for _ in range(num_samples):
        xi = half @ (
            (rng.standard_normal(vals.size) + 1j * rng.standard_normal(vals.size))
            / np.sqrt(2.0)
        )
        candidates.append(project_unit_circle(dehomogenize(xi)))

    best, best_score = candidates[0], evaluator(candidates[0].phi)
    for cand in candidates[1:]:
        score = evaluator(cand.phi)
        if score > best_score:
            best, best_score = cand, score
    return best


def binary_encode(phases: PhaseShiftVector, b: int) -> np.ndarray:
    """One-hot encoding: one group of 2^b indicator entries per element."""
    grid = quantize(phases, b)
    if not np.allclose(grid.theta, phases.theta, atol=1e-9):
        raise ValueError("phases must be b-bit grid values to encode")
    levels = 2**b
    step = TWO_PI / levels
    x = np.zeros(phases.n * levels, dtype=int)
    idx = np.round(phases.theta / step).astype(int) % levels
    x[np.arange(phases.n) * levels + idx] = 1
    return x


def binary_decode(x: np.ndarray, b: int) -> PhaseShiftVector:
    """Inverse of :func:`binary_encode`; each group must contain exactly one 1."""
    x = np.asarray(x)
    levels = 2**b
    if x.size % levels != 0:
        raise ValueError("binary vector length must be a multiple of 2^b")
    groups = x.reshape(-1, levels)
    if not np.all(np.isin(groups, (0, 1))) or np.any(groups.sum(axis=1) != 1):
        raise ValueError("each group must be one-hot")
    step = TWO_PI / levels
    return PhaseShiftVector(np.argmax(groups, axis=1) * step, bits=b)


def hull_vertices(b: int) -> np.ndarray:
    """Vertices of the convex hull of the b-bit feasible set."""
    return np.exp(1j * TWO_PI * np.arange(2**b) / (2**b))


def project_hull(z: np.ndarray, b: int | None) -> np.ndarray:
    """Project raw complex points onto the convex hull of the feasible set.

    Continuous resolution (``b=None``) uses the unit disk; b-bit resolution
    uses the convex hull of the 2^b grid points (a segment for b=1).
    """
    z = np.asarray(z, dtype=complex)
    if b is None:
        mag = np.abs(z)
        out = np.where(mag > 1.0, z / np.maximum(mag, 1e-300), z)
        return out
    levels = 2**b
    if levels == 2:
        return np.clip(z.real, -1.0, 1.0) + 0.0j
    step = TWO_PI / levels
    ang = np.mod(np.angle(z), TWO_PI)
    sector = np.floor(ang / step).astype(int) % levels
    mid = (sector + 0.5) * step
    inside = (z * np.exp(-1j * mid)).real <= np.cos(step / 2.0) + 1e-15
    out = z.copy()
    if np.any(~inside):
        v0 = np.exp(1j * sector * step)
        v1 = np.exp(1j * (sector + 1) * step)
        edge = v1 - v0
        t = ((z - v0) * edge.conj()).real / np.abs(edge) ** 2
        proj = v0 + np.clip(t, 0.0, 1.0) * edge
        out[~inside] = proj[~inside]
    return out


@dataclass(frozen=True)
class HullViolation:
    """Distance of a raw complex point set from unit-modulus feasibility."""

    per_element: np.ndarray
    aggregate: float
    hull_distance: np.ndarray


def hull_violation(z: np.ndarray, b: int | None = None) -> HullViolation:
    """Modulus shortfall max(0, 1-|z_n|), the aggregate N - ||z||^2, and the
    Euclidean distance of each entry to the convex hull of the feasible set.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    per = np.maximum(0.0, 1.0 - np.abs(z))
    aggregate = float(z.size - np.sum(np.abs(z) ** 2))
    dist = np.abs(z - project_hull(z, b))
    return HullViolation(per_element=per, aggregate=aggregate, hull_distance=dist)
