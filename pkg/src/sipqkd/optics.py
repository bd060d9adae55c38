"""Decibel arithmetic, Jones calculus and weak-coherent-pulse photon statistics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SQRT_HALF = 1.0 / math.sqrt(2.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(ratio: float) -> float:
    if not ratio > 0.0:
        raise ValueError(f"linear_to_db needs a positive ratio, got {ratio!r}")
    return 10.0 * math.log10(ratio)


def attenuate(mu: float, loss_db: float) -> float:
    """Mean photon number after `loss_db` of (positive) attenuation."""
    if loss_db < 0.0:
        raise ValueError(f"loss_db must be >= 0, got {loss_db!r}")
    return mu * 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class JonesVector:
    e_h: complex
    e_v: complex

    @property
    def power(self) -> float:
        return abs(self.e_h) ** 2 + abs(self.e_v) ** 2

    def normalize(self) -> JonesVector:
        p = self.power
        if p == 0.0:
            return self
        s = 1.0 / math.sqrt(p)
        return JonesVector(self.e_h * s, self.e_v * s)

    def inner(self, other: JonesVector) -> complex:
        """<self|other>."""
        return self.e_h.conjugate() * other.e_h + self.e_v.conjugate() * other.e_v

    def as_array(self) -> np.ndarray:
        return np.array([self.e_h, self.e_v], dtype=complex)

    @classmethod
    def from_array(cls, a) -> JonesVector:
        return cls(complex(a[0]), complex(a[1]))


def power(v: JonesVector) -> float:
    return v.power


def normalize(v: JonesVector) -> JonesVector:
    return v.normalize()


@dataclass(frozen=True)
class JonesMatrix:
    m_hh: complex
    m_hv: complex
    m_vh: complex
    m_vv: complex

    @classmethod
    def identity(cls) -> JonesMatrix:
        return cls(1, 0, 0, 1)

    @classmethod
    def from_array(cls, a) -> JonesMatrix:
        a = np.asarray(a, dtype=complex)
        return cls(complex(a[0, 0]), complex(a[0, 1]), complex(a[1, 0]), complex(a[1, 1]))

    def as_array(self) -> np.ndarray:
        return np.array([[self.m_hh, self.m_hv], [self.m_vh, self.m_vv]], dtype=complex)

    def __matmul__(self, other: JonesMatrix) -> JonesMatrix:
        return JonesMatrix.from_array(self.as_array() @ other.as_array())

    def dagger(self) -> JonesMatrix:
        return JonesMatrix(
            self.m_hh.conjugate(), self.m_vh.conjugate(), self.m_hv.conjugate(), self.m_vv.conjugate()
        )

    def inverse(self) -> JonesMatrix:
        return JonesMatrix.from_array(np.linalg.inv(self.as_array()))

    def unitarity_error(self) -> float:
        """Max-abs deviation of M^dagger M from the identity."""
        a = self.as_array()
        return float(np.max(np.abs(a.conj().T @ a - np.eye(2))))


def apply(m: JonesMatrix, v: JonesVector) -> JonesVector:
    return JonesVector(m.m_hh * v.e_h + m.m_hv * v.e_v, m.m_vh * v.e_h + m.m_vv * v.e_v)


def rotation(angle: float) -> JonesMatrix:
    """Real rotation of the polarization frame by `angle` radians."""
    c, s = math.cos(angle), math.sin(angle)
    return JonesMatrix(c, -s, s, c)


def rotation_unitary(alpha: float, beta: float, theta: float) -> JonesMatrix:
    """General SU(2)-up-to-phase element: diag(e^{i alpha}, e^{-i alpha}) R(theta) diag(e^{i beta}, e^{-i beta})."""
    left = np.diag([np.exp(1j * alpha), np.exp(-1j * alpha)])
    right = np.diag([np.exp(1j * beta), np.exp(-1j * beta)])
    return JonesMatrix.from_array(left @ rotation(theta).as_array() @ right)


class Basis(enum.Enum):
    RECTILINEAR = "rectilinear"
    DIAGONAL = "diagonal"


class PolarizationState(enum.Enum):
    H = "H"
    V = "V"
    D = "D"
    A = "A"

    @property
    def basis(self) -> Basis:
        return Basis.RECTILINEAR if self in (PolarizationState.H, PolarizationState.V) else Basis.DIAGONAL

    @property
    def angle_deg(self) -> float:
        return _ANGLES[self]


_ANGLES = {
    PolarizationState.H: 0.0,
    PolarizationState.V: 90.0,
    PolarizationState.D: 45.0,
    PolarizationState.A: -45.0,
}

# H, V, D, A in this order everywhere arrays are indexed by state.
STATES = (PolarizationState.H, PolarizationState.V, PolarizationState.D, PolarizationState.A)


def state_to_jones(s: PolarizationState) -> JonesVector:
    if s is PolarizationState.H:
        return JonesVector(1.0, 0.0)
    if s is PolarizationState.V:
        return JonesVector(0.0, 1.0)
    if s is PolarizationState.D:
        return JonesVector(SQRT_HALF, SQRT_HALF)
    return JonesVector(SQRT_HALF, -SQRT_HALF)


def projection_probability(analyzer: JonesVector, input: JonesVector) -> float:
    """Born-rule transmission of `input` through a polarizer aligned to `analyzer`."""
    pa, pi = analyzer.power, input.power
    if pa == 0.0 or pi == 0.0:
        raise ValueError("projection_probability is undefined for a zero-power Jones vector")
    p = abs(analyzer.inner(input)) ** 2 / (pa * pi)
    return min(max(p, 0.0), 1.0)


def poisson_pmf(mu: float, n: int) -> float:
    if mu < 0.0:
        raise ValueError(f"mean photon number must be >= 0, got {mu!r}")
    if n < 0:
        return 0.0
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - math.lgamma(n + 1))


def poisson_sample(mu: float, rng: np.random.Generator) -> int:
    """Exact inversion by sequential search; one uniform per draw."""
    if mu < 0.0:
        raise ValueError(f"mean photon number must be >= 0, got {mu!r}")
    if mu >= 10.0:
        return int(rng.poisson(mu))
    u = rng.random()
    n = 0
    p = math.exp(-mu)
    cdf = p
    while u > cdf:
        n += 1
        p *= mu / n
        cdf += p
        if p == 0.0:
            break
    return n


def poisson_sample_array(mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized sequential-search inversion, for many small means at once."""
    mu = np.asarray(mu, dtype=float)
    u = rng.random(mu.shape)
    p = np.exp(-mu)
    cdf = p.copy()
    n = np.zeros(mu.shape, dtype=np.int64)
    active = u > cdf
    k = 0
    while active.any():
        k += 1
        p = p * mu / k
        n[active] += 1
        cdf = cdf + p
        active &= u > cdf
        if k > 200:
            break
    return n


def multi_photon_probability(mu: float) -> float:
    """P(n >= 2) for a Poisson source, computed without cancellation at small mu."""
    if mu < 0.0:
        raise ValueError(f"mean photon number must be >= 0, got {mu!r}")
    # 1 - e^-mu (1 + mu) = -expm1(-mu) - mu e^-mu
    return -math.expm1(-mu) - mu * math.exp(-mu)
