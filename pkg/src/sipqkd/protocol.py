"""BB84 layer: encoding, random patterns, sifting, QBER and asymptotic key rates."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .devices import IntensityClass
from .optics import Basis, PolarizationState, multi_photon_probability

H, V, D, A = PolarizationState.H, PolarizationState.V, PolarizationState.D, PolarizationState.A

_ENCODE = {
    (0, Basis.RECTILINEAR): H,
    (1, Basis.RECTILINEAR): V,
    (0, Basis.DIAGONAL): D,
    (1, Basis.DIAGONAL): A,
}
_DECODE = {s: k for k, s in _ENCODE.items()}

# integer codes used by the array paths: basis 0 = rectilinear, 1 = diagonal;
# state index = 2 * basis + bit matches optics.STATES = (H, V, D, A)
BASES = (Basis.RECTILINEAR, Basis.DIAGONAL)


class DataError(ValueError):
    """Inconsistent Alice/Bob record sets."""


def encode(bit: int, basis: Basis) -> PolarizationState:
    return _ENCODE[(int(bit), basis)]


def decode(state: PolarizationState) -> tuple[int, Basis]:
    return _DECODE[state]


@dataclass(frozen=True)
class AliceRecord:
    pulse_index: int
    bit: int
    basis: Basis
    intensity_class: IntensityClass = IntensityClass.SIGNAL

    @property
    def state(self) -> PolarizationState:
        return encode(self.bit, self.basis)


@dataclass(frozen=True)
class BobRecord:
    pulse_index: Optional[int]
    detector: PolarizationState

    @property
    def basis(self) -> Basis:
        return self.detector.basis

    @property
    def bit(self) -> int:
        return decode(self.detector)[0]


def random_pattern_arrays(
    rng: np.random.Generator, n: int, decoy_probability: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(bits, basis codes, intensity classes) as int arrays."""
    if not 0.0 <= decoy_probability <= 1.0:
        raise ValueError(f"decoy_probability must lie in [0, 1], got {decoy_probability}")
    bits = rng.integers(0, 2, n)
    bases = rng.integers(0, 2, n)
    classes = (rng.random(n) < decoy_probability).astype(np.int64)
    return bits, bases, classes


def random_pattern(
    rng: np.random.Generator, n: int, decoy_probability: float = 0.0, start_index: int = 0
) -> list[AliceRecord]:
    bits, bases, classes = random_pattern_arrays(rng, n, decoy_probability)
    return [
        AliceRecord(start_index + i, int(bits[i]), BASES[bases[i]], IntensityClass(int(classes[i])))
        for i in range(n)
    ]


def alternating_pattern(n: int, start_index: int = 0, bit: int = 0, basis: Basis = Basis.DIAGONAL) -> list[AliceRecord]:
    """Signal/decoy alternating at half the repetition rate, fixed polarization."""
    return [
        AliceRecord(start_index + i, bit, basis, IntensityClass((start_index + i) % 2)) for i in range(n)
    ]


def resolve_double_clicks(bob: Iterable[BobRecord], rng: np.random.Generator) -> list[BobRecord]:
    """Squash multi-detector pulses to a single record.

    A pulse that fired detectors in both bases gets a uniformly random basis
    among them; both detectors firing within the chosen basis gives a
    uniformly random bit. Dark clicks with no pulse index pass through.
    """
    by_pulse: dict[int, list[BobRecord]] = defaultdict(list)
    out = []
    for rec in bob:
        if rec.pulse_index is None:
            out.append(rec)
        else:
            by_pulse[rec.pulse_index].append(rec)
    for idx in sorted(by_pulse):
        recs = by_pulse[idx]
        if len(recs) == 1:
            out.append(recs[0])
            continue
        bases = sorted({r.basis for r in recs}, key=BASES.index)
        basis = bases[int(rng.integers(len(bases)))] if len(bases) > 1 else bases[0]
        fired = sorted({r.detector for r in recs if r.basis is basis}, key=lambda s: s.value)
        det = fired[int(rng.integers(len(fired)))] if len(fired) > 1 else fired[0]
        out.append(BobRecord(idx, det))
    return out


def sift(alice: Sequence[AliceRecord], bob: Iterable[BobRecord]) -> list[tuple[int, int]]:
    """(alice bit, bob bit) for every pulse Bob measured in Alice's basis."""
    table: dict[int, AliceRecord] = {}
    for rec in alice:
        if rec.pulse_index in table:
            raise DataError(f"duplicate Alice pulse_index {rec.pulse_index}")
        table[rec.pulse_index] = rec
    seen = set()
    out = []
    for b in bob:
        if b.pulse_index is None:
            continue
        if b.pulse_index in seen:
            raise DataError(f"several Bob records for pulse {b.pulse_index}; resolve double clicks first")
        seen.add(b.pulse_index)
        a = table.get(b.pulse_index)
        if a is None:
            raise DataError(f"Bob record for unknown pulse {b.pulse_index}")
        if a.basis is b.basis:
            out.append((a.bit, b.bit))
    return out


def qber(sifted: Sequence[tuple[int, int]]) -> float:
    if len(sifted) == 0:
        raise ValueError("QBER of an empty sifted key is undefined")
    return sum(1 for a, b in sifted if a != b) / len(sifted)


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"binary entropy needs p in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def shor_preskill_fraction(e: float) -> float:
    return 1.0 - 2.0 * binary_entropy(e)


def shor_preskill_threshold(tol: float = 1e-6) -> float:
    """QBER at which the Shor-Preskill secret fraction crosses zero."""
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if shor_preskill_fraction(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class KeyRate:
    rate: float  # secret bits per emitted pulse
    omega: float  # single-photon fraction of detections
    multi_photon_dominated: bool


def gllp_key_rate(q_mu: float, e_mu: float, mu: float, q: float = 0.5, f: float = 1.0) -> KeyRate:
    """GLLP asymptotic rate for a weak coherent source without decoy states."""
    if not 0.0 < q_mu <= 1.0:
        raise ValueError(f"gain q_mu must lie in (0, 1], got {q_mu}")
    if not 0.0 <= e_mu <= 0.5:
        raise ValueError(f"e_mu must lie in [0, 0.5], got {e_mu}")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"sifting factor q must lie in (0, 1], got {q}")
    if f < 1.0:
        raise ValueError(f"error-correction inefficiency f must be >= 1, got {f}")
    omega = 1.0 - multi_photon_probability(mu) / q_mu
    if omega <= 0.0:
        return KeyRate(0.0, 0.0, True)
    omega = min(omega, 1.0)
    e1 = min(e_mu / omega, 0.5)
    r = q * q_mu * (-f * binary_entropy(e_mu) + omega * (1.0 - binary_entropy(e1)))
    return KeyRate(max(r, 0.0), omega, False)


def gllp_rate_no_decoy(q_mu: float, e_mu: float, mu: float, q: float = 0.5, f: float = 1.0) -> float:
    return gllp_key_rate(q_mu, e_mu, mu, q, f).rate


@dataclass(frozen=True)
class SessionStats:
    pulses_emitted: int
    detections: int
    sifted_bits: int
    errors: int
    qber: float  # nan when nothing was sifted
    raw_rate_bps: float
    sifted_rate_bps: float
    secret_rate_bps: float
    mu_effective: float

    @property
    def qber_defined(self) -> bool:
        return self.sifted_bits > 0


def stats_from_counts(
    pulses_emitted: int,
    detections: int,
    sifted_bits: int,
    errors: int,
    mu: float,
    effective_pulse_rate: float,
    q: float = 0.5,
    f: float = 1.0,
    key_gain: float | None = None,
    key_qber: float | None = None,
    key_pulse_fraction: float = 1.0,
) -> SessionStats:
    """Assemble session statistics from counters.

    `key_gain`/`key_qber` override the gain and error rate fed to the key-rate
    formula (used to restrict it to signal-class pulses);
    `key_pulse_fraction` is the share of emitted pulses they refer to.
    """
    if not errors <= sifted_bits <= detections:
        raise DataError("counters violate errors <= sifted <= detections")
    if pulses_emitted <= 0:
        return SessionStats(0, detections, sifted_bits, errors, math.nan, 0.0, 0.0, 0.0, mu)
    duration_s = pulses_emitted / effective_pulse_rate
    e = errors / sifted_bits if sifted_bits else math.nan
    gain = detections / pulses_emitted if key_gain is None else key_gain
    e_key = e if key_qber is None else key_qber
    secret = 0.0
    if gain > 0 and not math.isnan(e_key):
        rate = gllp_rate_no_decoy(min(gain, 1.0), min(e_key, 0.5), mu, q, f)
        secret = rate * effective_pulse_rate * key_pulse_fraction
    return SessionStats(
        pulses_emitted=pulses_emitted,
        detections=detections,
        sifted_bits=sifted_bits,
        errors=errors,
        qber=e,
        raw_rate_bps=detections / duration_s,
        sifted_rate_bps=sifted_bits / duration_s,
        secret_rate_bps=secret,
        mu_effective=mu,
    )


def session_stats(
    alice: Sequence[AliceRecord],
    bob: Sequence[BobRecord],
    sifted: Sequence[tuple[int, int]],
    effective_pulse_rate: float,
    mu: float,
    q: float = 0.5,
    f: float = 1.0,
) -> SessionStats:
    errors = sum(1 for a, b in sifted if a != b)
    return stats_from_counts(len(alice), len(bob), len(sifted), errors, mu, effective_pulse_rate, q, f)
