"""Fiber channel, passive-basis receiver, SPAD bank and time-interval analyzer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .devices import OpticalPulse
from .optics import (
    STATES,
    Basis,
    JonesMatrix,
    PolarizationState,
    apply,
    attenuate,
    db_to_linear,
    projection_probability,
    rotation,
    rotation_unitary,
    state_to_jones,
)

Detector = PolarizationState

_ANALYZERS = {s: state_to_jones(s) for s in STATES}


class SequencingError(ValueError):
    """Pulse times presented to a detector bank out of order."""


@dataclass(frozen=True)
class ChannelParams:
    loss_db: float = 6.1
    rotation: JonesMatrix = field(default_factory=JonesMatrix.identity)
    length_km: float = 5.0

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError(f"channel loss_db must be >= 0, got {self.loss_db}")
        if self.rotation.unitarity_error() > 1e-12:
            raise ValueError("channel rotation must be unitary")


def make_channel(seed: int, loss_db: float, length_km: float = 5.0) -> ChannelParams:
    """Channel with a Haar-random polarization rotation drawn from `seed`."""
    rng = np.random.default_rng(seed)
    alpha, beta = rng.uniform(0.0, 2.0 * math.pi, 2)
    # |U_hh|^2 = cos^2(theta) is uniform on [0, 1] under the Haar measure
    theta = math.acos(math.sqrt(rng.random()))
    return ChannelParams(loss_db, rotation_unitary(alpha, beta, theta), length_km)


def channel_apply(c: ChannelParams, p: OpticalPulse) -> OpticalPulse:
    return replace(p, mu=attenuate(p.mu, c.loss_db), jones=apply(c.rotation, p.jones))


@dataclass(frozen=True)
class ReceiverParams:
    tbs_split: float = 0.5
    pbs_extinction_db: float = 30.0
    compensation: JonesMatrix = field(default_factory=JonesMatrix.identity)

    def __post_init__(self):
        if not 0.0 <= self.tbs_split <= 1.0:
            raise ValueError(f"tbs_split must lie in [0, 1], got {self.tbs_split}")
        if self.compensation.unitarity_error() > 1e-12:
            raise ValueError("receiver compensation must be unitary")

    def path_probability(self, basis: Basis) -> float:
        return self.tbs_split if basis is Basis.RECTILINEAR else 1.0 - self.tbs_split


def set_compensation(r: ReceiverParams, c: ChannelParams, misalignment_rad: float = 0.0) -> ReceiverParams:
    """Align the receiver to undo the channel rotation.

    A nonzero `misalignment_rad` leaves a residual real rotation after the
    compensation, leaking sin^2(misalignment) into the orthogonal detector.
    """
    comp = c.rotation.dagger()
    if misalignment_rad:
        comp = rotation(misalignment_rad) @ comp
    return replace(r, compensation=comp)


@dataclass(frozen=True)
class SpadParams:
    efficiency: float = 0.2
    dead_time_us: float = 15.0
    dark_counts_per_s: float = 500.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dead_time_us < 0:
            raise ValueError(f"dead_time_us must be >= 0, got {self.dead_time_us}")
        if self.dark_counts_per_s < 0:
            raise ValueError(f"dark_counts_per_s must be >= 0, got {self.dark_counts_per_s}")

    @property
    def dead_time_ns(self) -> float:
        return self.dead_time_us * 1000.0


@dataclass(frozen=True)
class DetectionEvent:
    detector: Detector
    time_ns: float
    pulse_index: Optional[int]


def click_probabilities(r: ReceiverParams, p: OpticalPulse, s: SpadParams) -> dict[Detector, float]:
    """Per-detector click probability for one pulse (dark counts excluded)."""
    v = apply(r.compensation, p.jones)
    mu = p.mu * v.power
    if mu <= 0.0:
        return {d: 0.0 for d in STATES}
    p_click = -math.expm1(-mu * s.efficiency)
    leak = 0.0 if math.isinf(r.pbs_extinction_db) else db_to_linear(-r.pbs_extinction_db)
    out = {}
    for d in STATES:
        proj = projection_probability(_ANALYZERS[d], v)
        folded = proj * (1.0 - leak) + (1.0 - proj) * leak
        out[d] = r.path_probability(d.basis) * folded * p_click
    return out


def dark_count_times(rate_per_s: float, t0_ns: float, t1_ns: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted Poisson-process arrival times in [t0, t1)."""
    span = t1_ns - t0_ns
    if rate_per_s <= 0.0 or span <= 0.0:
        return np.empty(0)
    n = rng.poisson(rate_per_s * span * 1e-9)
    return np.sort(t0_ns + span * rng.random(n))


class SpadBank:
    """Four SPADs with their dead-time registers.

    One bank belongs to one simulation worker; events must be fed in
    nondecreasing time order.
    """

    def __init__(self, spads: SpadParams | Mapping[Detector, SpadParams]):
        if isinstance(spads, SpadParams):
            spads = {d: spads for d in STATES}
        self.spads = dict(spads)
        self.last_event_ns: dict[Detector, float] = {d: -math.inf for d in STATES}
        self.clock_ns = -math.inf

    def _gate(self, d: Detector, t: float) -> bool:
        if t - self.last_event_ns[d] >= self.spads[d].dead_time_ns:
            self.last_event_ns[d] = t
            return True
        return False

    def detect(
        self,
        probabilities: Mapping[Detector, float],
        time_ns: float,
        rng: np.random.Generator,
        pulse_index: int | None = None,
    ) -> list[DetectionEvent]:
        if time_ns < self.clock_ns:
            raise SequencingError(f"pulse at {time_ns} ns arrived after {self.clock_ns} ns")
        start = self.clock_ns if math.isfinite(self.clock_ns) else time_ns
        self.clock_ns = time_ns
        u = rng.random(len(STATES))
        candidates = []
        for k, d in enumerate(STATES):
            for t in dark_count_times(self.spads[d].dark_counts_per_s, start, time_ns, rng):
                candidates.append((t, k, None))
            if u[k] < probabilities.get(d, 0.0):
                candidates.append((time_ns, k, pulse_index))
        candidates.sort(key=lambda c: (c[0], c[1]))
        events = []
        for t, k, idx in candidates:
            d = STATES[k]
            if self._gate(d, t):
                events.append(DetectionEvent(d, float(t), idx))
        return events


def spad_detect(
    probabilities: Mapping[Detector, float],
    time_ns: float,
    bank: SpadBank,
    rng: np.random.Generator,
    pulse_index: int | None = None,
) -> list[DetectionEvent]:
    return bank.detect(probabilities, time_ns, rng, pulse_index)


def dead_time_mask(times_ns: np.ndarray, dead_ns: float) -> np.ndarray:
    """Non-paralyzable dead-time filter over one detector's sorted candidate times."""
    t = np.asarray(times_ns, dtype=float)
    keep = np.zeros(len(t), dtype=bool)
    if len(t) == 0:
        return keep
    if np.any(np.diff(t) < 0):
        raise SequencingError("candidate times must be sorted")
    if dead_ns <= 0.0:
        keep[:] = True
        return keep
    i = 0
    n = len(t)
    while i < n:
        keep[i] = True
        # the next event must be at least dead_ns later; always advance past i
        j = int(np.searchsorted(t, t[i] + dead_ns, side="left"))
        while j < n and t[j] - t[i] < dead_ns:
            j += 1
        i = max(j, i + 1)
    return keep


def tia_histogram(
    times_ns,
    bin_ns: float,
    period_ns: float | None = None,
    origin_ns: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Bin event times relative to the synchronized clock.

    With `period_ns`, times are folded modulo the period (the TIA's
    time-correlated mode). Returns (bin_start_ns, counts).
    """
    if not bin_ns > 0:
        raise ValueError("bin_ns must be > 0")
    rel = np.asarray(times_ns, dtype=float) - origin_ns
    if period_ns is not None:
        rel = np.mod(rel, period_ns)
        n_bins = int(math.ceil(period_ns / bin_ns - 1e-9))
    elif rel.size:
        if rel.min() < 0:
            raise ValueError("event before the histogram origin")
        n_bins = int(rel.max() // bin_ns) + 1
    else:
        n_bins = 0
    idx = np.minimum((rel // bin_ns).astype(np.int64), max(n_bins - 1, 0))
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return origin_ns + bin_ns * np.arange(n_bins), counts


def assign_pulse_slots(
    times_ns: np.ndarray,
    burst_period_ns: float,
    pulse_period_ns: float,
    pulses_per_burst: int,
    window_ns: float,
) -> np.ndarray:
    """Time-correlate clicks to pulse slots; -1 where no slot lies within +-window/2."""
    t = np.asarray(times_ns, dtype=float)
    burst = np.floor(t / burst_period_ns)
    local = t - burst * burst_period_ns
    slot = np.rint(local / pulse_period_ns)
    hit = (slot >= 0) & (slot < pulses_per_burst) & (np.abs(local - slot * pulse_period_ns) <= window_ns / 2.0)
    out = np.where(hit, burst.astype(np.int64) * pulses_per_burst + slot.astype(np.int64), -1)
    # just before the next burst's first slot
    early = ~hit & (burst_period_ns - local <= window_ns / 2.0)
    out[early] = (burst[early].astype(np.int64) + 1) * pulses_per_burst
    return out
