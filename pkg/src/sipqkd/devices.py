"""Physical models of the transmitter chip stages.

Four stages are modelled: the pulse-carving microring, the intensity
modulating microring, a four-stage MZI variable optical attenuator and the
MZI + polarization rotator-combiner (PRC) polarization modulator.
`transmitter_emit` chains them into a train of weak coherent pulses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .optics import (
    STATES,
    JonesVector,
    PolarizationState,
    db_to_linear,
    linear_to_db,
)

SPEED_OF_LIGHT = 299_792_458.0  # m/s
FWHM_PER_SIGMA = math.sqrt(8.0 * math.log(2.0))  # 2.3548...


class ConfigError(ValueError):
    """Inconsistent device or timing configuration."""


# --------------------------------------------------------------------------
# Microring
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RingParams:
    fsr_nm: float = 0.65
    q_loaded: float = 9.5e5
    center_wavelength_nm: float = 1549.9
    floor_db: float = -27.0
    volts_per_fsr: float = 1.0
    insertion_loss_db: float = 0.0

    def __post_init__(self):
        if not self.fsr_nm > 0:
            raise ConfigError(f"fsr_nm must be > 0, got {self.fsr_nm}")
        if not self.q_loaded > 0:
            raise ConfigError(f"q_loaded must be > 0, got {self.q_loaded}")
        if not self.floor_db <= -20.0:
            raise ConfigError(f"floor_db must be <= -20 dB, got {self.floor_db}")
        if self.volts_per_fsr == 0:
            raise ConfigError("volts_per_fsr must be nonzero")
        if self.insertion_loss_db < 0:
            raise ConfigError(f"insertion_loss_db must be >= 0, got {self.insertion_loss_db}")


def ring_coefficients(r: RingParams) -> tuple[float, float]:
    """Round-trip amplitude `a` and self-coupling `t` of the all-pass ring.

    The product a*t is fixed by the loaded linewidth lambda/Q through the
    Lorentzian relation (1 - a t) / sqrt(a t) = pi * (lambda/Q) / FSR. The ring
    sits slightly under-coupled (a > t) with a - t chosen so the on-resonance
    transmission (a - t)^2 / (1 - a t)^2 equals the floor.
    """
    k = math.pi * (r.center_wavelength_nm / r.q_loaded) / r.fsr_nm
    s = (-k + math.sqrt(k * k + 4.0)) / 2.0
    p = s * s
    d = math.sqrt(db_to_linear(r.floor_db)) * (1.0 - p)
    a = (d + math.sqrt(d * d + 4.0 * p)) / 2.0
    t = p / a
    return a, t


def _round_trip_phase(r: RingParams, detune_nm, volts):
    return 2.0 * np.pi * (np.asarray(detune_nm) / r.fsr_nm) + 2.0 * np.pi * (np.asarray(volts) / r.volts_per_fsr)


def _all_pass(a: float, t: float, phi):
    c = np.cos(phi)
    return (a * a + t * t - 2.0 * a * t * c) / (1.0 + (a * t) ** 2 - 2.0 * a * t * c)


def ring_transmission(r: RingParams, detune_nm, volts=0.0):
    """Through-port power transmission of the ring; scalar or array input."""
    a, t = ring_coefficients(r)
    trans = _all_pass(a, t, _round_trip_phase(r, detune_nm, volts))
    trans = trans * db_to_linear(-r.insertion_loss_db)
    out = np.clip(trans, db_to_linear(r.floor_db), 1.0)
    return float(out) if np.ndim(out) == 0 else out


def ring_spectrum(r: RingParams, wavelengths, volts: float = 0.0) -> np.ndarray:
    wl = np.asarray(wavelengths, dtype=float)
    if wl.size > 1 and np.any(np.diff(wl) < 0):
        raise ValueError("wavelength list must be sorted")
    return np.atleast_1d(ring_transmission(r, wl - r.center_wavelength_nm, volts))


def static_extinction_db(r: RingParams, volts: float) -> float:
    """On-resonance extinction ratio between `volts` applied and no bias."""
    return linear_to_db(ring_transmission(r, 0.0, volts) / ring_transmission(r, 0.0, 0.0))


def calibrate_volts_per_fsr(r: RingParams, volts: float = 0.05, er_db: float = 25.6) -> RingParams:
    """Fix the PIN-diode phase slope so `volts` gives `er_db` of static extinction."""
    a, t = ring_coefficients(r)
    il = db_to_linear(-r.insertion_loss_db)
    target = ring_transmission(r, 0.0, 0.0) * db_to_linear(er_db) / il
    t_max = (a + t) ** 2 / (1.0 + a * t) ** 2
    if not target < t_max:
        raise ConfigError(f"{er_db} dB static extinction exceeds the ring's contrast")
    # invert 1 - T = (1-a^2)(1-t^2) / ((1-at)^2 + 2at(1 - cos phi))
    depth = 1.0 - target
    cos_phi = 1.0 - ((1.0 - a * a) * (1.0 - t * t) / depth - (1.0 - a * t) ** 2) / (2.0 * a * t)
    phi = math.acos(max(-1.0, min(1.0, cos_phi)))
    return replace(r, volts_per_fsr=volts * 2.0 * math.pi / phi)


def cavity_photon_lifetime(r: RingParams) -> float:
    """Photon lifetime Q*lambda/(2*pi*c) in ns."""
    return r.q_loaded * r.center_wavelength_nm * 1e-9 / (2.0 * math.pi * SPEED_OF_LIGHT) * 1e9


CHIP_RING = calibrate_volts_per_fsr(RingParams())
CHIP_DYNAMIC_ER_DB = 20.0


# --------------------------------------------------------------------------
# Pulse shape and jitter
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PulseShapeParams:
    drive_width_ns: float = 1.0
    fwhm_ns: float = 2.4
    jitter_fwhm_ns: float = 0.9
    rise_tau_ns: float = 0.0
    fall_tau_ns: float = 0.0

    def __post_init__(self):
        for name in ("drive_width_ns", "fwhm_ns"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("jitter_fwhm_ns", "rise_tau_ns", "fall_tau_ns"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.fwhm_ns < self.drive_width_ns:
            raise ConfigError("fwhm_ns must be >= drive_width_ns")


def _rise(t, w, tau):
    if tau == 0.0:
        return np.where(t >= 0.0, 1.0, 0.0)
    return -np.expm1(-t / tau) / -math.expm1(-w / tau)


def envelope_shape(p: PulseShapeParams, t_ns) -> np.ndarray:
    """Square drive of width w smoothed by exponential rise/fall; peak 1 at t = w."""
    t = np.asarray(t_ns, dtype=float)
    w = p.drive_width_ns
    out = np.zeros_like(t)
    on = (t >= 0.0) & (t <= w)
    out[on] = _rise(t[on], w, p.rise_tau_ns)
    after = t > w
    if p.fall_tau_ns == 0.0:
        out[after] = 0.0
    else:
        out[after] = np.exp(-(t[after] - w) / p.fall_tau_ns)
    return out


def analytic_fwhm(p: PulseShapeParams) -> float:
    w = p.drive_width_ns
    if p.rise_tau_ns == 0.0:
        t1 = 0.0
    else:
        # rise reaches half of its (normalized) end value
        end = -math.expm1(-w / p.rise_tau_ns)
        t1 = -p.rise_tau_ns * math.log1p(-end / 2.0)
    t2 = w + p.fall_tau_ns * math.log(2.0)
    return t2 - t1


def calibrate_pulse_shape(p: PulseShapeParams, tol: float = 1e-10) -> PulseShapeParams:
    """Choose equal rise/fall constants so the envelope FWHM equals ``p.fwhm_ns``."""
    if p.fwhm_ns == p.drive_width_ns:
        return replace(p, rise_tau_ns=0.0, fall_tau_ns=0.0)
    lo, hi = 0.0, 1.0
    while analytic_fwhm(replace(p, rise_tau_ns=hi, fall_tau_ns=hi)) < p.fwhm_ns:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if analytic_fwhm(replace(p, rise_tau_ns=mid, fall_tau_ns=mid)) < p.fwhm_ns:
            lo = mid
        else:
            hi = mid
    tau = 0.5 * (lo + hi)
    return replace(p, rise_tau_ns=tau, fall_tau_ns=tau)


def pulse_envelope(p: PulseShapeParams, t_ns, extinction_db: float | None = None) -> np.ndarray:
    """Normalized optical envelope on a sample grid.

    With `extinction_db` set, the modulator's off-state leakage
    10^(-extinction_db/10) is a hard floor: the carrier-limited tail only
    shows where it rises above the leakage.
    """
    t = np.asarray(t_ns, dtype=float)
    if t.size > 1 and np.max(np.diff(t)) > 0.1 + 1e-12:
        raise ValueError("pulse_envelope needs a grid step <= 0.1 ns")
    shape = envelope_shape(p, t)
    if extinction_db is None:
        return shape
    return np.maximum(shape, db_to_linear(-extinction_db))


def envelope_fwhm(t_ns, env) -> float:
    """FWHM of a sampled single-peaked envelope by linear interpolation."""
    t = np.asarray(t_ns, dtype=float)
    y = np.asarray(env, dtype=float)
    half = y.max() / 2.0
    above = np.nonzero(y >= half)[0]
    i0, i1 = above[0], above[-1]
    if i0 == 0 or i1 == len(y) - 1:
        raise ValueError("envelope does not fall below half maximum inside the grid")
    left = t[i0 - 1] + (half - y[i0 - 1]) * (t[i0] - t[i0 - 1]) / (y[i0] - y[i0 - 1])
    right = t[i1] + (y[i1] - half) * (t[i1 + 1] - t[i1]) / (y[i1] - y[i1 + 1])
    return float(right - left)


def jitter_sigma(p: PulseShapeParams) -> float:
    return p.jitter_fwhm_ns / FWHM_PER_SIGMA


def sample_jitter(p: PulseShapeParams, rng: np.random.Generator) -> float:
    if p.jitter_fwhm_ns == 0.0:
        return 0.0
    return float(rng.normal(0.0, jitter_sigma(p)))


CHIP_PULSE = calibrate_pulse_shape(PulseShapeParams())


# --------------------------------------------------------------------------
# Variable optical attenuator
# --------------------------------------------------------------------------

CHIP_VOA_MAXIMA = (40.3, 44.0, 53.3, 46.4)


@dataclass(frozen=True)
class VoaParams:
    stage_max_attenuation_db: tuple[float, ...] = CHIP_VOA_MAXIMA
    stage_phase: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "stage_max_attenuation_db", tuple(float(x) for x in self.stage_max_attenuation_db))
        object.__setattr__(self, "stage_phase", tuple(float(x) for x in self.stage_phase))
        if len(self.stage_max_attenuation_db) != len(self.stage_phase):
            raise ConfigError("VOA needs one phase per stage")
        for m in self.stage_max_attenuation_db:
            if m < 40.0:
                raise ConfigError(f"VOA stage maximum attenuation must be >= 40 dB, got {m}")
        for ph in self.stage_phase:
            if not 0.0 <= ph <= math.pi:
                raise ConfigError(f"VOA stage phase must lie in [0, pi], got {ph}")


def voa_stage_transmission(max_att_db: float, phase: float) -> float:
    """Through-port transmission (dB, <= 0) of one balanced MZI with finite extinction."""
    if not 0.0 <= phase <= math.pi:
        raise ValueError(f"VOA phase must lie in [0, pi], got {phase}")
    eps = db_to_linear(-max_att_db)
    lin = (1.0 - eps) * math.cos(phase / 2.0) ** 2 + eps
    return linear_to_db(lin)


def voa_total(v: VoaParams) -> float:
    return sum(voa_stage_transmission(m, ph) for m, ph in zip(v.stage_max_attenuation_db, v.stage_phase))


def voa_solve(v: VoaParams, target_db: float, tol_db: float = 1e-6) -> tuple[float, ...]:
    """Stage phases reaching `target_db` of attenuation.

    Stages are filled in order; the first stage that cannot be fully used
    is set by bisection and the remaining stages stay at zero phase.
    """
    total_max = sum(v.stage_max_attenuation_db)
    if not 0.0 <= target_db <= total_max + 1e-12:
        raise ValueError(f"VOA target {target_db} dB outside [0, {total_max:.1f}] dB")
    phases = [0.0] * len(v.stage_phase)
    remaining = target_db
    for i, m in enumerate(v.stage_max_attenuation_db):
        if remaining <= 0.0:
            break
        if remaining >= m:
            phases[i] = math.pi
            remaining -= m
            continue
        lo, hi = 0.0, math.pi
        while hi - lo > 1e-15:
            mid = 0.5 * (lo + hi)
            att = -voa_stage_transmission(m, mid)
            if abs(att - remaining) < tol_db:
                lo = hi = mid
                break
            if att < remaining:
                lo = mid
            else:
                hi = mid
        phases[i] = 0.5 * (lo + hi)
        remaining = 0.0
    return tuple(phases)


# --------------------------------------------------------------------------
# Polarization modulator
# --------------------------------------------------------------------------

# (theta, delta) for the ideal emitted state (cos theta, e^{i delta} sin theta)
STATE_SETTINGS = {
    PolarizationState.H: (0.0, 0.0),
    PolarizationState.V: (math.pi / 2.0, 0.0),
    PolarizationState.D: (math.pi / 4.0, 0.0),
    PolarizationState.A: (math.pi / 4.0, math.pi),
}


@dataclass(frozen=True)
class PolModParams:
    theta: float = 0.0
    delta: float = 0.0
    pdl_db: float = 0.0
    per_floor_db: float = math.inf

    def __post_init__(self):
        if self.pdl_db < 0:
            raise ConfigError(f"pdl_db must be >= 0, got {self.pdl_db}")
        if not self.per_floor_db >= 30.0:
            raise ConfigError(f"per_floor_db must be >= 30 dB, got {self.per_floor_db}")


def leakage_fraction(per_db: float) -> float:
    """Orthogonal-power fraction giving an extinction ratio of `per_db`."""
    if math.isinf(per_db):
        return 0.0
    return 1.0 / (1.0 + db_to_linear(per_db))


def polmod_state(p: PolModParams) -> JonesVector:
    """Output at the modulator's current (theta, delta) setting."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    ph = complex(math.cos(p.delta), math.sin(p.delta))
    lam = leakage_fraction(p.per_floor_db)
    keep, leak = math.sqrt(1.0 - lam), math.sqrt(lam)
    e_h = keep * c + leak * s
    e_v = ph * (keep * s - leak * c)
    return JonesVector(complex(e_h), e_v * 10.0 ** (-p.pdl_db / 20.0))


def polmod_output(p: PolModParams, target: PolarizationState) -> JonesVector:
    theta, delta = STATE_SETTINGS[target]
    return polmod_state(replace(p, theta=theta, delta=delta))


def polmod_power_variation(p: PolModParams) -> float:
    powers = [polmod_output(p, s).power for s in STATES]
    return linear_to_db(max(powers) / min(powers))


def calibrate_pdl(p: PolModParams, target_db: float = 0.9) -> PolModParams:
    """Bisect pdl_db until the four-state power variation equals `target_db`."""
    lo, hi = 0.0, 2.0 * target_db + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if polmod_power_variation(replace(p, pdl_db=mid)) < target_db:
            lo = mid
        else:
            hi = mid
    return replace(p, pdl_db=0.5 * (lo + hi))


CHIP_POLMOD = calibrate_pdl(PolModParams(per_floor_db=30.0), 0.9)


# --------------------------------------------------------------------------
# Transmitter assembly
# --------------------------------------------------------------------------


class IntensityClass(enum.IntEnum):
    SIGNAL = 0
    DECOY = 1


@dataclass(frozen=True)
class IdealExternal:
    """External modulator with a fixed extinction ratio and unit on-state transmission."""

    er_db: float = 30.0


@dataclass(frozen=True)
class RingCarver:
    ring: RingParams = CHIP_RING
    drive_volts: float = 0.05
    dynamic_er_db: float = CHIP_DYNAMIC_ER_DB


Carver = Union[IdealExternal, RingCarver]


def carver_on_transmission(c: Carver) -> float:
    if isinstance(c, IdealExternal):
        return 1.0
    return ring_transmission(c.ring, 0.0, c.drive_volts)


def carver_extinction_db(c: Carver) -> float:
    return c.er_db if isinstance(c, IdealExternal) else c.dynamic_er_db


@dataclass(frozen=True)
class BurstConfig:
    pulses_per_burst: int = 1000
    rep_rate_hz: float = 10e6
    burst_clock_hz: float = 9.71e3
    carver: Carver = field(default_factory=IdealExternal)
    # signal mean photon number at Alice's output; None derives it from the device chain
    target_mu: float | None = 0.024
    source_mu: float = 38.04
    voa: VoaParams = field(default_factory=VoaParams)
    voa_target_db: float = 27.0
    alice_output_loss_db: float = 5.0
    decoy_mu_ratio: float = 0.009 / 0.129
    pulse: PulseShapeParams = CHIP_PULSE
    polmod: PolModParams = CHIP_POLMOD

    def __post_init__(self):
        if self.pulses_per_burst < 1:
            raise ConfigError("pulses_per_burst must be >= 1")
        if not (self.rep_rate_hz > 0 and self.burst_clock_hz > 0):
            raise ConfigError("rep_rate_hz and burst_clock_hz must be > 0")
        if self.pulses_per_burst / self.rep_rate_hz > 1.0 / self.burst_clock_hz * (1 + 1e-12):
            raise ConfigError(
                f"burst of {self.pulses_per_burst} pulses at {self.rep_rate_hz:g} Hz is longer "
                f"than the {self.burst_clock_hz:g} Hz clock period"
            )
        if self.target_mu is not None and self.target_mu < 0:
            raise ConfigError("target_mu must be >= 0")
        if self.source_mu < 0:
            raise ConfigError("source_mu must be >= 0")
        if not 0.0 <= self.decoy_mu_ratio <= 1.0:
            raise ConfigError("decoy_mu_ratio must lie in [0, 1]")

    @property
    def effective_pulse_rate(self) -> float:
        return self.pulses_per_burst * self.burst_clock_hz

    @property
    def burst_period_ns(self) -> float:
        return 1e9 / self.burst_clock_hz

    @property
    def pulse_period_ns(self) -> float:
        return 1e9 / self.rep_rate_hz


def chain_signal_mu(cfg: BurstConfig) -> float:
    """Signal mu propagated from the source through carver, VOA and output losses."""
    phases = voa_solve(cfg.voa, cfg.voa_target_db)
    voa_db = voa_total(replace(cfg.voa, stage_phase=phases))
    return (
        cfg.source_mu
        * carver_on_transmission(cfg.carver)
        * db_to_linear(voa_db)
        * db_to_linear(-cfg.alice_output_loss_db)
    )


def class_mu(cfg: BurstConfig) -> tuple[float, float]:
    """(signal, decoy) mean photon numbers at Alice's output."""
    signal = cfg.target_mu if cfg.target_mu is not None else chain_signal_mu(cfg)
    # the modulator cannot carve below its own extinction floor
    level = max(cfg.decoy_mu_ratio, db_to_linear(-carver_extinction_db(cfg.carver)))
    return signal, signal * level


def state_jones_table(cfg: BurstConfig) -> tuple[JonesVector, ...]:
    return tuple(polmod_output(cfg.polmod, s) for s in STATES)


@dataclass(frozen=True)
class OpticalPulse:
    index: int
    emit_time_ns: float
    mu: float
    jones: JonesVector
    fwhm_ns: float
    intensity_class: IntensityClass


@dataclass
class PulseTrain:
    """Column-wise pulse data; state indexes `optics.STATES`."""

    index: np.ndarray
    emit_time_ns: np.ndarray
    mu: np.ndarray
    state: np.ndarray
    intensity_class: np.ndarray

    def __len__(self):
        return len(self.index)


def nominal_times_ns(cfg: BurstConfig, index: np.ndarray) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    burst, slot = np.divmod(index, cfg.pulses_per_burst)
    return burst * cfg.burst_period_ns + slot * cfg.pulse_period_ns


def emit_train(
    cfg: BurstConfig,
    states: np.ndarray,
    classes: np.ndarray,
    rng: np.random.Generator,
    start_index: int = 0,
) -> PulseTrain:
    states = np.asarray(states, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    n = len(states)
    index = np.arange(start_index, start_index + n, dtype=np.int64)
    times = nominal_times_ns(cfg, index)
    if cfg.pulse.jitter_fwhm_ns > 0:
        times = times + rng.normal(0.0, jitter_sigma(cfg.pulse), n)
    signal, decoy = class_mu(cfg)
    mu = np.where(classes == IntensityClass.DECOY, decoy, signal)
    return PulseTrain(index, times, mu, states, classes)


def transmitter_emit(cfg: BurstConfig, pattern: Sequence, rng: np.random.Generator, start_index: int = 0) -> list[OpticalPulse]:
    """Emit one pulse per pattern entry.

    Each entry needs `state` (a PolarizationState) and `intensity_class`
    attributes; `protocol.AliceRecord` provides both.
    """
    states = np.array([STATES.index(rec.state) for rec in pattern], dtype=np.int64)
    classes = np.array([int(rec.intensity_class) for rec in pattern], dtype=np.int64)
    train = emit_train(cfg, states, classes, rng, start_index)
    table = state_jones_table(cfg)
    return [
        OpticalPulse(
            index=int(train.index[i]),
            emit_time_ns=float(train.emit_time_ns[i]),
            mu=float(train.mu[i]),
            jones=table[train.state[i]],
            fwhm_ns=cfg.pulse.fwhm_ns,
            intensity_class=IntensityClass(int(train.intensity_class[i])),
        )
        for i in range(len(train))
    ]
