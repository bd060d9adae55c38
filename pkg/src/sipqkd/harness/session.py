"""End-to-end BB84 sessions, QBER calibration and scenario sweeps."""

from __future__ import annotations

import logging
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import devices, link, protocol
from ..devices import BurstConfig, ConfigError, IntensityClass, OpticalPulse
from ..optics import STATES, linear_to_db, poisson_sample_array
from ..seeding import derive_seed, stream
from .config import ScenarioConfig, key_type, validate, with_value

log = logging.getLogger(__name__)

HISTOGRAM_BIN_NS = 1.0


class StageError(RuntimeError):
    """A module error raised while running one stage of a session."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass
class SessionReport:
    stats: protocol.SessionStats
    config: ScenarioConfig
    detector_counts: dict[str, int]
    qber_by_basis: dict[str, float]
    sifted_by_basis: dict[str, int]
    state_detections: dict[str, int]
    state_pulses: dict[str, int]
    signal_mu: float
    decoy_mu: float
    histograms: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def state_flux_variation_db(self) -> float:
        """Spread (dB) of per-pulse detection probability across Alice's four states."""
        rates = [self.state_detections[s] / self.state_pulses[s] for s in self.state_pulses if self.state_pulses[s]]
        if len(rates) < 2 or min(rates) <= 0:
            return math.nan
        return linear_to_db(max(rates) / min(rates))


# --------------------------------------------------------------------------
# Device assembly from a config
# --------------------------------------------------------------------------


def build_ring(cfg: ScenarioConfig) -> devices.RingParams:
    r = cfg.ring
    base = devices.RingParams(
        fsr_nm=r.fsr_nm,
        q_loaded=r.q_loaded,
        center_wavelength_nm=r.center_wavelength_nm,
        floor_db=r.floor_db,
        insertion_loss_db=r.insertion_loss_db,
    )
    return devices.calibrate_volts_per_fsr(base, r.static_er_volts, r.static_er_db)


def build_polmod(cfg: ScenarioConfig) -> devices.PolModParams:
    base = devices.PolModParams(per_floor_db=cfg.polmod.per_floor_db)
    if cfg.polmod.power_variation_db == 0.0:
        return base
    return devices.calibrate_pdl(base, cfg.polmod.power_variation_db)


def build_pulse(cfg: ScenarioConfig) -> devices.PulseShapeParams:
    p = cfg.pulse
    return devices.calibrate_pulse_shape(
        devices.PulseShapeParams(drive_width_ns=p.drive_width_ns, fwhm_ns=p.fwhm_ns, jitter_fwhm_ns=p.jitter_fwhm_ns)
    )


def build_burst_config(cfg: ScenarioConfig) -> BurstConfig:
    tx = cfg.transmitter
    if tx.carver == "ring":
        carver: devices.Carver = devices.RingCarver(build_ring(cfg), tx.ring_drive_volts, tx.ring_dynamic_er_db)
    else:
        carver = devices.IdealExternal(tx.external_er_db)
    return BurstConfig(
        pulses_per_burst=cfg.timing.pulses_per_burst,
        rep_rate_hz=cfg.timing.rep_rate_hz,
        burst_clock_hz=cfg.timing.burst_clock_hz,
        carver=carver,
        target_mu=tx.target_mu if tx.mode == "direct" else None,
        source_mu=tx.source_mu,
        voa=devices.VoaParams(cfg.voa.stage_max_db, (0.0,) * len(cfg.voa.stage_max_db)),
        voa_target_db=tx.voa_target_db,
        alice_output_loss_db=tx.alice_output_loss_db,
        decoy_mu_ratio=cfg.protocol.decoy_mu_ratio,
        pulse=build_pulse(cfg),
        polmod=build_polmod(cfg),
    )


def build_link(cfg: ScenarioConfig) -> tuple[link.ChannelParams, link.ReceiverParams, link.SpadParams]:
    channel = link.make_channel(derive_seed(cfg.seed, "channel"), cfg.channel.loss_db, cfg.channel.length_km)
    receiver = link.set_compensation(
        link.ReceiverParams(cfg.receiver.tbs_split, cfg.receiver.pbs_extinction_db),
        channel,
        cfg.receiver.misalignment_rad,
    )
    spad = link.SpadParams(cfg.spad.efficiency, cfg.spad.dead_time_us, cfg.spad.dark_counts_per_s)
    return channel, receiver, spad


def click_table(burst: BurstConfig, channel, receiver, spad) -> np.ndarray:
    """P[state, intensity class, detector] for one pulse, via the scalar link model."""
    signal, decoy = devices.class_mu(burst)
    jones = devices.state_jones_table(burst)
    table = np.zeros((len(STATES), 2, len(STATES)))
    for si in range(len(STATES)):
        for ci, mu in enumerate((signal, decoy)):
            pulse = OpticalPulse(0, 0.0, mu, jones[si], burst.pulse.fwhm_ns, IntensityClass(ci))
            probs = link.click_probabilities(receiver, link.channel_apply(channel, pulse), spad)
            table[si, ci] = [probs[d] for d in STATES]
    return table


# --------------------------------------------------------------------------
# Burst work units
# --------------------------------------------------------------------------


@dataclass
class _BurstResult:
    bits: np.ndarray
    bases: np.ndarray
    classes: np.ndarray
    times: np.ndarray
    detectors: np.ndarray
    pulse_index: np.ndarray


def _run_burst(b: int, cfg: ScenarioConfig, burst: BurstConfig, table: np.ndarray, total: int) -> _BurstResult:
    ppb = burst.pulses_per_burst
    start = b * ppb
    n = min(ppb, total - start)
    rng = stream(cfg.seed, "pattern", b)
    if cfg.protocol.pattern == "alternating":
        bits = np.zeros(n, dtype=np.int64)
        bases = np.ones(n, dtype=np.int64)
        classes = (np.arange(start, start + n) % 2).astype(np.int64)
    else:
        bits, bases, classes = protocol.random_pattern_arrays(rng, n, cfg.protocol.decoy_probability)
    states = 2 * bases + bits
    train = devices.emit_train(burst, states, classes, stream(cfg.seed, "emit", b), start)

    rng = stream(cfg.seed, "detect", b)
    u = rng.random((n, len(STATES)))
    clicks = u < table[states, classes]
    rows, dets = np.nonzero(clicks)
    times = [train.emit_time_ns[rows]]
    detectors = [dets.astype(np.int64)]
    index = [train.index[rows]]
    t0 = b * burst.burst_period_ns
    for k in range(len(STATES)):
        dark = link.dark_count_times(cfg.spad.dark_counts_per_s, t0, t0 + burst.burst_period_ns, rng)
        if dark.size:
            slots = link.assign_pulse_slots(
                dark, burst.burst_period_ns, burst.pulse_period_ns, ppb, cfg.receiver.tia_window_ns
            )
            slots[slots >= total] = -1
            times.append(dark)
            detectors.append(np.full(dark.size, k, dtype=np.int64))
            index.append(slots)
    return _BurstResult(
        bits, bases, classes, np.concatenate(times), np.concatenate(detectors), np.concatenate(index)
    )


def _squash(det_of_event: np.ndarray, idx_of_event: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One (pulse index, detector) per clicked pulse; double clicks squashed."""
    order = np.lexsort((det_of_event, idx_of_event))
    idx = idx_of_event[order]
    det = det_of_event[order]
    uniq, first, counts = np.unique(idx, return_index=True, return_counts=True)
    out_det = det[first].copy()
    multi = np.nonzero(counts > 1)[0]
    if multi.size:
        rng = stream(seed, "squash")
        for m in multi:
            recs = [protocol.BobRecord(int(uniq[m]), STATES[d]) for d in det[first[m] : first[m] + counts[m]]]
            (resolved,) = protocol.resolve_double_clicks(recs, rng)
            out_det[m] = STATES.index(resolved.detector)
    return uniq, out_det


def run_session(cfg: ScenarioConfig, workers: int = 1) -> SessionReport:
    try:
        validate(cfg)
        burst = build_burst_config(cfg)
    except (ValueError, ConfigError) as exc:
        raise StageError("transmitter", exc) from exc
    try:
        channel, receiver, spad = build_link(cfg)
        table = click_table(burst, channel, receiver, spad)
    except ValueError as exc:
        raise StageError("link", exc) from exc

    total = cfg.timing.session_pulses
    n_bursts = -(-total // burst.pulses_per_burst)

    def work(b):
        return _run_burst(b, cfg, burst, table, total)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(n_bursts)))
    else:
        results = [work(b) for b in range(n_bursts)]

    bits = np.concatenate([r.bits for r in results])
    bases = np.concatenate([r.bases for r in results])
    classes = np.concatenate([r.classes for r in results])
    times = np.concatenate([r.times for r in results])
    dets = np.concatenate([r.detectors for r in results])
    idx = np.concatenate([r.pulse_index for r in results])

    # single-owner reduction: dead time runs over each detector's full stream
    keep = np.zeros(len(times), dtype=bool)
    for k in range(len(STATES)):
        sel = np.nonzero(dets == k)[0]
        order = sel[np.argsort(times[sel], kind="stable")]
        keep[order] = link.dead_time_mask(times[order], spad.dead_time_ns)
    times, dets, idx = times[keep], dets[keep], idx[keep]

    assigned = idx >= 0
    pulse_ids, bob_det = _squash(dets[assigned], idx[assigned], cfg.seed)
    bob_basis = bob_det // 2
    bob_bit = bob_det % 2
    match = bases[pulse_ids] == bob_basis
    err = match & (bits[pulse_ids] != bob_bit)

    signal_mu, decoy_mu = devices.class_mu(burst)
    # one record per detected pulse after squashing, plus every unassigned (dark) click
    unassigned = int(len(times) - assigned.sum())
    detections = int(len(pulse_ids)) + unassigned
    sifted = int(match.sum())
    errors = int(err.sum())

    n_signal = int(np.count_nonzero(classes == IntensityClass.SIGNAL))
    key_kwargs = {}
    if n_signal < total:
        sig_events = np.count_nonzero(classes[pulse_ids] == IntensityClass.SIGNAL)
        sig_pulse = classes[pulse_ids] == IntensityClass.SIGNAL
        sig_sifted = int((match & sig_pulse).sum())
        key_kwargs = dict(
            key_gain=(sig_events + unassigned * n_signal / total) / max(n_signal, 1),
            key_qber=(int((err & sig_pulse).sum()) / sig_sifted) if sig_sifted else math.nan,
            key_pulse_fraction=n_signal / total,
        )
    stats = protocol.stats_from_counts(
        total,
        detections,
        sifted,
        errors,
        signal_mu,
        burst.effective_pulse_rate,
        cfg.protocol.q,
        cfg.protocol.f,
        **key_kwargs,
    )

    qber_by_basis, sifted_by_basis = {}, {}
    for code, basis in enumerate(protocol.BASES):
        sel = match & (bob_basis == code)
        n = int(sel.sum())
        sifted_by_basis[basis.value] = n
        qber_by_basis[basis.value] = int((err & sel).sum()) / n if n else math.nan

    states = 2 * bases + bits
    state_pulses = {s.value: int(np.count_nonzero(states == i)) for i, s in enumerate(STATES)}
    ev_states = states[pulse_ids]
    state_detections = {s.value: int(np.count_nonzero(ev_states == i)) for i, s in enumerate(STATES)}

    histograms = {}
    local = np.mod(times, burst.burst_period_ns)
    for k, d in enumerate(STATES):
        histograms[d.value] = link.tia_histogram(local[dets == k], HISTOGRAM_BIN_NS, burst.pulse_period_ns)

    return SessionReport(
        stats=stats,
        config=cfg,
        detector_counts={d.value: int(np.count_nonzero(dets == k)) for k, d in enumerate(STATES)},
        qber_by_basis=qber_by_basis,
        sifted_by_basis=sifted_by_basis,
        state_detections=state_detections,
        state_pulses=state_pulses,
        signal_mu=signal_mu,
        decoy_mu=decoy_mu,
        histograms=histograms,
    )


# --------------------------------------------------------------------------
# Calibration and sweeps
# --------------------------------------------------------------------------


def calibrate_misalignment(
    cfg: ScenarioConfig,
    target_qber: float = 0.054,
    tol_rad: float = 1e-4,
    workers: int = 1,
) -> tuple[float, float]:
    """Bisect receiver.misalignment_rad until the fixed-seed session QBER hits the target.

    Returns (angle, achieved QBER).
    """

    def qber_at(angle: float) -> float:
        rep = run_session(with_value(cfg, "receiver.misalignment_rad", angle), workers)
        return rep.stats.qber

    lo, hi = 0.0, math.pi / 4.0
    q_lo = qber_at(lo)
    if q_lo >= target_qber:
        return lo, q_lo
    best = (lo, q_lo)
    while hi - lo > tol_rad:
        mid = 0.5 * (lo + hi)
        q = qber_at(mid)
        log.info("misalignment %.6f rad -> QBER %.5f", mid, q)
        if abs(q - target_qber) < abs(best[1] - target_qber):
            best = (mid, q)
        if q < target_qber:
            lo = mid
        else:
            hi = mid
    return best


def _value_counter(value: float) -> tuple[int, int]:
    bits = struct.unpack("<Q", struct.pack("<d", float(value)))[0]
    return bits >> 32, bits & 0xFFFFFFFF


def sweep_point_seed(cfg: ScenarioConfig, key: str, value: float) -> int:
    """Seed of one sweep point; depends only on (master seed, key, value)."""
    return derive_seed(cfg.seed, "sweep", zlib.crc32(key.encode()), *_value_counter(value))


def sweep_point_config(cfg: ScenarioConfig, key: str, value: float) -> ScenarioConfig:
    out = with_value(cfg, key, value)
    return replace(out, seed=sweep_point_seed(cfg, key, value))


def sweep_scenarios(
    cfg: ScenarioConfig, key: str, values: Sequence[float], workers: int = 1
) -> list[tuple[float, SessionReport]]:
    tp = key_type(key)
    if tp not in (int, float) or key == "seed":
        raise ConfigError(f"{key}: sweeps need a numeric key")
    points = [sweep_point_config(cfg, key, v) for v in values]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_session, points))
    else:
        reports = [run_session(p) for p in points]
    return list(zip(values, reports))


# --------------------------------------------------------------------------
# Two-intensity photon statistics
# --------------------------------------------------------------------------


@dataclass
class IntensityStatistics:
    pulses: dict[str, int]
    mean_photons: dict[str, float]
    histogram: tuple[np.ndarray, np.ndarray]  # folded over one pattern period
    photon_number_counts: dict[str, np.ndarray]  # pulses with n = 0, 1, 2, ... photons


def two_intensity_statistics(cfg: ScenarioConfig, bin_ns: float = 5.0) -> IntensityStatistics:
    """Photon-count histograms of the transmitter output, split by intensity class.

    Every emitted photon is time-tagged at its pulse's (jittered) emission
    time and folded modulo the two-pulse pattern period; class means are the
    photon counts in each class's half of the period over its pulse count.
    """
    burst = build_burst_config(cfg)
    total = cfg.timing.session_pulses
    n_bursts = -(-total // burst.pulses_per_burst)
    period = 2.0 * burst.pulse_period_ns
    times, classes, photons = [], [], []
    for b in range(n_bursts):
        start = b * burst.pulses_per_burst
        n = min(burst.pulses_per_burst, total - start)
        if cfg.protocol.pattern == "alternating":
            bits = np.zeros(n, dtype=np.int64)
            bases = np.ones(n, dtype=np.int64)
            cls = (np.arange(start, start + n) % 2).astype(np.int64)
        else:
            bits, bases, cls = protocol.random_pattern_arrays(
                stream(cfg.seed, "pattern", b), n, cfg.protocol.decoy_probability
            )
        train = devices.emit_train(burst, 2 * bases + bits, cls, stream(cfg.seed, "emit", b), start)
        k = poisson_sample_array(train.mu, stream(cfg.seed, "detect", b))
        times.append(train.emit_time_ns)
        classes.append(cls)
        photons.append(k)
    times = np.concatenate(times)
    classes = np.concatenate(classes)
    photons = np.concatenate(photons)

    # shift by a quarter period so each class's slot sits mid-half, away from the fold edges
    origin = -period / 4.0
    tagged = np.repeat(times, photons)
    bins, counts = link.tia_histogram(tagged, bin_ns, period, origin)
    centers = np.mod(bins + bin_ns / 2.0, period)
    pulses, means, dist = {}, {}, {}
    for cls, name in ((IntensityClass.SIGNAL, "signal"), (IntensityClass.DECOY, "decoy")):
        n_cls = int(np.count_nonzero(classes == cls))
        # signal pulses sit at even slots (phase 0), decoys at odd slots (phase period/2)
        slot = 0.0 if cls == IntensityClass.SIGNAL else period / 2.0
        lo, hi = np.mod(slot - period / 4.0, period), np.mod(slot + period / 4.0, period)
        in_half = (centers >= lo) & (centers < hi) if lo < hi else (centers >= lo) | (centers < hi)
        pulses[name] = n_cls
        means[name] = float(counts[in_half].sum()) / n_cls if n_cls else math.nan
        dist[name] = np.bincount(photons[classes == cls])
    return IntensityStatistics(pulses, means, (bins, counts), dist)
