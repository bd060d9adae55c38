"""Scenario configuration: a flat ``section.key = value`` text format.

Blank lines and ``#`` comments are ignored. Lists are comma separated,
``inf`` is accepted for floats. Every key has a default, so an empty file
yields the demo scenario.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from ..devices import ConfigError
from ..seeding import MAX_SEED


@dataclass(frozen=True)
class TransmitterSection:
    mode: str = "direct"  # direct: target_mu at Alice's output; chain: derived from source_mu
    target_mu: float = 0.024
    source_mu: float = 38.04
    carver: str = "external"  # external | ring
    external_er_db: float = 30.0
    ring_drive_volts: float = 0.05
    ring_dynamic_er_db: float = 20.0
    voa_target_db: float = 27.0
    alice_output_loss_db: float = 5.0


@dataclass(frozen=True)
class RingSection:
    fsr_nm: float = 0.65
    q_loaded: float = 9.5e5
    center_wavelength_nm: float = 1549.9
    floor_db: float = -27.0
    insertion_loss_db: float = 0.0
    # the phase slope is calibrated so static_er_volts gives static_er_db
    static_er_db: float = 25.6
    static_er_volts: float = 0.05


@dataclass(frozen=True)
class VoaSection:
    stage_max_db: tuple[float, ...] = (40.3, 44.0, 53.3, 46.4)


@dataclass(frozen=True)
class PolModSection:
    power_variation_db: float = 0.9  # calibrated into the TE/TM differential loss
    per_floor_db: float = 30.0


@dataclass(frozen=True)
class PulseSection:
    drive_width_ns: float = 1.0
    fwhm_ns: float = 2.4
    jitter_fwhm_ns: float = 0.9


@dataclass(frozen=True)
class ChannelSection:
    loss_db: float = 6.1
    length_km: float = 5.0


@dataclass(frozen=True)
class ReceiverSection:
    tbs_split: float = 0.5
    pbs_extinction_db: float = 30.0
    misalignment_rad: float = 0.0
    tia_window_ns: float = 2.0


@dataclass(frozen=True)
class SpadSection:
    efficiency: float = 0.2
    dead_time_us: float = 15.0
    dark_counts_per_s: float = 500.0


@dataclass(frozen=True)
class ProtocolSection:
    q: float = 0.5
    f: float = 1.0
    decoy_probability: float = 0.0
    decoy_mu_ratio: float = 0.009 / 0.129
    pattern: str = "random"  # random | alternating


@dataclass(frozen=True)
class TimingSection:
    pulses_per_burst: int = 1000
    burst_clock_hz: float = 9.71e3
    rep_rate_hz: float = 10e6
    session_pulses: int = 10_000_000


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    transmitter: TransmitterSection = field(default_factory=TransmitterSection)
    ring: RingSection = field(default_factory=RingSection)
    voa: VoaSection = field(default_factory=VoaSection)
    polmod: PolModSection = field(default_factory=PolModSection)
    pulse: PulseSection = field(default_factory=PulseSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    receiver: ReceiverSection = field(default_factory=ReceiverSection)
    spad: SpadSection = field(default_factory=SpadSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    timing: TimingSection = field(default_factory=TimingSection)


SECTIONS = [f.name for f in fields(ScenarioConfig) if f.name != "seed"]

_CHOICES = {
    "transmitter.mode": ("direct", "chain"),
    "transmitter.carver": ("external", "ring"),
    "protocol.pattern": ("random", "alternating"),
}

# inclusive (lo, hi) bounds; None leaves a side open
_RANGES = {
    "transmitter.target_mu": (0.0, None),
    "transmitter.source_mu": (0.0, None),
    "transmitter.external_er_db": (0.0, None),
    "transmitter.ring_dynamic_er_db": (0.0, None),
    "transmitter.voa_target_db": (0.0, None),
    "transmitter.alice_output_loss_db": (0.0, None),
    "ring.fsr_nm": (1e-12, None),
    "ring.q_loaded": (1e-12, None),
    "ring.floor_db": (None, -20.0),
    "ring.insertion_loss_db": (0.0, None),
    "polmod.power_variation_db": (0.0, None),
    "polmod.per_floor_db": (30.0, None),
    "pulse.drive_width_ns": (1e-12, None),
    "pulse.fwhm_ns": (1e-12, None),
    "pulse.jitter_fwhm_ns": (0.0, None),
    "channel.loss_db": (0.0, None),
    "channel.length_km": (0.0, None),
    "receiver.tbs_split": (0.0, 1.0),
    "receiver.pbs_extinction_db": (0.0, None),
    "receiver.tia_window_ns": (0.0, None),
    "spad.efficiency": (0.0, 1.0),
    "spad.dead_time_us": (0.0, None),
    "spad.dark_counts_per_s": (0.0, None),
    "protocol.q": (1e-12, 1.0),
    "protocol.f": (1.0, None),
    "protocol.decoy_probability": (0.0, 1.0),
    "protocol.decoy_mu_ratio": (0.0, 1.0),
    "timing.pulses_per_burst": (1, None),
    "timing.burst_clock_hz": (1e-12, None),
    "timing.rep_rate_hz": (1e-12, None),
    "timing.session_pulses": (10_000, None),
}


def _section_types(section_cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(section_cls)


def key_paths() -> list[str]:
    out = ["seed"]
    for name in SECTIONS:
        cls = _section_types(ScenarioConfig)[name]
        out.extend(f"{name}.{f.name}" for f in fields(cls))
    return out


def key_type(path: str):
    if path == "seed":
        return int
    section, _, key = path.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"{path}: unknown section {section!r}")
    types = _section_types(_section_types(ScenarioConfig)[section])
    if key not in types:
        raise ConfigError(f"{path}: unknown key")
    return types[key]


def _parse_value(path: str, raw: str):
    tp = key_type(path)
    try:
        if tp is int:
            return int(raw, 0)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if typing.get_origin(tp) is tuple:
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{path}: cannot read {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{path}: unsupported type {tp}")


def get_value(cfg: ScenarioConfig, path: str):
    if path == "seed":
        return cfg.seed
    section, _, key = path.partition(".")
    key_type(path)
    return getattr(getattr(cfg, section), key)


def with_value(cfg: ScenarioConfig, path: str, value) -> ScenarioConfig:
    """Copy of `cfg` with one key replaced, validated."""
    tp = key_type(path)
    if isinstance(value, str) and tp is not str:
        value = _parse_value(path, value)
    elif tp is int:
        if float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        value = int(value)
    elif tp is float:
        value = float(value)
    if path == "seed":
        out = replace(cfg, seed=value)
    else:
        section, _, key = path.partition(".")
        out = replace(cfg, **{section: replace(getattr(cfg, section), **{key: value})})
    validate(out)
    return out


def validate(cfg: ScenarioConfig) -> None:
    if not 0 <= cfg.seed <= MAX_SEED:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {cfg.seed}")
    for path, choices in _CHOICES.items():
        v = get_value(cfg, path)
        if v not in choices:
            raise ConfigError(f"{path}: must be one of {', '.join(choices)}, got {v!r}")
    for path, (lo, hi) in _RANGES.items():
        v = get_value(cfg, path)
        if isinstance(v, float) and math.isnan(v):
            raise ConfigError(f"{path}: NaN is not allowed")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            lo_s = "-inf" if lo is None else f"{lo:g}"
            hi_s = "inf" if hi is None else f"{hi:g}"
            raise ConfigError(f"{path}: must lie in [{lo_s}, {hi_s}], got {v!r}")
    if len(cfg.voa.stage_max_db) == 0:
        raise ConfigError("voa.stage_max_db: needs at least one stage")
    for m in cfg.voa.stage_max_db:
        if m < 40.0:
            raise ConfigError(f"voa.stage_max_db: each stage must reach >= 40 dB, got {m:g}")
    if cfg.transmitter.mode == "chain" and cfg.transmitter.voa_target_db > sum(cfg.voa.stage_max_db):
        raise ConfigError("transmitter.voa_target_db: exceeds the VOA's total range")
    if cfg.pulse.fwhm_ns < cfg.pulse.drive_width_ns:
        raise ConfigError("pulse.fwhm_ns: must be >= pulse.drive_width_ns")
    t = cfg.timing
    if t.pulses_per_burst / t.rep_rate_hz > 1.0 / t.burst_clock_hz * (1 + 1e-12):
        raise ConfigError("timing.pulses_per_burst: burst is longer than the burst clock period")


def parse_config(text: str) -> ScenarioConfig:
    values: dict[str, typing.Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        path, _, raw = (s.strip() for s in line.partition("="))
        if path in values:
            raise ConfigError(f"{path}: given twice (line {lineno})")
        values[path] = _parse_value(path, raw)
    sections: dict[str, dict] = {name: {} for name in SECTIONS}
    seed = values.pop("seed", ScenarioConfig.seed)
    for path, v in values.items():
        section, _, key = path.partition(".")
        sections[section][key] = v
    hints = _section_types(ScenarioConfig)
    try:
        cfg = ScenarioConfig(seed=seed, **{name: hints[name](**kv) for name, kv in sections.items()})
    except TypeError as exc:  # pragma: no cover - key_type already rejects unknown keys
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ScenarioConfig, header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" if h else "#" for h in header.splitlines())
        lines.append("")
    lines.append(f"seed = {cfg.seed}")
    for name in SECTIONS:
        lines.append("")
        lines.append(f"# {name}")
        section = getattr(cfg, name)
        for f in fields(section):
            lines.append(f"{name}.{f.name} = {_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def config_items(cfg: ScenarioConfig) -> list[tuple[str, str]]:
    return [(p, _format_value(get_value(cfg, p))) for p in key_paths()]


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


PRESET_NAMES = ("demo", "device_chain", "ideal", "two_intensity_ring", "two_intensity_chain")


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}")
    return resources.files("sipqkd.presets").joinpath(f"{name}.cfg").read_text(encoding="utf-8")


def load_preset(name: str) -> ScenarioConfig:
    return parse_config(preset_text(name))


def as_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)
