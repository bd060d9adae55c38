"""Device characterization sweeps, one (x, value) curve per output."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import devices
from ..optics import STATES, linear_to_db, state_to_jones
from .config import ScenarioConfig
from .session import build_polmod, build_ring

AXES = {
    "ring": ("wavelength", "detune", "volts"),
    "voa": ("phase", "target_db"),
    "polmod": ("theta", "delta"),
}


@dataclass(frozen=True)
class CharacterizationSweep:
    device: str
    axis: str
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if self.device not in AXES:
            raise ValueError(f"unknown device {self.device!r}; choose from {', '.join(AXES)}")
        if self.axis not in AXES[self.device]:
            raise ValueError(f"unknown axis {self.axis!r} for {self.device}; choose from {', '.join(AXES[self.device])}")
        if self.steps < 2:
            raise ValueError("a sweep needs at least 2 steps")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)

    @classmethod
    def parse_range(cls, device: str, axis: str, spec: str) -> CharacterizationSweep:
        try:
            a, b, n = spec.split(":")
            return cls(device, axis, float(a), float(b), int(n))
        except ValueError as exc:
            raise ValueError(f"bad range {spec!r}: {exc}") from None


def _ring(sweep: CharacterizationSweep, cfg: ScenarioConfig) -> dict:
    r = build_ring(cfg)
    x = sweep.grid
    if sweep.axis == "wavelength":
        t = devices.ring_spectrum(r, x)
    elif sweep.axis == "detune":
        t = devices.ring_transmission(r, x, 0.0)
    else:
        t = devices.ring_transmission(r, np.zeros_like(x), x)
    t = np.atleast_1d(t)
    return {"transmission_db": [(float(a), linear_to_db(float(b))) for a, b in zip(x, t)]}


def _voa(sweep: CharacterizationSweep, cfg: ScenarioConfig) -> dict:
    maxima = cfg.voa.stage_max_db
    x = sweep.grid
    if sweep.axis == "phase":
        return {
            f"M{i + 1}": [(float(ph), devices.voa_stage_transmission(m, float(ph))) for ph in x]
            for i, m in enumerate(maxima)
        }
    voa = devices.VoaParams(maxima, (0.0,) * len(maxima))
    rows = []
    for target in x:
        phases = devices.voa_solve(voa, float(target))
        rows.append((float(target), devices.voa_total(replace(voa, stage_phase=phases))))
    return {"total": rows}


def _polmod(sweep: CharacterizationSweep, cfg: ScenarioConfig) -> dict:
    base = build_polmod(cfg)
    curves = {s.value: [] for s in STATES}
    curves["total"] = []
    for v in sweep.grid:
        p = replace(base, theta=float(v)) if sweep.axis == "theta" else replace(base, theta=np.pi / 4, delta=float(v))
        out = devices.polmod_state(p)
        for s in STATES:
            # a PBS port transmits the projected power, including the TE/TM loss imbalance
            curves[s.value].append((float(v), abs(state_to_jones(s).inner(out)) ** 2))
        curves["total"].append((float(v), out.power))
    return curves


def run_characterization(sweep: CharacterizationSweep, cfg: ScenarioConfig | None = None) -> dict[str, list[tuple[float, float]]]:
    cfg = cfg or ScenarioConfig()
    return {"ring": _ring, "voa": _voa, "polmod": _polmod}[sweep.device](sweep, cfg)


def minima_positions(rows) -> list[float]:
    """x positions of strict local minima of a sampled curve."""
    x = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    inner = np.nonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:]))[0] + 1
    return [float(x[i]) for i in inner]
