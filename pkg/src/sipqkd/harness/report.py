"""Byte-stable text renderings of session reports and curves."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .config import config_items
from .session import SessionReport


def _f(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.6f}"


def _e(x: float) -> str:
    return f"{x:.6e}"


def metrics(r: SessionReport) -> list[tuple[str, str]]:
    s = r.stats
    rows = [
        ("pulses_emitted", str(s.pulses_emitted)),
        ("detections", str(s.detections)),
        ("sifted_bits", str(s.sifted_bits)),
        ("errors", str(s.errors)),
        ("qber", _f(s.qber)),
        ("qber_defined", "true" if s.qber_defined else "false"),
        ("raw_rate_bps", _f(s.raw_rate_bps)),
        ("sifted_rate_bps", _f(s.sifted_rate_bps)),
        ("secret_rate_bps", _f(s.secret_rate_bps)),
        ("mu_effective", _e(s.mu_effective)),
        ("signal_mu", _e(r.signal_mu)),
        ("decoy_mu", _e(r.decoy_mu)),
    ]
    rows += [(f"detections_{k}", str(v)) for k, v in r.detector_counts.items()]
    rows += [(f"qber_{k}", _f(v)) for k, v in r.qber_by_basis.items()]
    rows += [(f"sifted_{k}", str(v)) for k, v in r.sifted_by_basis.items()]
    rows += [(f"state_detections_{k}", str(v)) for k, v in r.state_detections.items()]
    rows += [(f"state_pulses_{k}", str(v)) for k, v in r.state_pulses.items()]
    rows.append(("state_flux_variation_db", _f(r.state_flux_variation_db)))
    return rows


def emit_report(r: SessionReport, format: str = "table") -> str:
    if format == "records":
        lines = [f"{k}={v}" for k, v in metrics(r)]
        lines += [f"config.{k}={v}" for k, v in config_items(r.config)]
        return "\n".join(lines) + "\n"
    if format != "table":
        raise ValueError(f"unknown report format {format!r}")
    rows = metrics(r)
    width = max(len(k) for k, _ in rows)
    lines = ["BB84 session report", "=" * (width + 20)]
    lines += [f"{k.ljust(width)}  {v}" for k, v in rows]
    lines.append("")
    lines.append(f"seed {r.config.seed}")
    return "\n".join(lines) + "\n"


def histogram_csv(bin_start_ns, counts) -> str:
    lines = ["bin_start_ns,count"]
    lines += [f"{b:.3f},{int(c)}" for b, c in zip(np.asarray(bin_start_ns), np.asarray(counts))]
    return "\n".join(lines) + "\n"


def curve_csv(rows) -> str:
    lines = ["x,value"]
    lines += [f"{x!r},{v!r}" for x, v in rows]
    return "\n".join(lines) + "\n"


def write_session_outputs(r: SessionReport, out_dir: str | Path, format: str = "table") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = "metrics.kv" if format == "records" else "report.txt"
    written = [out / name]
    written[0].write_text(emit_report(r, format), encoding="utf-8")
    for det, (bins, counts) in r.histograms.items():
        p = out / f"histogram_{det}.csv"
        p.write_text(histogram_csv(bins, counts), encoding="utf-8")
        written.append(p)
    return written
