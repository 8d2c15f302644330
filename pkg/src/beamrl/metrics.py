"""Run-level metrics, run comparison and file output."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .traffic import LatencyStats


class GeoMean(NamedTuple):
    value: float
    excluded: int


def geometric_mean(values) -> GeoMean | None:
    """GM over the non-zero entries; ``None`` when every entry is zero."""
    x = np.asarray(values, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("geometric mean needs non-negative values")
    nz = x[x > 0]
    if nz.size == 0:
        return None
    return GeoMean(float(np.exp(np.mean(np.log(nz)))), int(x.size - nz.size))


def throughputs(delivered_bytes, active_ttis, scheduled_ttis, tti: float):
    """Per-terminal (overall, effective) throughput in bit/s.

    Overall divides by the time the terminal had data waiting, effective by
    the time it was scheduled. Effective is NaN for a terminal that was never
    scheduled; overall is 0 when nothing was delivered.
    """
    bits = 8.0 * np.asarray(delivered_bytes, dtype=float)
    act = np.asarray(active_ttis, dtype=float) * tti
    sch = np.asarray(scheduled_ttis, dtype=float) * tti
    with np.errstate(divide="ignore", invalid="ignore"):
        overall = np.where(act > 0, bits / np.where(act > 0, act, 1.0), 0.0)
        effective = np.where(sch > 0, bits / np.where(sch > 0, sch, 1.0), np.nan)
    return overall, effective


@dataclass
class MetricsReport:
    mode: str
    seed: int
    duration_s: float
    tti_s: float
    overall_bps: np.ndarray
    effective_bps: np.ndarray
    mean_latency_s: np.ndarray
    p95_latency_s: np.ndarray
    scheduled_ttis: np.ndarray
    active_ttis: np.ndarray
    delivered_bytes: np.ndarray
    generated_bytes: np.ndarray
    backlog_bytes: np.ndarray
    gm_overall: GeoMean | None
    gm_effective: GeoMean | None
    latency: LatencyStats | None
    latency_exact: bool
    cosched_counts: np.ndarray  # index k -> number of sector-TTIs with k co-scheduled terminals
    ts_t: np.ndarray
    ts_thpt_bps: np.ndarray
    ts_epsilon: np.ndarray
    beam_log: np.ndarray  # (intervals, U)
    violations: dict
    rewards: dict
    scheduler_bytes: int
    train_log: dict = field(default_factory=dict)

    @property
    def cosched_cdf(self) -> np.ndarray:
        c = self.cosched_counts[1:].astype(float)
        tot = c.sum()
        return np.cumsum(c) / tot if tot else np.zeros_like(c)

    @property
    def mean_coscheduled(self) -> float:
        c = self.cosched_counts
        k = np.arange(len(c))
        return float((k * c).sum() / max(c[1:].sum(), 1))


def compare(baseline: MetricsReport, candidate: MetricsReport) -> dict:
    """Relative GM throughput gains (%) and latency improvement factors (baseline / candidate)."""

    def gain(a, b):
        if a is None or b is None:
            return None
        return 100.0 * (b.value / a.value - 1.0)

    def factor(a, b):
        if a is None or b is None or b <= 0:
            return None
        return a / b

    bl, cl = baseline.latency, candidate.latency
    return {
        "gm_overall_gain_pct": gain(baseline.gm_overall, candidate.gm_overall),
        "gm_effective_gain_pct": gain(baseline.gm_effective, candidate.gm_effective),
        "latency_mean_factor": factor(bl.mean if bl else None, cl.mean if cl else None),
        "latency_p95_factor": factor(bl.p95 if bl else None, cl.p95 if cl else None),
    }


def _g(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.6g}"


def write_per_mt(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mt_id", "overall_mbps", "effective_mbps", "mean_latency_ms", "p95_latency_ms", "scheduled_ttis"])
        for u in range(len(report.overall_bps)):
            w.writerow([u, _g(report.overall_bps[u] / 1e6), _g(report.effective_bps[u] / 1e6),
                        _g(report.mean_latency_s[u] * 1e3), _g(report.p95_latency_s[u] * 1e3),
                        int(report.scheduled_ttis[u])])


def write_timeseries(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "avg_mt_thpt_mbps", "epsilon"])
        for t, v, e in zip(report.ts_t, report.ts_thpt_bps, report.ts_epsilon):
            w.writerow([_g(t), _g(v / 1e6), _g(e)])


def write_cosched_cdf(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "cdf"])
        for k, v in enumerate(report.cosched_cdf, 1):
            w.writerow([k, _g(v)])


def write_train_log(report: MetricsReport, path) -> None:
    log = report.train_log
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "epsilon", "replay_size"])
        for row in zip(log.get("step", []), log.get("loss", []), log.get("epsilon", []), log.get("replay_size", [])):
            w.writerow([int(row[0]), _g(row[1]), _g(row[2]), int(row[3])])


def summary_lines(report: MetricsReport, gains: dict | None = None) -> list[str]:
    lines = [f"mode {report.mode}", f"seed {report.seed}", f"duration_s {_g(report.duration_s)}"]
    for name, gm in (("gm_overall_mbps", report.gm_overall), ("gm_effective_mbps", report.gm_effective)):
        lines.append(f"{name} {_g(gm.value / 1e6) if gm else 'nan'}")
        lines.append(f"{name}_excluded {gm.excluded if gm else report.overall_bps.size}")
    lat = report.latency
    for k in ("mean", "p50", "p95", "p99"):
        lines.append(f"latency_{k}_ms {_g(getattr(lat, k) * 1e3) if lat else 'nan'}")
    lines.append(f"latency_exact {int(report.latency_exact)}")
    lines.append(f"mean_coscheduled {_g(report.mean_coscheduled)}")
    for k, v in report.violations.items():
        lines.append(f"violations_{k} {v}")
    if gains:
        for k, v in gains.items():
            lines.append(f"{k} {_g(v)}")
    return lines


def write_summary(report: MetricsReport, path, gains: dict | None = None) -> None:
    Path(path).write_text("\n".join(summary_lines(report, gains)) + "\n")


def read_per_mt(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition(" ")
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out
