"""Beam-sweep reports, activation history and the agent state vector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RSRP_MIN = -140.0
RSRP_MAX = -44.0
RSRP_SPAN = RSRP_MAX - RSRP_MIN


def clip_and_normalize(raw) -> np.ndarray:
    """Clip raw RSRP (dBm) to the reporting range and map it onto [0, 1]."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("RSRP report contains non-finite values")
    return (np.clip(raw, RSRP_MIN, RSRP_MAX) - RSRP_MIN) / RSRP_SPAN


def re_power_offset_db(n_rb: int) -> float:
    """dB between full-band power and power per resource element (12 subcarriers per RB).

    Reported RSRP is a per-resource-element quantity, so a sweep report is the
    full-band received power minus this offset.
    """
    if n_rb < 1:
        raise ValueError("n_rb must be >= 1")
    return 10.0 * np.log10(12 * n_rb)


@dataclass(frozen=True)
class RsrpReport:
    mt: int
    raw: np.ndarray
    normalized: np.ndarray
    timestamp: int

    @classmethod
    def from_raw(cls, mt: int, raw, timestamp: int) -> "RsrpReport":
        raw = np.asarray(raw, dtype=float)
        return cls(mt, raw, clip_and_normalize(raw), timestamp)


@dataclass
class ActivationHistory:
    """Per-beam count of TTIs in which the beam was scheduled in the current interval."""

    n_beams: int
    ttis_per_interval: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.n_beams, dtype=np.int64)

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.ttis_per_interval

    def reset(self) -> np.ndarray:
        """Start a new interval; returns the normalized history of the closed one."""
        h = self.normalized
        self.counts = np.zeros(self.n_beams, dtype=np.int64)
        return h


def record_activation(history: ActivationHistory, scheduled_beams) -> ActivationHistory:
    beams = np.unique(np.asarray(list(scheduled_beams), dtype=np.int64))
    if beams.size:
        if beams[0] < 0 or beams[-1] >= history.n_beams:
            raise ValueError(f"beam index out of range: {beams}")
        if np.any(history.counts[beams] >= history.ttis_per_interval):
            raise RuntimeError("activation count would exceed the TTIs in one interval")
        history.counts[beams] += 1
    return history


def cumulative_crosscorr(assigned, rho: np.ndarray, n_panels: int) -> np.ndarray:
    """Summed correlation of every candidate beam with the beams already handed out.

    The sum is divided by ``n_panels - 1`` (the most beams that can precede the
    last co-schedulable terminal) and clipped into [0, 1].
    """
    rho = np.asarray(rho)
    assigned = list(assigned)
    if len(set(assigned)) != len(assigned):
        raise ValueError("assigned beams contain duplicates")
    if len(assigned) > max(n_panels - 1, 0):
        raise ValueError(f"at most {n_panels - 1} assigned beams are allowed")
    if not assigned:
        return np.zeros(rho.shape[0])
    c = rho[:, assigned].sum(axis=1) / (n_panels - 1)
    return np.clip(c, 0.0, 1.0)


@dataclass(frozen=True)
class AgentState:
    z: np.ndarray
    h: np.ndarray
    c: np.ndarray
    flattened: np.ndarray


def assemble_state(z, h, c) -> AgentState:
    z, h, c = (np.asarray(v, dtype=float) for v in (z, h, c))
    if not (z.shape == h.shape == c.shape) or z.ndim != 1:
        raise ValueError(f"state blocks must be equal-length vectors, got {z.shape}, {h.shape}, {c.shape}")
    flat = np.concatenate([z, h, c])
    if flat.size and (flat.min() < 0.0 or flat.max() > 1.0):
        raise ValueError("state components must lie in [0, 1]")
    return AgentState(z, h, c, flat)
