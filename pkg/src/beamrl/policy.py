"""Beam assignment at each beam-switching boundary and the per-interval reward."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ddqn import Experience, Mlp
from .measurement import AgentState, RsrpReport, assemble_state, cumulative_crosscorr


@dataclass
class BeamAssignment:
    interval: int
    beams: dict = field(default_factory=dict)  # mt -> sector-local beam index
    policy_tag: str = "baseline"


@dataclass(frozen=True)
class RewardSample:
    mt: int
    delivered_bytes: int
    reward: float


def baseline_select(report: RsrpReport) -> int:
    """Strongest raw RSRP; ``argmax`` already breaks ties towards the lowest index."""
    return int(np.argmax(report.raw))


def rl_select(state: AgentState, qnet: Mlp, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = qnet.forward(state.flattened)
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


class BaselinePolicy:
    tag = "baseline"

    def select(self, state: AgentState, report: RsrpReport) -> int:
        return baseline_select(report)


class QPolicy:
    """Epsilon-greedy over a Q-network; ``epsilon`` is read at every call."""

    def __init__(self, qnet: Mlp, rng: np.random.Generator, epsilon: float = 0.0, tag: str = "rl_eval"):
        self.qnet = qnet
        self.rng = rng
        self.epsilon = epsilon
        self.tag = tag

    def select(self, state: AgentState, report: RsrpReport) -> int:
        return rl_select(state, self.qnet, self.epsilon, self.rng)


def assign_interval(order, reports: dict, histories: dict, sector_of, rho: np.ndarray, n_panels: int,
                    policy, interval: int = 0):
    """Sequential per-sector assignment in scheduling-priority order.

    ``order`` lists terminal ids from highest to lowest priority; ``histories``
    maps sector -> normalized activation vector of the last interval. Each
    terminal sees the correlation of every candidate with the most recent
    ``n_panels - 1`` distinct beams already handed to higher-priority
    terminals of its sector.

    Returns the assignment and a list of ``(mt, state, action)``.
    """
    out = BeamAssignment(interval, policy_tag=policy.tag)
    taken: dict[int, list[int]] = {}
    log = []
    for u in order:
        s = sector_of[u]
        recent = taken.setdefault(s, [])
        c = cumulative_crosscorr(recent, rho, n_panels)
        state = assemble_state(reports[u].normalized, histories[s], c)
        b = policy.select(state, reports[u])
        out.beams[u] = b
        log.append((u, state, b))
        if b in recent:
            recent.remove(b)
        recent.append(b)
        if len(recent) > n_panels - 1:
            del recent[0]
    return out, log


def compute_rewards(delivered: dict, groups=None) -> list[RewardSample]:
    """Bytes delivered over the interval divided by the best terminal of its pool.

    ``groups`` maps pool id -> terminal ids; one pool of everybody when omitted.
    A pool in which nobody received anything yields zero rewards.
    """
    if groups is None:
        groups = {0: list(delivered)}
    out = []
    for members in groups.values():
        peak = max((delivered[u] for u in members), default=0)
        for u in members:
            r = delivered[u] / peak if peak > 0 else 0.0
            out.append(RewardSample(u, int(delivered[u]), float(r)))
    return sorted(out, key=lambda x: x.mt)


def close_transitions(prev_log, rewards, next_states: dict | None, done: bool = False) -> list[Experience]:
    """Pair last interval's (state, action) with its reward and the terminal's next state."""
    rmap = {x.mt: x.reward for x in rewards}
    out = []
    for u, state, a in prev_log:
        if u not in rmap:
            raise ValueError(f"no reward for terminal {u}")
        if done:
            s2 = state.flattened
        else:
            if next_states is None or u not in next_states:
                raise ValueError(f"no next state for terminal {u}")
            s2 = next_states[u].flattened
        out.append(Experience(state.flattened, a, rmap[u], s2, done))
    return out
