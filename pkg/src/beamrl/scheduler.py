"""Per-TTI proportional-fair MU-MIMO scheduling.

The primitive operations (`pf_priority`, `pair_mts`, `sinr_terms`,
`rate_bytes`) are compiled with numba and shared by two drivers:
`run_tti`, a readable single-TTI scheduler over `PacketBuffer` objects, and
`run_interval`, the array kernel the simulator uses for a whole
beam-switching interval. Both make identical decisions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .measurement import record_activation
from .traffic import PacketBuffer, drain

SE_CAP = 7.8
PF_FLOOR = 1e3
REC_COLS = 7  # tti, sector, mt, beam, rbs, sinr_db, bytes


@dataclass
class PfState:
    avg_throughput: np.ndarray
    ema_constant: float = 0.01

    def update(self, served_bits_per_s: np.ndarray) -> None:
        a = self.ema_constant
        self.avg_throughput *= 1.0 - a
        self.avg_throughput += a * served_bits_per_s


@dataclass(frozen=True)
class SinrResult:
    signal: float
    intra_interference: float
    inter_interference: float
    noise: float

    @property
    def sinr(self) -> float:
        den = self.intra_interference + self.inter_interference + self.noise
        return 10 * np.log10(self.signal / den) if self.signal > 0 else -np.inf


@dataclass
class ScheduleDecision:
    tti: int
    per_sector: dict = field(default_factory=dict)  # sector -> [(mt, beam, rbs, sinr_db, bytes)]


@dataclass(frozen=True)
class CellParams:
    """Static numbers the scheduler needs for every TTI."""

    beams_per_panel: int
    n_panels: int
    threshold: float = 0.4
    n_rb: int = 277
    rb_bandwidth: float = 720e3
    tti: float = 0.25e-3
    se_cap: float = SE_CAP
    noise_mw: float = 1e-12
    pf_floor: float = PF_FLOOR
    ema: float = 0.01


@njit(cache=True)
def pf_priority(inst_rate, avg, floor=PF_FLOOR):
    return inst_rate / max(floor, avg)


@njit(cache=True)
def rate_bytes_linear(sinr_lin, rb_count, rb_bandwidth, tti, se_cap=SE_CAP):
    if rb_count <= 0 or not sinr_lin > 0.0:
        return 0
    se = min(np.log2(1.0 + sinr_lin), se_cap)
    return int(np.floor(se * rb_bandwidth * rb_count * tti / 8.0))


@njit(cache=True)
def rate_bytes(sinr_db, rb_count, rb_bandwidth=720e3, tti=0.25e-3, se_cap=SE_CAP):
    if sinr_db == -np.inf:
        return 0
    return rate_bytes_linear(10.0 ** (sinr_db / 10.0), rb_count, rb_bandwidth, tti, se_cap)


@njit(cache=True)
def pair_mts(ranked, beams, rho, threshold, beams_per_panel, max_admit):
    """Greedy pairing in priority order: new panel and correlation <= threshold with all admitted."""
    out = np.empty(max_admit, np.int64)
    n = 0
    for i in range(ranked.size):
        if n == max_admit:
            break
        u = ranked[i]
        b = beams[u]
        ok = True
        for k in range(n):
            bk = beams[out[k]]
            if bk // beams_per_panel == b // beams_per_panel or rho[b, bk] > threshold:
                ok = False
                break
        if ok:
            out[n] = u
            n += 1
    return out[:n]


@njit(cache=True)
def sinr_terms(sig_full, own_beam, co_beams, rho, inter_mw, noise_mw):
    """Signal and interference powers (mW) for one scheduled terminal.

    ``co_beams`` holds every beam co-scheduled in the sector including the
    terminal's own; transmit power is shared equally among them.
    ``inter_mw`` and ``noise_mw`` are taken over the terminal's allocated bandwidth.
    """
    k = co_beams.size
    signal = sig_full / k
    intra = 0.0
    for i in range(k):
        b = co_beams[i]
        if b != own_beam:
            intra += signal * rho[own_beam, b] ** 2
    return signal, intra, inter_mw, noise_mw


@njit(cache=True)
def rb_share(n_rb, n_admitted, i):
    """RBs of the ``i``-th admitted terminal: equal split, leftovers to the highest priorities."""
    return n_rb // n_admitted + (1 if i < n_rb % n_admitted else 0)


@njit(cache=True)
def _inter_mw(u, s, rx_full, last_beams, last_k):
    tot = 0.0
    for s2 in range(last_k.size):
        if s2 == s or last_k[s2] == 0:
            continue
        for i in range(last_k[s2]):
            tot += rx_full[u, s2, last_beams[s2, i]] / last_k[s2]
    return tot


@njit(cache=True)
def run_interval(n_tti, tti0, t_tti, sector_mts, n_in_sector, beams, sig_full, rx_full, rho,
                 threshold, l_p, m_p, noise_mw, n_rb, rb_bw, se_cap, ema, pf_floor,
                 avg, last_beams, last_k,
                 arr_t, offsets, head, head_rem, avail, pkt_size,
                 delivered, sched, backlogged, act, cosched,
                 done_idx, done_tti, n_done, rec, n_rec, record, viol):
    """Schedule ``n_tti`` consecutive TTIs; all state arrays are updated in place.

    Returns the new fill levels ``(n_done, n_rec)`` of the completion and
    schedule-record buffers.
    """
    n_mt = beams.size
    n_sec = sector_mts.shape[0]
    backlog = np.zeros(n_mt, np.int64)
    served = np.zeros(n_mt, np.int64)
    new_beams = np.full((n_sec, m_p), -1, np.int64)
    new_k = np.zeros(n_sec, np.int64)
    for k in range(n_tti):
        g = tti0 + k
        now = g * t_tti
        for u in range(n_mt):
            while avail[u] < offsets[u + 1] and arr_t[avail[u]] < now:
                avail[u] += 1
            if avail[u] > head[u]:
                backlog[u] = head_rem[u] + (avail[u] - head[u] - 1) * pkt_size
                backlogged[u] += 1
            else:
                backlog[u] = 0
            served[u] = 0
        for s in range(n_sec):
            new_k[s] = 0
            n_c = 0
            cands = np.empty(n_in_sector[s], np.int64)
            for i in range(n_in_sector[s]):
                u = sector_mts[s, i]
                if backlog[u] > 0:
                    cands[n_c] = u
                    n_c += 1
            if n_c == 0:
                continue
            cands = cands[:n_c]
            inter = np.empty(n_c)
            pri = np.empty(n_c)
            for i in range(n_c):
                u = cands[i]
                inter[i] = _inter_mw(u, s, rx_full, last_beams, last_k)
                su = sig_full[u] / (noise_mw + inter[i])
                rate = min(np.log2(1.0 + su), se_cap) * n_rb * rb_bw
                pri[i] = pf_priority(rate, avg[u], pf_floor)
            order = np.argsort(-pri, kind="mergesort")
            ranked = cands[order]
            adm = pair_mts(ranked, beams, rho, threshold, l_p, m_p)
            na = adm.size
            cosched[na] += 1
            if na > m_p:
                viol[1] += 1
            co = np.empty(na, np.int64)
            for i in range(na):
                co[i] = beams[adm[i]]
            for i in range(na):
                for j in range(i):
                    if co[i] // l_p == co[j] // l_p:
                        viol[0] += 1
                    if rho[co[i], co[j]] > threshold:
                        viol[2] += 1
            for i in range(na):
                u = adm[i]
                b = co[i]
                iu = 0
                for j in range(n_c):
                    if ranked[j] == u:
                        iu = order[j]
                rbs = rb_share(n_rb, na, i)
                frac = rbs / n_rb
                sig, intra, itf, nz = sinr_terms(sig_full[u], b, co, rho, inter[iu] * frac, noise_mw * frac)
                sinr_lin = sig / (intra + itf + nz)
                cap = rate_bytes_linear(sinr_lin, rbs, rb_bw, t_tti, se_cap)
                x = min(cap, backlog[u])
                served[u] = x
                delivered[u] += x
                sched[u] += 1
                act[s, b] += 1
                left = x
                while left > 0:
                    take = min(head_rem[u], left)
                    head_rem[u] -= take
                    left -= take
                    if head_rem[u] == 0:
                        done_idx[n_done] = head[u]
                        done_tti[n_done] = g
                        n_done += 1
                        head[u] += 1
                        head_rem[u] = pkt_size
                if record:
                    rec[n_rec, 0] = g
                    rec[n_rec, 1] = s
                    rec[n_rec, 2] = u
                    rec[n_rec, 3] = b
                    rec[n_rec, 4] = rbs
                    rec[n_rec, 5] = 10.0 * np.log10(sinr_lin)
                    rec[n_rec, 6] = x
                    n_rec += 1
                new_beams[s, i] = b
            new_k[s] = na
        for s in range(n_sec):
            last_k[s] = new_k[s]
            for i in range(m_p):
                last_beams[s, i] = new_beams[s, i] if i < new_k[s] else -1
        for u in range(n_mt):
            avg[u] = (1.0 - ema) * avg[u] + ema * served[u] * 8.0 / t_tti
    return n_done, n_rec


def compute_sinr(sig_full: float, own_beam: int, co_beams, rho, inter_mw: float, noise_mw: float) -> SinrResult:
    co = np.asarray(co_beams, dtype=np.int64)
    if own_beam not in co:
        co = np.append(co, own_beam)
    return SinrResult(*sinr_terms(float(sig_full), int(own_beam), co, np.asarray(rho, dtype=float),
                                  float(inter_mw), float(noise_mw)))


def inter_interference(u: int, sector: int, rx_full, last_beams, last_k) -> float:
    return float(_inter_mw(u, sector, rx_full, np.asarray(last_beams, np.int64), np.asarray(last_k, np.int64)))


@dataclass
class SectorState:
    """Inputs for :func:`run_tti` that stay fixed within a beam-switching interval."""

    sector_mts: list  # per sector, terminal ids in ascending order
    beams: np.ndarray  # assigned serving beam per terminal (sector-local index)
    sig_full: np.ndarray  # rx power (mW) on the serving beam at full transmit power
    rx_full: np.ndarray  # (U, S, B) rx power (mW) of every beam at full power
    rho: np.ndarray
    last_beams: np.ndarray  # (S, M_p) beams active in the previous TTI, -1 padded
    last_k: np.ndarray  # (S,)


def run_tti(state: SectorState, tti: int, buffers: list[PacketBuffer], pf: PfState, cell: CellParams,
            histories=None):
    """Schedule one TTI over explicit packet buffers.

    Buffers must contain only packets that arrived before the TTI starts.
    Returns the decision and the bytes delivered per terminal.
    """
    n_mt = len(buffers)
    now = tti * cell.tti
    delivered = np.zeros(n_mt, dtype=np.int64)
    records = []
    decision = ScheduleDecision(tti)
    n_sec = len(state.sector_mts)
    new_beams = np.full((n_sec, cell.n_panels), -1, np.int64)
    new_k = np.zeros(n_sec, np.int64)
    for s, mts in enumerate(state.sector_mts):
        cands = [u for u in mts if buffers[u].total_backlog > 0]
        if not cands:
            continue
        inter = {u: inter_interference(u, s, state.rx_full, state.last_beams, state.last_k) for u in cands}
        pri = []
        for u in cands:
            su = state.sig_full[u] / (cell.noise_mw + inter[u])
            rate = min(np.log2(1 + su), cell.se_cap) * cell.n_rb * cell.rb_bandwidth
            pri.append(pf_priority(rate, pf.avg_throughput[u], cell.pf_floor))
        ranked = np.array(sorted(cands, key=lambda u: -pri[cands.index(u)]), dtype=np.int64)
        adm = pair_mts(ranked, state.beams, state.rho, cell.threshold, cell.beams_per_panel, cell.n_panels)
        co = state.beams[adm]
        rows = []
        for i, (u, b) in enumerate(zip(adm, co)):
            rbs = rb_share(cell.n_rb, len(adm), i)
            frac = rbs / cell.n_rb
            res = compute_sinr(state.sig_full[u], b, co, state.rho, inter[u] * frac, cell.noise_mw * frac)
            lin = res.signal / (res.intra_interference + res.inter_interference + res.noise)
            cap = rate_bytes_linear(lin, rbs, cell.rb_bandwidth, cell.tti, cell.se_cap)
            x = min(cap, buffers[u].total_backlog)
            done, _ = drain(buffers[u], x, now)
            records.extend((u, p) for p in done)
            delivered[u] = x
            rows.append((int(u), int(b), rbs, res.sinr, int(x)))
        decision.per_sector[s] = rows
        new_beams[s, :len(co)] = co
        new_k[s] = len(co)
        if histories is not None and len(co):
            record_activation(histories[s], co)
    state.last_beams[...] = new_beams
    state.last_k[...] = new_k
    pf.update(delivered * 8.0 / cell.tti)
    return decision, delivered, records
